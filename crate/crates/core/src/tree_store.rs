//! Growable binary tree storage.
//!
//! Nodes live in one contiguous `Vec` and are addressed by [`NodeId`]. Ids are
//! never reused: trees only grow. Left child = cell `{x : x_j ≤ s}`, right
//! child = `{x : x_j > s}`.

use crate::error::{AmfError, Result};
use crate::forecasters::{NodeStats, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// Axis-aligned split: `x[dim] <= threshold` goes left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub dim: usize,
    pub threshold: f64,
}

impl Split {
    pub fn side_of(&self, x: &[f64]) -> Side {
        if x[self.dim] <= self.threshold {
            Side::Left
        } else {
            Side::Right
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub split: Split,
    pub left: NodeId,
    pub right: NodeId,
}

impl Branch {
    pub fn child(&self, side: Side) -> NodeId {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub parent: Option<NodeId>,
    /// Present iff the node is internal.
    pub branch: Option<Branch>,
    pub birth: f64,
    /// Componentwise range of the points seen in the node. Empty (`+∞`, `−∞`) before the first one.
    pub range_low: Vec<f64>,
    pub range_high: Vec<f64>,
    /// `−η · L_b`, the log of the node weight.
    pub log_weight: f64,
    /// Log of the averaged weight over all subtrees rooted here.
    pub log_avg_weight: f64,
    pub stats: NodeStats,
    /// Stored sample point, only used by the unrestricted partition.
    pub point: Option<Vec<f64>>,
}

impl NodeRecord {
    fn fresh(dim: usize, task: &Task, parent: Option<NodeId>, birth: f64) -> Self {
        NodeRecord {
            parent,
            branch: None,
            birth,
            range_low: vec![f64::INFINITY; dim],
            range_high: vec![f64::NEG_INFINITY; dim],
            log_weight: 0.0,
            log_avg_weight: 0.0,
            stats: task.empty_stats(),
            point: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.branch.is_none()
    }

    pub fn sample_count(&self) -> u64 {
        self.stats.count()
    }

    pub fn has_range(&self) -> bool {
        self.range_low.first().is_some_and(|l| l.is_finite())
    }

    pub fn extend_range(&mut self, x: &[f64]) {
        for ((lo, hi), &v) in self.range_low.iter_mut().zip(self.range_high.iter_mut()).zip(x) {
            *lo = lo.min(v);
            *hi = hi.max(v);
        }
    }

    pub fn range_contains(&self, x: &[f64]) -> bool {
        self.range_low
            .iter()
            .zip(&self.range_high)
            .zip(x)
            .all(|((lo, hi), v)| lo <= v && v <= hi)
    }
}

/// One randomized tree partition with per-node aggregation state.
#[derive(Debug, Clone, PartialEq)]
pub struct MondrianTree {
    nodes: Vec<NodeRecord>,
    root: NodeId,
    dim: usize,
    task: Task,
}

impl MondrianTree {
    /// Single empty root leaf with birth time 0 and unit weights.
    pub fn new(dim: usize, task: Task) -> Result<Self> {
        if dim == 0 {
            return Err(AmfError::ZeroDimension);
        }
        task.validate()?;
        Ok(MondrianTree {
            nodes: vec![NodeRecord::fresh(dim, &task, None, 0.0)],
            root: NodeId(0),
            dim,
            task,
        })
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &NodeRecord {
        &self.nodes[id.0]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut NodeRecord {
        &mut self.nodes[id.0]
    }

    pub fn get(&self, id: NodeId) -> Option<&NodeRecord> {
        self.nodes.get(id.0)
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(AmfError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(AmfError::NonFinite);
        }
        Ok(())
    }

    pub(crate) fn push(&mut self, record: NodeRecord) -> NodeId {
        self.nodes.push(record);
        NodeId(self.nodes.len() - 1)
    }

    pub(crate) fn fresh_record(&self, parent: Option<NodeId>, birth: f64) -> NodeRecord {
        NodeRecord::fresh(self.dim, &self.task, parent, birth)
    }

    /// Leaf whose cell contains `x`, ties `x_j = s` going left.
    pub fn leaf_containing(&self, x: &[f64]) -> NodeId {
        let mut id = self.root;
        while let Some(b) = &self.node(id).branch {
            id = b.child(b.split.side_of(x));
        }
        id
    }

    /// Root-to-leaf path of `x`, root first.
    pub fn path_to(&self, x: &[f64]) -> Vec<NodeId> {
        let mut id = self.root;
        let mut path = vec![id];
        while let Some(b) = &self.node(id).branch {
            id = b.child(b.split.side_of(x));
            path.push(id);
        }
        path
    }

    pub fn depth_of(&self, id: NodeId) -> usize {
        let mut depth = 0;
        let mut cur = id;
        while let Some(p) = self.node(cur).parent {
            depth += 1;
            cur = p;
        }
        depth
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn internal_count(&self) -> usize {
        self.nodes.len() - self.leaf_count()
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.ids().filter(|&id| self.node(id).is_leaf())
    }

    /// Birth time of the children of an internal node (both children share it).
    pub fn split_time(&self, id: NodeId) -> Option<f64> {
        self.node(id).branch.as_ref().map(|b| self.node(b.left).birth)
    }

    /// Inserts a new internal node in place of `node`.
    ///
    /// The new internal node takes over `node`'s position, birth time, range,
    /// weights and statistics, and carries `split`. `node` (with the subtree
    /// below it) becomes its `side.other()` child and a fresh leaf its `side`
    /// child; both children are born at `new_birth`.
    pub fn insert_internal_above(
        &mut self,
        node: NodeId,
        split: Split,
        new_birth: f64,
        side: Side,
    ) -> Result<(NodeId, NodeId)> {
        let record = self.get(node).ok_or(AmfError::DetachedNode(node))?;
        match record.parent {
            None if node != self.root => return Err(AmfError::DetachedNode(node)),
            Some(p) => {
                let linked = self.node(p).branch.as_ref().is_some_and(|b| b.left == node || b.right == node);
                if !linked {
                    return Err(AmfError::DetachedNode(node));
                }
            }
            None => {}
        }
        if split.dim >= self.dim || !split.threshold.is_finite() {
            return Err(AmfError::InvalidParameter {
                name: "split",
                reason: format!("{split:?} is not valid in dimension {}", self.dim),
            });
        }
        let too_late = self.split_time(node).is_some_and(|t| new_birth >= t);
        if !(new_birth > record.birth) || too_late {
            return Err(AmfError::BirthOrder { node, birth: new_birth });
        }

        let parent = record.parent;
        let mut internal = record.clone();
        internal.point = None;
        let internal_id = NodeId(self.nodes.len());
        let leaf_id = NodeId(self.nodes.len() + 1);
        let (left, right) = match side {
            Side::Left => (leaf_id, node),
            Side::Right => (node, leaf_id),
        };
        internal.branch = Some(Branch { split, left, right });
        let leaf = self.fresh_record(Some(internal_id), new_birth);
        self.nodes.push(internal);
        self.nodes.push(leaf);

        let displaced = self.node_mut(node);
        displaced.parent = Some(internal_id);
        displaced.birth = new_birth;

        match parent {
            None => self.root = internal_id,
            Some(p) => {
                let b = self.node_mut(p).branch.as_mut().expect("parent is internal");
                if b.left == node {
                    b.left = internal_id;
                } else {
                    b.right = internal_id;
                }
            }
        }
        Ok((internal_id, leaf_id))
    }

    /// Structural consistency check used by tests and debug assertions.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let root = self.node(self.root);
        if root.parent.is_some() {
            return Err("root has a parent".into());
        }
        let mut roots = 0;
        for id in self.ids() {
            let n = self.node(id);
            match n.parent {
                None => roots += 1,
                Some(p) => {
                    let pb = self.node(p).branch.as_ref().ok_or(format!("parent of {id:?} is a leaf"))?;
                    if pb.left != id && pb.right != id {
                        return Err(format!("parent of {id:?} does not link back"));
                    }
                    if n.birth <= self.node(p).birth {
                        return Err(format!("birth of {id:?} not after its parent"));
                    }
                }
            }
            if let Some(b) = &n.branch {
                if self.node(b.left).parent != Some(id) || self.node(b.right).parent != Some(id) {
                    return Err(format!("children of {id:?} do not point back"));
                }
                if self.node(b.left).birth != self.node(b.right).birth {
                    return Err(format!("children of {id:?} have different births"));
                }
                if n.log_avg_weight < n.log_weight - std::f64::consts::LN_2 - 1e-9 {
                    return Err(format!("averaged weight of {id:?} below half its weight"));
                }
            } else if n.log_avg_weight != n.log_weight {
                return Err(format!("leaf {id:?} has averaged weight != weight"));
            }
            if n.sample_count() >= 1 && !n.range_low.iter().zip(&n.range_high).all(|(l, h)| l <= h) {
                return Err(format!("range of {id:?} is inverted"));
            }
        }
        if roots != 1 {
            return Err(format!("{roots} parentless nodes"));
        }
        if self.internal_count() + 1 != self.leaf_count() {
            return Err("tree is not strictly binary".into());
        }
        Ok(())
    }
}
