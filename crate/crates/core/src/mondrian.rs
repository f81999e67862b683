//! Mondrian partition machinery.
//!
//! Three ways of growing a [`MondrianTree`]:
//!
//! * [`sample_mondrian_pruned`]: the batch Mondrian process on a box, stopped
//!   at time `λ` (time pruning).
//! * [`extend_unrestricted`]: the minimal Mondrian partition of `[0, 1]^d`
//!   separating all distinct points, splitting full cells until the new point
//!   is isolated.
//! * [`node_update_restricted`]: the range-restricted online extension. Splits
//!   are only drawn inside the extension of a node's range box, and may insert
//!   a node above an existing subtree.
//!
//! The `plan_*` functions replay the sampling guard of the online extensions
//! without touching the tree; predictions use them to locate a temporary leaf.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AmfError, Result};
use crate::forecasters::Task;
use crate::tree_store::{MondrianTree, NodeId, NodeRecord, Side, Split};

/// Seeded random stream; identical `(seed, stream)` and call sequence give identical draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { rng }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_between(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// `Exp(rate)` by inverse CDF; `+∞` when `rate == 0`.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        if rate <= 0.0 {
            return f64::INFINITY;
        }
        // 1 - U lies in (0, 1], so the log is finite.
        -(1.0 - self.uniform()).ln() / rate
    }

    /// Index drawn with probability proportional to `weights`.
    pub fn weighted_index(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let target = self.uniform() * total;
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            last = i;
            if target < acc {
                return i;
            }
        }
        last
    }

    pub(crate) fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Axis-aligned box `Π_j [low_j, high_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellBox {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl CellBox {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.is_empty() {
            return Err(AmfError::ZeroDimension);
        }
        if low.len() != high.len() {
            return Err(AmfError::DimensionMismatch { expected: low.len(), got: high.len() });
        }
        if low.iter().zip(&high).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(AmfError::InvalidParameter {
                name: "box",
                reason: "bounds must be finite with low <= high".into(),
            });
        }
        Ok(CellBox { low, high })
    }

    pub fn unit(dim: usize) -> Self {
        CellBox { low: vec![0.0; dim], high: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn side_lengths(&self) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| h - l).collect()
    }

    /// Linear dimension `Σ_j (high_j − low_j)`.
    pub fn linear_dim(&self) -> f64 {
        self.side_lengths().iter().sum()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.low.iter().zip(&self.high).zip(x).all(|((l, h), v)| l <= v && v <= h)
    }

    /// Restriction to one side of a split.
    pub fn restrict(&self, split: &Split, side: Side) -> CellBox {
        let mut cell = self.clone();
        match side {
            Side::Left => cell.high[split.dim] = cell.high[split.dim].min(split.threshold),
            Side::Right => cell.low[split.dim] = cell.low[split.dim].max(split.threshold),
        }
        cell
    }

    /// Draws a Mondrian split of the box: dimension proportional to side length, threshold uniform.
    pub fn sample_split(&self, rng: &mut RngStream) -> Split {
        let sides = self.side_lengths();
        let dim = rng.weighted_index(&sides);
        let threshold = rng.uniform_between(self.low[dim], self.high[dim]);
        Split { dim, threshold }
    }
}

/// Batch Mondrian process on `cell` pruned at time `lambda`.
///
/// Node ranges of the returned tree hold the node cells.
pub fn sample_mondrian_pruned(
    cell: &CellBox,
    lambda: f64,
    task: Task,
    rng: &mut RngStream,
) -> Result<MondrianTree> {
    if !(lambda > 0.0) {
        return Err(AmfError::InvalidParameter {
            name: "lambda",
            reason: format!("must be > 0, got {lambda}"),
        });
    }
    let mut tree = MondrianTree::new(cell.dim(), task)?;
    let root = tree.root();
    set_range(tree.node_mut(root), cell);

    // Depth-first: left subtree fully sampled before the right one.
    let mut stack = vec![(root, cell.clone())];
    while let Some((id, c)) = stack.pop() {
        let birth = tree.node(id).birth;
        let e = rng.exponential(c.linear_dim());
        if birth + e > lambda {
            continue;
        }
        let split = c.sample_split(rng);
        let split_time = birth + e;
        let mut internal = tree.node(id).clone();
        let left = tree.fresh_record(Some(id), split_time);
        let right = tree.fresh_record(Some(id), split_time);
        let left_id = tree.push(left);
        let right_id = tree.push(right);
        internal.branch = Some(crate::tree_store::Branch { split, left: left_id, right: right_id });
        *tree.node_mut(id) = internal;
        let lc = c.restrict(&split, Side::Left);
        let rc = c.restrict(&split, Side::Right);
        set_range(tree.node_mut(left_id), &lc);
        set_range(tree.node_mut(right_id), &rc);
        stack.push((right_id, rc));
        stack.push((left_id, lc));
    }
    Ok(tree)
}

fn set_range(node: &mut NodeRecord, cell: &CellBox) {
    node.range_low.clone_from(&cell.low);
    node.range_high.clone_from(&cell.high);
}

/// Outcome of one structural update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extension {
    /// Leaf that now holds the point.
    pub leaf: NodeId,
    /// Pre-existing nodes examined on the way down.
    pub visited: usize,
    /// Nodes allocated by the update.
    pub created: usize,
}

/// Temporary split that a prediction would perform, described without mutating the tree.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualSplit {
    /// Node whose record the virtual internal node(s) copy.
    pub host: NodeId,
    pub birth: f64,
    pub split: Split,
    /// Side of the virtual fresh leaf holding the query point.
    pub side: Side,
    /// Number of virtual internal nodes stacked on the path (1 for the restricted partition).
    pub chain: usize,
}

fn bitwise_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(u, v)| u.to_bits() == v.to_bits())
}

/// Cell of a node in the unrestricted partition of `[0, 1]^d`.
fn unit_cell_of(tree: &MondrianTree, node: NodeId) -> CellBox {
    let mut chain = vec![node];
    let mut cur = node;
    while let Some(p) = tree.node(cur).parent {
        chain.push(p);
        cur = p;
    }
    let mut cell = CellBox::unit(tree.dim());
    for pair in chain.windows(2).rev() {
        let (child, parent) = (pair[0], pair[1]);
        let b = tree.node(parent).branch.as_ref().expect("parent is internal");
        let side = if b.left == child { Side::Left } else { Side::Right };
        cell = cell.restrict(&b.split, side);
    }
    cell
}

fn check_unit(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| (0.0..=1.0).contains(v)) {
        Ok(())
    } else {
        Err(AmfError::OutsideUnitBox)
    }
}

/// Unrestricted partition update: split the leaf of `x` until `x` is separated
/// from the point stored there, then store `x`.
pub fn extend_unrestricted(tree: &mut MondrianTree, x: &[f64], rng: &mut RngStream) -> Result<Extension> {
    tree.check_point(x)?;
    check_unit(x)?;
    let path = tree.path_to(x);
    let visited = path.len();
    for &id in &path {
        tree.node_mut(id).extend_range(x);
    }
    let mut leaf = *path.last().expect("path is never empty");
    let mut cell = unit_cell_of(tree, leaf);
    let mut created = 0;
    loop {
        let other = match &tree.node(leaf).point {
            None => {
                tree.node_mut(leaf).point = Some(x.to_vec());
                break;
            }
            Some(p) if bitwise_eq(p, x) => break,
            Some(p) => p.clone(),
        };
        let e = rng.exponential(cell.linear_dim());
        let split = cell.sample_split(rng);
        let birth = tree.node(leaf).birth + e;
        let x_side = split.side_of(x);
        if split.side_of(&other) == x_side {
            // Both points stay together; the fresh empty leaf takes the other side.
            let (internal, _) = tree.insert_internal_above(leaf, split, birth, x_side.other())?;
            tree.node_mut(internal).extend_range(x);
            cell = cell.restrict(&split, x_side);
            created += 2;
        } else {
            let (internal, fresh) = tree.insert_internal_above(leaf, split, birth, x_side)?;
            tree.node_mut(internal).extend_range(x);
            let node = tree.node_mut(fresh);
            node.point = Some(x.to_vec());
            node.extend_range(x);
            created += 2;
            leaf = fresh;
            break;
        }
    }
    Ok(Extension { leaf, visited, created })
}

/// Dry run of [`extend_unrestricted`]'s splitting loop for a query point.
pub fn plan_unrestricted(tree: &MondrianTree, x: &[f64], rng: &mut RngStream) -> Result<Option<VirtualSplit>> {
    tree.check_point(x)?;
    check_unit(x)?;
    let leaf = tree.leaf_containing(x);
    let other = match &tree.node(leaf).point {
        Some(p) if !bitwise_eq(p, x) => p.clone(),
        _ => return Ok(None),
    };
    let mut cell = unit_cell_of(tree, leaf);
    let mut birth = tree.node(leaf).birth;
    let mut chain = 0;
    loop {
        birth += rng.exponential(cell.linear_dim());
        let split = cell.sample_split(rng);
        let side = split.side_of(x);
        chain += 1;
        if split.side_of(&other) != side {
            return Ok(Some(VirtualSplit { host: leaf, birth, split, side, chain }));
        }
        cell = cell.restrict(&split, side);
    }
}

/// Per-dimension range extension `(x_j − high_j)_+ + (low_j − x_j)_+`.
fn range_extension(node: &NodeRecord, x: &[f64]) -> Vec<f64> {
    node.range_low
        .iter()
        .zip(&node.range_high)
        .zip(x)
        .map(|((lo, hi), v)| (v - hi).max(0.0) + (lo - v).max(0.0))
        .collect()
}

enum Guard {
    Descend(NodeId),
    Split { birth: f64, split: Split, side: Side },
    Stop,
}

/// One step of the restricted sampling guard at `id`.
fn restricted_guard(tree: &MondrianTree, id: NodeId, x: &[f64], rng: &mut RngStream, may_split_leaf: bool) -> Guard {
    let node = tree.node(id);
    let deltas = range_extension(node, x);
    let delta: f64 = deltas.iter().sum();
    let e = rng.exponential(delta);
    let split_here = delta > 0.0
        && match &node.branch {
            None => may_split_leaf,
            Some(_) => node.birth + e < tree.split_time(id).expect("internal"),
        };
    if split_here {
        let dim = rng.weighted_index(&deltas);
        let (lo, hi, v) = (node.range_low[dim], node.range_high[dim], x[dim]);
        let (side, threshold) = if v < lo {
            let s = rng.uniform_between(v, lo);
            // Old points sit at >= lo and must go right.
            (Side::Left, if s < lo { s } else { v })
        } else {
            let s = rng.uniform_between(hi, v);
            // The new point must go right of the threshold.
            (Side::Right, if s < v { s } else { hi })
        };
        return Guard::Split { birth: node.birth + e, split: Split { dim, threshold }, side };
    }
    match &node.branch {
        None => Guard::Stop,
        Some(b) => Guard::Descend(b.child(b.split.side_of(x))),
    }
}

/// Restricted online extension starting at `node` (normally the root).
pub fn node_update_restricted(
    tree: &mut MondrianTree,
    node: NodeId,
    x: &[f64],
    rng: &mut RngStream,
) -> Result<Extension> {
    node_update_restricted_with(tree, node, x, rng, None)
}

/// [`node_update_restricted`] from the root.
pub fn insert_restricted(tree: &mut MondrianTree, x: &[f64], rng: &mut RngStream) -> Result<Extension> {
    let root = tree.root();
    node_update_restricted_with(tree, root, x, rng, None)
}

/// [`node_update_restricted`] with an optional pure-leaf guard: when
/// `keep_pure_class` is `Some(k)`, a leaf whose labels are all `k` is not split.
pub fn node_update_restricted_with(
    tree: &mut MondrianTree,
    node: NodeId,
    x: &[f64],
    rng: &mut RngStream,
    keep_pure_class: Option<usize>,
) -> Result<Extension> {
    tree.check_point(x)?;
    if tree.get(node).is_none() {
        return Err(AmfError::DetachedNode(node));
    }
    let mut id = node;
    if !tree.node(id).has_range() {
        // Empty tree: the root simply records x.
        tree.node_mut(id).extend_range(x);
        return Ok(Extension { leaf: id, visited: 1, created: 0 });
    }
    let mut visited = 0;
    loop {
        visited += 1;
        let may_split_leaf = match keep_pure_class {
            Some(k) => !tree.node(id).stats.is_pure(k),
            None => true,
        };
        match restricted_guard(tree, id, x, rng, may_split_leaf) {
            Guard::Split { birth, split, side } => {
                let (internal, leaf) = tree.insert_internal_above(id, split, birth, side)?;
                tree.node_mut(internal).extend_range(x);
                tree.node_mut(leaf).extend_range(x);
                return Ok(Extension { leaf, visited, created: 2 });
            }
            Guard::Descend(child) => {
                tree.node_mut(id).extend_range(x);
                id = child;
            }
            Guard::Stop => {
                tree.node_mut(id).extend_range(x);
                return Ok(Extension { leaf: id, visited, created: 0 });
            }
        }
    }
}

/// Dry run of [`node_update_restricted`] from the root for a query point.
pub fn plan_restricted(tree: &MondrianTree, x: &[f64], rng: &mut RngStream) -> Result<Option<VirtualSplit>> {
    tree.check_point(x)?;
    let mut id = tree.root();
    if !tree.node(id).has_range() {
        return Ok(None);
    }
    loop {
        match restricted_guard(tree, id, x, rng, true) {
            Guard::Split { birth, split, side } => {
                return Ok(Some(VirtualSplit { host: id, birth, split, side, chain: 1 }))
            }
            Guard::Descend(child) => id = child,
            Guard::Stop => return Ok(None),
        }
    }
}
