//! Brute-force reference computations over explicit prunings.
//!
//! Everything here enumerates subtrees one by one and is exponential in the
//! tree size. It exists to check the per-node recursions in [`crate::ctw`],
//! never to serve predictions.

use std::collections::BTreeSet;

use crate::error::{AmfError, Result};
use crate::ctw::{predict_aggregated, update_weights_upward, weighted_depth};
use crate::forecasters::{loss, LossKind, NodeStats, Prediction, Task};
use crate::mondrian::{insert_restricted, RngStream};
use crate::tree_store::{MondrianTree, NodeId, Side, Split};

/// Maximum number of internal nodes a tree may have for enumeration.
pub const ENUMERATION_LIMIT: usize = 20;

/// A subtree containing the root in which every kept internal node keeps both children.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Pruning {
    nodes: BTreeSet<NodeId>,
}

impl Pruning {
    pub fn from_nodes(nodes: impl IntoIterator<Item = NodeId>) -> Self {
        Pruning { nodes: nodes.into_iter().collect() }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains(&id)
    }

    /// `|T|`, the number of nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes of the pruning whose children are not kept.
    pub fn leaves<'a>(&'a self, tree: &'a MondrianTree) -> impl Iterator<Item = NodeId> + 'a {
        self.nodes().filter(move |&id| match &tree.node(id).branch {
            None => true,
            Some(b) => !self.contains(b.left),
        })
    }

    /// Leaf of the pruning whose cell contains `x`.
    pub fn leaf_containing(&self, tree: &MondrianTree, x: &[f64]) -> NodeId {
        let mut id = tree.root();
        while let Some(b) = &tree.node(id).branch {
            if !self.contains(b.left) {
                break;
            }
            id = b.child(b.split.side_of(x));
        }
        id
    }

    pub fn validate(&self, tree: &MondrianTree) -> Result<()> {
        if !self.contains(tree.root()) {
            return Err(AmfError::InvalidPruning("root missing"));
        }
        for id in self.nodes() {
            let node = tree.get(id).ok_or(AmfError::InvalidPruning("unknown node"))?;
            if let Some(p) = node.parent {
                if !self.contains(p) {
                    return Err(AmfError::InvalidPruning("node kept without its parent"));
                }
            }
            if let Some(b) = &node.branch {
                if self.contains(b.left) != self.contains(b.right) {
                    return Err(AmfError::InvalidPruning("internal node keeps exactly one child"));
                }
            }
        }
        Ok(())
    }
}

fn check_guard(tree: &MondrianTree) -> Result<()> {
    let internal = tree.internal_count();
    if internal > ENUMERATION_LIMIT {
        return Err(AmfError::GuardExceeded { internal, limit: ENUMERATION_LIMIT });
    }
    Ok(())
}

/// All prunings of `tree`, each exactly once.
pub fn enumerate_prunings(tree: &MondrianTree) -> Result<Vec<Pruning>> {
    check_guard(tree)?;
    fn below(tree: &MondrianTree, id: NodeId) -> Vec<Vec<NodeId>> {
        let mut out = vec![vec![id]];
        if let Some(b) = &tree.node(id).branch {
            let lefts = below(tree, b.left);
            let rights = below(tree, b.right);
            for l in &lefts {
                for r in &rights {
                    let mut v = Vec::with_capacity(1 + l.len() + r.len());
                    v.push(id);
                    v.extend_from_slice(l);
                    v.extend_from_slice(r);
                    out.push(v);
                }
            }
        }
        out
    }
    Ok(below(tree, tree.root()).into_iter().map(Pruning::from_nodes).collect())
}

/// `2^{−‖T‖}`, where `‖T‖` counts nodes of the pruning that are internal in `tree`.
pub fn prior_mass_restricted(pruning: &Pruning, tree: &MondrianTree) -> Result<f64> {
    pruning.validate(tree)?;
    let internal_in_tree = pruning.nodes().filter(|&id| !tree.node(id).is_leaf()).count();
    Ok(0.5f64.powi(internal_in_tree as i32))
}

/// Neumaier compensated sum.
#[derive(Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Normalized mixture `Σ e^{l_i} v_i / Σ e^{l_i}` of vectors given log-weights.
fn mixture(terms: &[(f64, Vec<f64>)]) -> Vec<f64> {
    let max = terms.iter().map(|(l, _)| *l).fold(f64::NEG_INFINITY, f64::max);
    let width = terms[0].1.len();
    let mut num = vec![CompensatedSum::default(); width];
    let mut den = CompensatedSum::default();
    for (l, v) in terms {
        let w = (l - max).exp();
        den.add(w);
        for (acc, x) in num.iter_mut().zip(v) {
            acc.add(w * x);
        }
    }
    num.iter().map(|n| n.value() / den.value()).collect()
}

/// Log of the unnormalized pruning weight `π(T) Π_{leaves} w_b`.
fn log_pruning_weight(tree: &MondrianTree, pruning: &Pruning) -> Result<f64> {
    let prior = prior_mass_restricted(pruning, tree)?;
    Ok(prior.ln() + pruning.leaves(tree).map(|id| tree.node(id).log_weight).sum::<f64>())
}

fn as_vector(p: &Prediction) -> Vec<f64> {
    match p {
        Prediction::Proba(v) => v.clone(),
        Prediction::Value(v) => vec![*v],
    }
}

/// Exponentially weighted average of the forecasts of all prunings at `x`,
/// computed by explicit enumeration from the stored node log-weights.
pub fn brute_force_aggregate(tree: &MondrianTree, x: &[f64]) -> Result<Prediction> {
    tree.check_point(x)?;
    let terms = enumerate_prunings(tree)?
        .iter()
        .map(|t| {
            let leaf = t.leaf_containing(tree, x);
            Ok((log_pruning_weight(tree, t)?, as_vector(&tree.node(leaf).stats.predict())))
        })
        .collect::<Result<Vec<_>>>()?;
    let mixed = mixture(&terms);
    Ok(match tree.task().prior_prediction() {
        Prediction::Proba(_) => Prediction::Proba(mixed),
        Prediction::Value(_) => Prediction::Value(mixed[0]),
    })
}

/// Exponentially weighted average over prunings of the depth of the pruning leaf containing `x`.
pub fn brute_force_weighted_depth(tree: &MondrianTree, x: &[f64]) -> Result<f64> {
    tree.check_point(x)?;
    let terms = enumerate_prunings(tree)?
        .iter()
        .map(|t| {
            let leaf = t.leaf_containing(tree, x);
            Ok((log_pruning_weight(tree, t)?, vec![tree.depth_of(leaf) as f64]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mixture(&terms)[0])
}

fn check_stream(tree: &MondrianTree, xs: &[Vec<f64>], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(AmfError::StreamMismatch(format!("{} points but {} labels", xs.len(), ys.len())));
    }
    for x in xs {
        tree.check_point(x)?;
    }
    Ok(())
}

fn replayed_stats(tree: &MondrianTree, pruning: &Pruning, xs: &[Vec<f64>], ys: &[f64]) -> Result<Vec<(NodeId, NodeStats)>> {
    let mut stats: Vec<(NodeId, NodeStats)> =
        pruning.leaves(tree).map(|id| (id, tree.task().empty_stats())).collect();
    for (x, &y) in xs.iter().zip(ys) {
        let leaf = pruning.leaf_containing(tree, x);
        let slot = stats.iter_mut().find(|(id, _)| *id == leaf).expect("leaf of pruning");
        slot.1.update(y)?;
    }
    Ok(stats)
}

/// Cumulative loss `L_n(T)` of a pruning, replaying the stream that grew `tree`.
///
/// At each step the forecaster of the pruning leaf containing `x_s` predicts
/// from the earlier labels of that cell, then absorbs `y_s`.
pub fn pruning_cumulative_loss(
    tree: &MondrianTree,
    pruning: &Pruning,
    xs: &[Vec<f64>],
    ys: &[f64],
    kind: LossKind,
) -> Result<f64> {
    pruning.validate(tree)?;
    check_stream(tree, xs, ys)?;
    let mut stats: Vec<(NodeId, NodeStats)> =
        pruning.leaves(tree).map(|id| (id, tree.task().empty_stats())).collect();
    let mut total = CompensatedSum::default();
    for (x, &y) in xs.iter().zip(ys) {
        let leaf = pruning.leaf_containing(tree, x);
        let slot = stats.iter_mut().find(|(id, _)| *id == leaf).expect("leaf of pruning");
        total.add(loss(kind, &slot.1.predict(), y)?);
        slot.1.update(y)?;
    }
    for (id, s) in &stats {
        if s.count() != tree.node(*id).stats.count() {
            return Err(AmfError::StreamMismatch(format!(
                "node {id:?} saw {} samples in the tree but {} in the stream",
                tree.node(*id).stats.count(),
                s.count()
            )));
        }
    }
    Ok(total.value())
}

/// Loss of the best function constant on each leaf of the pruning, in hindsight.
pub fn leaf_constant_loss(
    tree: &MondrianTree,
    pruning: &Pruning,
    xs: &[Vec<f64>],
    ys: &[f64],
    kind: LossKind,
) -> Result<f64> {
    pruning.validate(tree)?;
    check_stream(tree, xs, ys)?;
    let stats = replayed_stats(tree, pruning, xs, ys)?;
    let mut total = 0.0;
    for (_, s) in &stats {
        match (kind, s) {
            (LossKind::Log, NodeStats::Counts(c)) => {
                let n: u64 = c.iter().sum();
                for &k in c.iter().filter(|&&k| k > 0) {
                    total -= k as f64 * (k as f64 / n as f64).ln();
                }
            }
            (LossKind::Quadratic { .. }, NodeStats::Moments { .. }) => {}
            _ => return Err(AmfError::TaskMismatch("loss kind does not match tree task")),
        }
    }
    if let LossKind::Quadratic { .. } = kind {
        // Sum of squared deviations from each leaf mean.
        let means: Vec<(NodeId, f64)> = stats
            .iter()
            .map(|(id, s)| match s {
                NodeStats::Moments { sum, count } if *count > 0 => (*id, sum / *count as f64),
                _ => (*id, 0.0),
            })
            .collect();
        for (x, &y) in xs.iter().zip(ys) {
            let leaf = pruning.leaf_containing(tree, x);
            let m = means.iter().find(|(id, _)| *id == leaf).expect("leaf").1;
            total += (y - m) * (y - m);
        }
    }
    Ok(total)
}

/// Complete binary tree of the given depth on `[0,1]` with dyadic splits.
pub fn complete_tree(depth: usize) -> MondrianTree {
    let mut t = MondrianTree::new(1, Task::Classification { n_classes: 2 }).expect("valid task");
    let mut frontier = vec![(t.root(), 0.0, 1.0)];
    for level in 0..depth {
        let mut next = Vec::new();
        for (id, lo, hi) in frontier {
            let mid = 0.5 * (lo + hi);
            let (_, leaf) = t
                .insert_internal_above(id, Split { dim: 0, threshold: mid }, level as f64 + 1.0, Side::Right)
                .expect("valid split");
            next.push((id, lo, mid));
            next.push((leaf, mid, hi));
        }
        frontier = next;
    }
    t
}

/// A randomly grown restricted tree together with the stream that grew it.
#[derive(Debug, Clone)]
pub struct SmallCase {
    pub tree: MondrianTree,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

/// Grows a restricted tree on a random stream of at most 30 samples drawn
/// from at most `max_internal + 1` distinct points, so the tree has at most
/// `max_internal` internal nodes.
pub fn random_small_case(rng: &mut RngStream, max_internal: usize) -> Result<SmallCase> {
    let dim = 1 + (rng.uniform() * 3.0) as usize;
    let task = match (rng.uniform() * 3.0) as usize {
        0 => Task::Classification { n_classes: 2 },
        1 => Task::Classification { n_classes: 3 },
        _ => Task::Regression { range_bound: 1.0 },
    };
    let pool_size = 1 + (rng.uniform() * (max_internal + 1) as f64) as usize;
    let pool: Vec<Vec<f64>> =
        (0..pool_size).map(|_| (0..dim).map(|_| rng.uniform_between(-1.0, 1.0)).collect()).collect();
    let n = 1 + (rng.uniform() * 30.0) as usize;
    let mut tree = MondrianTree::new(dim, task)?;
    let eta = task.loss_kind().default_eta();
    let (mut xs, mut ys) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let x = pool[(rng.uniform() * pool_size as f64) as usize].clone();
        let y = match task {
            Task::Classification { n_classes } => (rng.uniform() * n_classes as f64).floor(),
            Task::Regression { .. } => rng.uniform_between(-1.0, 1.0),
        };
        let leaf = insert_restricted(&mut tree, &x, rng)?.leaf;
        update_weights_upward(&mut tree, leaf, y, eta)?;
        xs.push(x);
        ys.push(y);
    }
    Ok(SmallCase { tree, xs, ys })
}

/// Largest absolute gap between the recursive and enumerated aggregations
/// (predictions and weighted depths) over `reps` random small trees.
///
/// With `corrupt`, each tree's root averaged weight is perturbed first; the
/// result then measures how visible such a defect is.
pub fn self_check(reps: usize, seed: u64, corrupt: bool) -> Result<f64> {
    let mut rng = RngStream::new(seed, 0x0c7a);
    let mut worst = 0.0f64;
    for _ in 0..reps {
        let mut case = random_small_case(&mut rng, 8)?;
        if corrupt {
            let root = case.tree.root();
            if !case.tree.node(root).is_leaf() {
                case.tree.node_mut(root).log_avg_weight += 0.3;
            }
        }
        let tree = &case.tree;
        let prior = tree.task().prior_prediction();
        let mut queries = case.xs.clone();
        for _ in 0..3 {
            queries.push((0..tree.dim()).map(|_| rng.uniform_between(-1.5, 1.5)).collect());
        }
        for x in &queries {
            let fast = as_vector(&predict_aggregated(tree, x, None, &prior));
            let slow = as_vector(&brute_force_aggregate(tree, x)?);
            for (a, b) in fast.iter().zip(&slow) {
                worst = worst.max((a - b).abs());
            }
            let depth_gap = (weighted_depth(tree, x) - brute_force_weighted_depth(tree, x)?).abs();
            worst = worst.max(depth_gap);
        }
    }
    Ok(worst)
}
