//! Online forest of aggregated Mondrian trees, plus the label-marginal baseline.

use crate::ctw::{predict_aggregated, update_weights_upward, weighted_depth};
use crate::error::{AmfError, Result};
use crate::forecasters::{kt_predict, mean_predict, Prediction, Task};
use crate::mondrian::{
    extend_unrestricted, node_update_restricted_with, plan_restricted, plan_unrestricted, RngStream,
};
use crate::tree_store::{MondrianTree, NodeId};

/// Stream id offset for prediction-time randomness, far from any tree index.
const PREDICTION_STREAM: u64 = 1 << 62;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    /// Splits drawn inside the range of the points seen in each node.
    #[default]
    Restricted,
    /// Full-cell splits of `[0, 1]^d`; inputs must lie in the unit box.
    Unrestricted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub eta: f64,
    pub task: Task,
    pub seed: u64,
    pub variant: Variant,
    /// Split leaves whose labels are all equal to the incoming one. `false`
    /// enables the pure-leaf heuristic (classification only).
    pub split_pure: bool,
}

impl ForestConfig {
    /// Ten trees, restricted partitions, learning rate from the task's loss.
    pub fn new(task: Task) -> Self {
        ForestConfig {
            n_trees: 10,
            eta: task.loss_kind().default_eta(),
            task,
            seed: 42,
            variant: Variant::Restricted,
            split_pure: true,
        }
    }

    pub fn with_trees(mut self, n_trees: usize) -> Self {
        self.n_trees = n_trees;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_split_pure(mut self, split_pure: bool) -> Self {
        self.split_pure = split_pure;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(AmfError::InvalidParameter { name: "n_trees", reason: "must be >= 1".into() });
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(AmfError::InvalidParameter { name: "eta", reason: format!("must be > 0, got {}", self.eta) });
        }
        self.task.validate()
    }
}

/// Instrumentation of one tree update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateTrace {
    pub leaf: NodeId,
    /// Pre-existing nodes examined by the structural update.
    pub descended: usize,
    /// Nodes allocated by the structural update.
    pub created: usize,
    /// Nodes visited by the weight update (leaf to root).
    pub ascended: usize,
}

impl UpdateTrace {
    pub fn visits(&self) -> usize {
        self.descended + self.ascended
    }
}

#[derive(Debug, Clone)]
struct TreeLearner {
    tree: MondrianTree,
    rng: RngStream,
}

#[derive(Debug, Clone)]
pub struct AmfForest {
    config: ForestConfig,
    dim: usize,
    trees: Vec<TreeLearner>,
    samples_seen: u64,
}

impl AmfForest {
    pub fn new(config: ForestConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        let trees = (0..config.n_trees)
            .map(|m| {
                Ok(TreeLearner { tree: MondrianTree::new(dim, config.task)?, rng: RngStream::new(config.seed, m as u64) })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AmfForest { config, dim, trees, samples_seen: 0 })
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    pub fn trees(&self) -> impl Iterator<Item = &MondrianTree> {
        self.trees.iter().map(|t| &t.tree)
    }

    pub fn tree(&self, m: usize) -> &MondrianTree {
        &self.trees[m].tree
    }

    fn check_sample(&self, x: &[f64], y: f64) -> Result<()> {
        if x.len() != self.dim {
            return Err(AmfError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(AmfError::NonFinite);
        }
        if self.config.variant == Variant::Unrestricted && !x.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(AmfError::OutsideUnitBox);
        }
        self.config.task.check_label(y)
    }

    /// One online update of every tree; returns per-tree instrumentation.
    pub fn learn_one(&mut self, x: &[f64], y: f64) -> Result<Vec<UpdateTrace>> {
        self.check_sample(x, y)?;
        let keep_pure = match (self.config.split_pure, self.config.task) {
            (false, Task::Classification { .. }) => Some(y as usize),
            _ => None,
        };
        let eta = self.config.eta;
        let variant = self.config.variant;
        let traces = self
            .trees
            .iter_mut()
            .map(|learner| {
                let ext = match variant {
                    Variant::Restricted => {
                        let root = learner.tree.root();
                        node_update_restricted_with(&mut learner.tree, root, x, &mut learner.rng, keep_pure)?
                    }
                    Variant::Unrestricted => extend_unrestricted(&mut learner.tree, x, &mut learner.rng)?,
                };
                let ascended = update_weights_upward(&mut learner.tree, ext.leaf, y, eta)?;
                Ok(UpdateTrace { leaf: ext.leaf, descended: ext.visited, created: ext.created, ascended })
            })
            .collect::<Result<Vec<_>>>()?;
        self.samples_seen += 1;
        Ok(traces)
    }

    /// Online training on a batch, each sample used once and in order.
    pub fn partial_fit(&mut self, xs: &[Vec<f64>], ys: &[f64]) -> Result<()> {
        if xs.len() != ys.len() {
            return Err(AmfError::BatchLength { features: xs.len(), labels: ys.len() });
        }
        for (x, &y) in xs.iter().zip(ys) {
            self.learn_one(x, y)?;
        }
        Ok(())
    }

    fn prediction_rng(&self, tree_index: usize, x: &[f64]) -> RngStream {
        let mut h = splitmix64(self.config.seed ^ splitmix64(tree_index as u64));
        h = splitmix64(h ^ self.samples_seen);
        for v in x {
            h = splitmix64(h ^ v.to_bits());
        }
        RngStream::new(h, PREDICTION_STREAM + tree_index as u64)
    }

    /// Aggregated prediction of tree `m`. Never mutates the tree or its training stream.
    pub fn predict_tree(&self, m: usize, x: &[f64]) -> Result<Prediction> {
        let prior = self.config.task.prior_prediction();
        let tree = &self.trees[m].tree;
        tree.check_point(x)?;
        let mut rng = self.prediction_rng(m, x);
        let plan = match self.config.variant {
            Variant::Restricted => plan_restricted(tree, x, &mut rng)?,
            Variant::Unrestricted => plan_unrestricted(tree, x, &mut rng)?,
        };
        Ok(predict_aggregated(tree, x, plan.as_ref(), &prior))
    }

    /// Average of the per-tree aggregated predictions.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.dim {
            return Err(AmfError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if self.samples_seen == 0 {
            return Ok(self.config.task.prior_prediction());
        }
        let preds = (0..self.trees.len()).map(|m| self.predict_tree(m, x)).collect::<Result<Vec<_>>>()?;
        Ok(Prediction::mean(&preds))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.predict(x)? {
            Prediction::Proba(p) => Ok(p),
            Prediction::Value(_) => Err(AmfError::TaskMismatch("predict_proba on a regression forest")),
        }
    }

    pub fn predict_value(&self, x: &[f64]) -> Result<f64> {
        match self.predict(x)? {
            Prediction::Value(v) => Ok(v),
            Prediction::Proba(_) => Err(AmfError::TaskMismatch("predict_value on a classification forest")),
        }
    }

    /// Per-tree weighted depths at `x` and their mean.
    pub fn weighted_depths(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        if x.len() != self.dim {
            return Err(AmfError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let depths: Vec<f64> = self.trees.iter().map(|t| weighted_depth(&t.tree, x)).collect();
        let mean = depths.iter().sum::<f64>() / depths.len() as f64;
        Ok((depths, mean))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// KT forecaster on the marginal label distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DummyClassifier {
    counts: Vec<u64>,
}

impl DummyClassifier {
    pub fn new(n_classes: usize) -> Result<Self> {
        Task::classification(n_classes)?;
        Ok(DummyClassifier { counts: vec![0; n_classes] })
    }

    pub fn learn_one(&mut self, y: f64) -> Result<()> {
        Task::Classification { n_classes: self.counts.len() }.check_label(y)?;
        self.counts[y as usize] += 1;
        Ok(())
    }

    pub fn partial_fit(&mut self, ys: &[f64]) -> Result<()> {
        ys.iter().try_for_each(|&y| self.learn_one(y))
    }

    pub fn predict_proba(&self) -> Vec<f64> {
        kt_predict(&self.counts).expect("at least two classes")
    }
}

/// Running mean of the labels; the regression counterpart of [`DummyClassifier`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DummyRegressor {
    sum: f64,
    count: u64,
}

impl DummyRegressor {
    pub fn learn_one(&mut self, y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(AmfError::NonFinite);
        }
        self.sum += y;
        self.count += 1;
        Ok(())
    }

    pub fn predict_value(&self) -> f64 {
        mean_predict(self.sum, self.count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clf_forest(m: usize) -> AmfForest {
        AmfForest::new(ForestConfig::new(Task::Classification { n_classes: 2 }).with_trees(m), 2).unwrap()
    }

    #[test]
    fn config_validation() {
        let task = Task::Classification { n_classes: 2 };
        assert!(AmfForest::new(ForestConfig::new(task).with_trees(0), 2).is_err());
        assert!(AmfForest::new(ForestConfig::new(task).with_eta(0.0), 2).is_err());
        assert!(AmfForest::new(ForestConfig::new(task), 0).is_err());
        let reg = ForestConfig::new(Task::Regression { range_bound: 2.0 });
        assert_eq!(reg.eta, 1.0 / 32.0);
        assert_eq!(ForestConfig::new(task).eta, 1.0);
    }

    #[test]
    fn first_samples() {
        let mut f = clf_forest(1);
        f.partial_fit(&[vec![0.1, 0.2]], &[1.0]).unwrap();
        assert_eq!(f.tree(0).leaf_count(), 1);
        assert_eq!(f.tree(0).node(f.tree(0).root()).stats.count(), 1);
        f.partial_fit(&[vec![0.7, 0.9]], &[0.0]).unwrap();
        assert_eq!(f.tree(0).leaf_count(), 2);
    }

    #[test]
    fn errors_on_bad_input() {
        let mut f = clf_forest(2);
        assert!(matches!(f.learn_one(&[0.1], 0.0), Err(AmfError::DimensionMismatch { .. })));
        assert!(matches!(f.learn_one(&[0.1, 0.2], 2.0), Err(AmfError::ClassOutOfRange { .. })));
        assert!(f.partial_fit(&[vec![0.1, 0.2]], &[]).is_err());
    }

    #[test]
    fn unfitted_forest_predicts_prior() {
        let f = AmfForest::new(ForestConfig::new(Task::Classification { n_classes: 4 }), 3).unwrap();
        assert_eq!(f.predict_proba(&[0.0, 1.0, 2.0]).unwrap(), vec![0.25; 4]);
        let (depths, mean) = f.weighted_depths(&[0.0, 1.0, 2.0]).unwrap();
        assert!(depths.iter().all(|&d| d == 0.0));
        assert_eq!(mean, 0.0);
        let r = AmfForest::new(ForestConfig::new(Task::Regression { range_bound: 1.0 }), 1).unwrap();
        assert_eq!(r.predict_value(&[0.3]).unwrap(), 0.0);
    }

    #[test]
    fn forest_prediction_is_mean_of_trees() {
        let mut f = clf_forest(3);
        for i in 0..30 {
            let x = [(i as f64 * 0.31) % 1.0, (i as f64 * 0.17) % 1.0];
            f.learn_one(&x, (i % 2) as f64).unwrap();
        }
        let x = [0.4, 0.45];
        let per_tree: Vec<Vec<f64>> =
            (0..3).map(|m| f.predict_tree(m, &x).unwrap().as_proba().unwrap().to_vec()).collect();
        let p = f.predict_proba(&x).unwrap();
        for k in 0..2 {
            let mean = per_tree.iter().map(|q| q[k]).sum::<f64>() / 3.0;
            assert!((p[k] - mean).abs() < 1e-15);
        }
        let (depths, mean) = f.weighted_depths(&x).unwrap();
        assert_eq!(depths.len(), 3);
        assert!((mean - depths.iter().sum::<f64>() / 3.0).abs() < 1e-15);
        assert_eq!(depths[0], weighted_depth(f.tree(0), &x));
    }

    #[test]
    fn predictions_do_not_perturb_training() {
        let data: Vec<(Vec<f64>, f64)> =
            (0..200).map(|i| (vec![(i as f64 * 0.731) % 1.0, (i as f64 * 0.377) % 1.0], (i % 3 % 2) as f64)).collect();
        let mut a = clf_forest(4);
        let mut b = clf_forest(4);
        for (x, y) in &data {
            a.learn_one(x, *y).unwrap();
            b.predict_proba(&[x[1] + 3.0, -x[0]]).unwrap();
            b.learn_one(x, *y).unwrap();
        }
        for m in 0..4 {
            assert_eq!(a.tree(m), b.tree(m));
        }
        let q = [0.2, 5.0];
        assert_eq!(a.predict_proba(&q).unwrap(), b.predict_proba(&q).unwrap());
    }

    #[test]
    fn pure_leaf_heuristic_limits_splits() {
        let task = Task::Classification { n_classes: 2 };
        let mut f = AmfForest::new(ForestConfig::new(task).with_trees(1).with_split_pure(false), 1).unwrap();
        for i in 0..50 {
            f.learn_one(&[i as f64], 1.0).unwrap();
        }
        assert_eq!(f.tree(0).leaf_count(), 1);
        let mut g = AmfForest::new(ForestConfig::new(task).with_trees(1), 1).unwrap();
        for i in 0..50 {
            g.learn_one(&[i as f64], 1.0).unwrap();
        }
        assert_eq!(g.tree(0).leaf_count(), 50);
    }

    #[test]
    fn unrestricted_variant_runs() {
        let task = Task::Classification { n_classes: 2 };
        let mut f = AmfForest::new(ForestConfig::new(task).with_trees(2).with_variant(Variant::Unrestricted), 2).unwrap();
        for i in 0..40 {
            f.learn_one(&[(i as f64 * 0.31) % 1.0, (i as f64 * 0.77) % 1.0], (i % 2) as f64).unwrap();
        }
        let p = f.predict_proba(&[0.5, 0.5]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(f.learn_one(&[1.5, 0.0], 0.0).is_err());
    }

    #[test]
    fn dummy_examples() {
        let mut d = DummyClassifier::new(2).unwrap();
        assert_eq!(d.predict_proba(), vec![0.5, 0.5]);
        d.partial_fit(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        let p = d.predict_proba();
        assert!((p[0] - 3.5 / 5.0).abs() < 1e-15 && (p[1] - 1.5 / 5.0).abs() < 1e-15);
        let mut e = DummyClassifier::new(2).unwrap();
        e.partial_fit(&[0.0, 1.0]).unwrap();
        assert_eq!(e.predict_proba(), vec![0.5, 0.5]);
        assert!(e.learn_one(2.0).is_err());

        let mut r = DummyRegressor::default();
        assert_eq!(r.predict_value(), 0.0);
        r.learn_one(1.0).unwrap();
        r.learn_one(3.0).unwrap();
        assert_eq!(r.predict_value(), 2.0);
    }
}
