//! Streaming evaluation: progressive losses, AUC and regret against prunings.

use std::f64::consts::LN_2;

use crate::ctw::{predict_aggregated, update_weights_upward};
use crate::error::{AmfError, Result};
use crate::forecasters::{loss, LossKind, Prediction, Task};
use crate::forest::{AmfForest, DummyClassifier, DummyRegressor, Variant};
use crate::mondrian::{extend_unrestricted, insert_restricted, RngStream};
use crate::oracle::{enumerate_prunings, leaf_constant_loss, prior_mass_restricted, pruning_cumulative_loss};
use crate::tree_store::MondrianTree;

/// A learner that can be evaluated prequentially.
pub trait OnlineLearner {
    fn predict(&self, x: &[f64]) -> Result<Prediction>;
    fn learn(&mut self, x: &[f64], y: f64) -> Result<()>;
}

impl OnlineLearner for AmfForest {
    fn predict(&self, x: &[f64]) -> Result<Prediction> {
        AmfForest::predict(self, x)
    }

    fn learn(&mut self, x: &[f64], y: f64) -> Result<()> {
        self.learn_one(x, y).map(|_| ())
    }
}

impl OnlineLearner for DummyClassifier {
    fn predict(&self, _x: &[f64]) -> Result<Prediction> {
        Ok(Prediction::Proba(self.predict_proba()))
    }

    fn learn(&mut self, _x: &[f64], y: f64) -> Result<()> {
        self.learn_one(y)
    }
}

impl OnlineLearner for DummyRegressor {
    fn predict(&self, _x: &[f64]) -> Result<Prediction> {
        Ok(Prediction::Value(self.predict_value()))
    }

    fn learn(&mut self, _x: &[f64], y: f64) -> Result<()> {
        self.learn_one(y)
    }
}

/// Average loss through step `t`, for the recorded steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCurve {
    pub name: String,
    pub points: Vec<(usize, f64)>,
}

impl LossCurve {
    pub fn last(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }
}

/// Predict-then-update evaluation of several learners on the same stream.
///
/// At every step each learner predicts `x_t` before any learner sees `y_t`;
/// the averaged loss is recorded every `stride` steps and at the last step.
pub fn progressive_eval(
    learners: &mut [(&str, &mut dyn OnlineLearner)],
    xs: &[Vec<f64>],
    ys: &[f64],
    kind: LossKind,
    stride: usize,
) -> Result<Vec<LossCurve>> {
    if xs.len() != ys.len() {
        return Err(AmfError::BatchLength { features: xs.len(), labels: ys.len() });
    }
    if stride == 0 {
        return Err(AmfError::InvalidParameter { name: "stride", reason: "must be >= 1".into() });
    }
    let mut curves: Vec<LossCurve> =
        learners.iter().map(|(name, _)| LossCurve { name: name.to_string(), points: Vec::new() }).collect();
    let mut totals = vec![0.0; learners.len()];
    let n = xs.len();
    for (t, (x, &y)) in xs.iter().zip(ys).enumerate() {
        let step = t + 1;
        for (i, (_, learner)) in learners.iter().enumerate() {
            totals[i] += loss(kind, &learner.predict(x)?, y)?;
        }
        for (_, learner) in learners.iter_mut() {
            learner.learn(x, y)?;
        }
        if step % stride == 0 || step == n {
            for (curve, total) in curves.iter_mut().zip(&totals) {
                curve.points.push((step, total / step as f64));
            }
        }
    }
    Ok(curves)
}

/// Area under the ROC curve via the Mann-Whitney statistic, ties counted ½.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(AmfError::BatchLength { features: scores.len(), labels: labels.len() });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(AmfError::NonFinite);
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(AmfError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of average ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Losses of one pruning of the final tree.
#[derive(Debug, Clone, PartialEq)]
pub struct PruningRegret {
    /// `|T|`, number of nodes of the pruning.
    pub size: usize,
    pub prior_mass: f64,
    /// Cumulative loss of the pruning's online forecasters.
    pub loss: f64,
    /// Loss of the best leafwise-constant predictor in hindsight.
    pub leaf_constant_loss: f64,
    /// `|T| log 2 / η`.
    pub pruning_bound: f64,
    /// Bound against leafwise-constant predictors for the stream length.
    pub leaf_constant_bound: f64,
}

#[derive(Debug, Clone)]
pub struct RegretReport {
    pub n: usize,
    pub amf_loss: f64,
    pub best_pruning_loss: f64,
    /// `|T̄| log 2 / η` for the full final tree, which dominates every pruning's bound.
    pub bound: f64,
    pub prunings: Vec<PruningRegret>,
    pub tree: MondrianTree,
}

/// Grows a single tree on the stream and measures its regret against every pruning of the final tree.
///
/// The partition is updated with `x_t` before the tree predicts `x_t`, and the
/// weights and forecasters absorb `y_t` afterwards.
pub fn regret_report(
    xs: &[Vec<f64>],
    ys: &[f64],
    task: Task,
    eta: f64,
    variant: Variant,
    seed: u64,
) -> Result<RegretReport> {
    if xs.len() != ys.len() {
        return Err(AmfError::BatchLength { features: xs.len(), labels: ys.len() });
    }
    let dim = xs.first().map_or(1, |x| x.len());
    let mut tree = MondrianTree::new(dim, task)?;
    let mut rng = RngStream::new(seed, 0);
    let kind = task.loss_kind();
    let prior = task.prior_prediction();
    let mut amf_loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        task.check_label(y)?;
        let leaf = match variant {
            Variant::Restricted => insert_restricted(&mut tree, x, &mut rng)?.leaf,
            Variant::Unrestricted => extend_unrestricted(&mut tree, x, &mut rng)?.leaf,
        };
        amf_loss += loss(kind, &predict_aggregated(&tree, x, None, &prior), y)?;
        update_weights_upward(&mut tree, leaf, y, eta)?;
    }

    let n = xs.len();
    let kt_term = |size: usize| match task {
        Task::Classification { n_classes } => {
            (size + 1) as f64 * (n_classes - 1) as f64 / 4.0 * (4.0 * n.max(1) as f64).ln()
        }
        Task::Regression { range_bound } => 4.0 * range_bound * range_bound * (size + 1) as f64 * (n.max(1) as f64).ln(),
    };
    let prunings = enumerate_prunings(&tree)?
        .iter()
        .map(|p| {
            let size = p.len();
            let pruning_bound = size as f64 * LN_2 / eta;
            let leaf_constant_bound = match task {
                Task::Classification { .. } => pruning_bound + kt_term(size),
                Task::Regression { .. } => kt_term(size),
            };
            Ok(PruningRegret {
                size,
                prior_mass: prior_mass_restricted(p, &tree)?,
                loss: pruning_cumulative_loss(&tree, p, xs, ys, kind)?,
                leaf_constant_loss: leaf_constant_loss(&tree, p, xs, ys, kind)?,
                pruning_bound,
                leaf_constant_bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best_pruning_loss = prunings.iter().map(|p| p.loss).fold(f64::INFINITY, f64::min);
    Ok(RegretReport { n, amf_loss, best_pruning_loss, bound: tree.len() as f64 * LN_2 / eta, prunings, tree })
}
