//! Node forecasters and losses.
//!
//! Every node of a tree runs a tiny online forecaster over the labels that fell
//! into its cell: the Krichevsky-Trofimov estimator (add-½ counts, the Bayes
//! predictive under a Jeffreys Dirichlet prior) for classification, and the
//! running empirical mean for regression. Losses are the logarithmic loss and
//! the quadratic loss, which are exp-concave with learning rates 1 and
//! `1 / (8 B²)` respectively.

use crate::error::{AmfError, Result};

/// Learning problem solved by a tree or forest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Task {
    /// Multi-class classification with labels `0..n_classes`.
    Classification { n_classes: usize },
    /// Regression with labels in `[-range_bound, range_bound]`.
    Regression { range_bound: f64 },
}

impl Task {
    pub fn classification(n_classes: usize) -> Result<Self> {
        let task = Task::Classification { n_classes };
        task.validate()?;
        Ok(task)
    }

    pub fn regression(range_bound: f64) -> Result<Self> {
        let task = Task::Regression { range_bound };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Task::Classification { n_classes } if n_classes < 2 => {
                Err(AmfError::TooFewClasses(n_classes))
            }
            Task::Regression { range_bound } if !(range_bound > 0.0 && range_bound.is_finite()) => {
                Err(AmfError::InvalidParameter {
                    name: "range_bound",
                    reason: format!("must be a positive finite real, got {range_bound}"),
                })
            }
            _ => Ok(()),
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        match *self {
            Task::Classification { .. } => LossKind::Log,
            Task::Regression { range_bound } => LossKind::Quadratic { range_bound },
        }
    }

    pub fn empty_stats(&self) -> NodeStats {
        match *self {
            Task::Classification { n_classes } => NodeStats::Counts(vec![0; n_classes]),
            Task::Regression { .. } => NodeStats::Moments { sum: 0.0, count: 0 },
        }
    }

    /// The forecast of an empty node, `h(∅)`.
    pub fn prior_prediction(&self) -> Prediction {
        self.empty_stats().predict()
    }

    /// Rejects labels that are not valid for this task.
    pub fn check_label(&self, y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(AmfError::NonFinite);
        }
        match *self {
            Task::Classification { n_classes } => {
                if y < 0.0 || y.fract() != 0.0 || y >= n_classes as f64 {
                    return Err(AmfError::ClassOutOfRange { label: y, n_classes });
                }
            }
            Task::Regression { range_bound } => {
                if y.abs() > range_bound {
                    return Err(AmfError::LabelOutOfRange { label: y, bound: range_bound });
                }
            }
        }
        Ok(())
    }
}

/// Loss used both for aggregation weights and for evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Log,
    Quadratic { range_bound: f64 },
}

impl LossKind {
    /// Exp-concavity learning rate of the loss.
    pub fn default_eta(&self) -> f64 {
        match *self {
            LossKind::Log => 1.0,
            LossKind::Quadratic { range_bound } => 1.0 / (8.0 * range_bound * range_bound),
        }
    }
}

/// Output of a forecaster, a tree or a forest.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Proba(Vec<f64>),
    Value(f64),
}

impl Prediction {
    /// `self ← alpha · node + (1 − alpha) · self`.
    pub(crate) fn blend(&mut self, alpha: f64, node: &Prediction) {
        match (self, node) {
            (Prediction::Proba(acc), Prediction::Proba(p)) => {
                for (a, &q) in acc.iter_mut().zip(p) {
                    *a = alpha * q + (1.0 - alpha) * *a;
                }
            }
            (Prediction::Value(acc), Prediction::Value(v)) => {
                *acc = alpha * v + (1.0 - alpha) * *acc;
            }
            _ => unreachable!("mixing predictions of different tasks"),
        }
    }

    pub fn as_proba(&self) -> Option<&[f64]> {
        match self {
            Prediction::Proba(p) => Some(p),
            Prediction::Value(_) => None,
        }
    }

    pub fn as_value(&self) -> Option<f64> {
        match *self {
            Prediction::Value(v) => Some(v),
            Prediction::Proba(_) => None,
        }
    }

    /// Arithmetic mean of predictions of the same task. Panics on an empty slice.
    pub fn mean(preds: &[Prediction]) -> Prediction {
        let m = preds.len() as f64;
        match &preds[0] {
            Prediction::Proba(first) => {
                let mut acc = vec![0.0; first.len()];
                for p in preds {
                    let p = p.as_proba().expect("mixed tasks");
                    for (a, q) in acc.iter_mut().zip(p) {
                        *a += q;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= m);
                Prediction::Proba(acc)
            }
            Prediction::Value(_) => {
                Prediction::Value(preds.iter().map(|p| p.as_value().expect("mixed tasks")).sum::<f64>() / m)
            }
        }
    }
}

/// Sufficient statistics of the labels seen in a node.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeStats {
    /// Per-class counts `n_b(y)`.
    Counts(Vec<u64>),
    /// Label sum and count.
    Moments { sum: f64, count: u64 },
}

impl NodeStats {
    pub fn count(&self) -> u64 {
        match self {
            NodeStats::Counts(c) => c.iter().sum(),
            NodeStats::Moments { count, .. } => *count,
        }
    }

    pub fn predict(&self) -> Prediction {
        match self {
            NodeStats::Counts(c) => Prediction::Proba(
                kt_predict(c).expect("class counts always hold at least two classes"),
            ),
            NodeStats::Moments { sum, count } => Prediction::Value(mean_predict(*sum, *count)),
        }
    }

    /// Online update with one label; the label must already be valid for the task.
    pub fn update(&mut self, y: f64) -> Result<()> {
        match self {
            NodeStats::Counts(c) => {
                let k = c.len();
                if !(y >= 0.0 && y.fract() == 0.0 && (y as usize) < k) {
                    return Err(AmfError::ClassOutOfRange { label: y, n_classes: k });
                }
                c[y as usize] += 1;
            }
            NodeStats::Moments { sum, count } => {
                if !y.is_finite() {
                    return Err(AmfError::NonFinite);
                }
                *sum += y;
                *count += 1;
            }
        }
        Ok(())
    }

    /// True when every label seen so far equals `class`.
    pub fn is_pure(&self, class: usize) -> bool {
        match self {
            NodeStats::Counts(c) => c.iter().enumerate().all(|(k, &n)| k == class || n == 0),
            NodeStats::Moments { .. } => false,
        }
    }
}

/// Krichevsky-Trofimov forecast `(n(y) + ½) / (n + K/2)`; uniform on an empty node.
pub fn kt_predict(counts: &[u64]) -> Result<Vec<f64>> {
    let k = counts.len();
    if k < 2 {
        return Err(AmfError::TooFewClasses(k));
    }
    let total: u64 = counts.iter().sum();
    let denom = total as f64 + k as f64 / 2.0;
    Ok(counts.iter().map(|&n| (n as f64 + 0.5) / denom).collect())
}

/// Empirical mean of the labels, 0 on an empty node.
pub fn mean_predict(sum: f64, count: u64) -> f64 {
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// `−log p(y)` for probability vectors, `(ŷ − y)²` for values.
pub fn loss(kind: LossKind, pred: &Prediction, y: f64) -> Result<f64> {
    match (kind, pred) {
        (LossKind::Log, Prediction::Proba(p)) => {
            if !(y >= 0.0 && y.fract() == 0.0 && (y as usize) < p.len()) {
                return Err(AmfError::ClassOutOfRange { label: y, n_classes: p.len() });
            }
            let mass = p[y as usize];
            if mass <= 0.0 {
                return Err(AmfError::ZeroMass);
            }
            Ok(-mass.ln())
        }
        (LossKind::Quadratic { .. }, Prediction::Value(v)) => Ok((v - y) * (v - y)),
        _ => Err(AmfError::TaskMismatch("loss kind does not match prediction type")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kt_examples() {
        let p = kt_predict(&[0, 0, 0]).unwrap();
        for q in &p {
            assert!((q - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(kt_predict(&[1, 0]).unwrap(), vec![0.75, 0.25]);
        assert_eq!(kt_predict(&[2, 2]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(kt_predict(&[3]), Err(AmfError::TooFewClasses(1)));
    }

    #[test]
    fn mean_examples() {
        assert_eq!(mean_predict(0.0, 0), 0.0);
        assert_eq!(mean_predict(4.0, 2), 2.0);
        assert_eq!(mean_predict(5.0, 1), 5.0);
    }

    #[test]
    fn loss_examples() {
        let uniform = Prediction::Proba(vec![0.5, 0.5]);
        assert!((loss(LossKind::Log, &uniform, 0.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let q = LossKind::Quadratic { range_bound: 3.0 };
        assert_eq!(loss(q, &Prediction::Value(2.0), 2.0).unwrap(), 0.0);
        assert_eq!(loss(q, &Prediction::Value(0.0), 3.0).unwrap(), 9.0);
        assert_eq!(
            loss(LossKind::Log, &Prediction::Proba(vec![1.0, 0.0]), 1.0),
            Err(AmfError::ZeroMass)
        );
    }

    #[test]
    fn update_examples() {
        let mut s = NodeStats::Counts(vec![0, 0]);
        s.update(1.0).unwrap();
        assert_eq!(s, NodeStats::Counts(vec![0, 1]));
        assert!(s.update(2.0).is_err());
        let mut m = NodeStats::Moments { sum: 2.0, count: 1 };
        m.update(4.0).unwrap();
        assert_eq!(m, NodeStats::Moments { sum: 6.0, count: 2 });
    }

    #[test]
    fn learning_rates() {
        assert_eq!(LossKind::Log.default_eta(), 1.0);
        assert_eq!(LossKind::Quadratic { range_bound: 2.0 }.default_eta(), 1.0 / 32.0);
    }

    #[test]
    fn task_validation() {
        assert!(Task::classification(1).is_err());
        assert!(Task::regression(0.0).is_err());
        let reg = Task::regression(1.0).unwrap();
        assert!(reg.check_label(1.5).is_err());
        assert!(reg.check_label(-1.0).is_ok());
        let clf = Task::classification(3).unwrap();
        assert!(clf.check_label(2.0).is_ok());
        assert!(clf.check_label(0.5).is_err());
        assert!(clf.check_label(3.0).is_err());
    }

    proptest! {
        #[test]
        fn kt_stays_in_open_simplex(counts in proptest::collection::vec(0u64..10_000, 2..6)) {
            let p = kt_predict(&counts).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            for q in p {
                prop_assert!(q > 0.0 && q < 1.0);
            }
        }
    }
}
