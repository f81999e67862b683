//! Aggregated Mondrian Forests for online classification and regression.
//!
//! Each tree grows a Mondrian partition one sample at a time and predicts with
//! the exponentially weighted average of all of its prunings, computed exactly
//! by a per-node sum-product recursion. The forest averages its trees.
//!
//! ```
//! use amf::{AmfForest, ForestConfig, Task};
//!
//! let task = Task::classification(2).unwrap();
//! let mut forest = AmfForest::new(ForestConfig::new(task).with_trees(5), 2).unwrap();
//! forest.learn_one(&[0.1, 0.2], 0.0).unwrap();
//! forest.learn_one(&[0.9, 0.7], 1.0).unwrap();
//! let p = forest.predict_proba(&[0.8, 0.8]).unwrap();
//! assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
//! ```

pub mod cli;
pub mod ctw;
pub mod data;
pub mod error;
pub mod forecasters;
pub mod forest;
pub mod metrics;
pub mod mondrian;
pub mod oracle;
pub mod tree_store;

pub use error::{AmfError, Result};
pub use forecasters::{LossKind, NodeStats, Prediction, Task};
pub use forest::{AmfForest, DummyClassifier, DummyRegressor, ForestConfig, UpdateTrace, Variant};
pub use tree_store::{MondrianTree, NodeId, NodeRecord};
