use thiserror::Error;

use crate::tree_store::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AmfError {
    #[error("feature dimension must be at least 1")]
    ZeroDimension,

    #[error("dimension mismatch: expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("number of classes must be at least 2, got {0}")]
    TooFewClasses(usize),

    #[error("label {label} is not a class index in [0, {n_classes})")]
    ClassOutOfRange { label: f64, n_classes: usize },

    #[error("label {label} lies outside [-{bound}, {bound}]")]
    LabelOutOfRange { label: f64, bound: f64 },

    #[error("non-finite value in input")]
    NonFinite,

    #[error("point lies outside the unit box")]
    OutsideUnitBox,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unknown or detached node {0:?}")]
    DetachedNode(NodeId),

    #[error("birth time {birth} violates ordering for node {node:?}")]
    BirthOrder { node: NodeId, birth: f64 },

    #[error("log-loss undefined: prediction puts zero mass on the observed class")]
    ZeroMass,

    #[error("tree has {internal} internal nodes, enumeration guard is {limit}")]
    GuardExceeded { internal: usize, limit: usize },

    #[error("invalid pruning: {0}")]
    InvalidPruning(&'static str),

    #[error("stream does not match tree: {0}")]
    StreamMismatch(String),

    #[error("scores and labels must contain both classes")]
    SingleClass,

    #[error("task mismatch: {0}")]
    TaskMismatch(&'static str),

    #[error("batch lengths differ: {features} feature rows, {labels} labels")]
    BatchLength { features: usize, labels: usize },
}

pub type Result<T> = std::result::Result<T, AmfError>;
