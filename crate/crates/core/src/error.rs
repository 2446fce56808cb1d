//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{kind}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        kind: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{kind}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        kind: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("{kind}: operation needs a non-empty axis")]
    EmptyAxis { kind: &'static str },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("backward requires a loss tensor that participates in the graph")]
    LossNotInGraph,

    #[error("graph already consumed by a backward pass")]
    GraphConsumed,

    #[error("token id {id} out of vocabulary (size {vocab})")]
    TokenOutOfVocab { id: usize, vocab: usize },

    #[error("attention mask leaves row {row} fully masked")]
    AllMasked { row: usize },

    #[error("unknown time-series encoder variant `{0}`")]
    UnknownVariant(String),

    #[error("unknown model `{name}`; valid names: {valid}")]
    UnknownModel { name: String, valid: String },

    #[error("top-k recall with k={k} exceeds label count {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("metric needs both classes, got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },

    #[error("metric needs at least one positive sample")]
    NoPositives,

    #[error("{0}")]
    InvalidConfig(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("NaN gradient in parameter `{0}`")]
    NanGradient(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
