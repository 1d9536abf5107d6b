use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node {node}: shape mismatch, expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        node: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("leaf `{0}` is not bound")]
    UnboundLeaf(String),

    #[error("backward requires a scalar output, node {node} has shape {shape:?}")]
    NonScalarOutput { node: usize, shape: Vec<usize> },

    #[error("backward called before forward evaluation")]
    NotEvaluated,

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("dimension index {index} out of range for input dimension {dim}")]
    DimensionOutOfRange { index: usize, dim: usize },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("degenerate coordinate range in dimension {dim}: [{lo}, {hi}]")]
    DegenerateRange { dim: usize, lo: f64, hi: f64 },

    #[error("sample set too large: {count} points exceeds cap {cap}")]
    TooManyPoints { count: usize, cap: usize },

    #[error("empty sample set")]
    EmptySampleSet,

    #[error("difference-based regularizer requires a meshgrid sample set")]
    NotMeshgrid,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("length mismatch for {what}: expected {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
