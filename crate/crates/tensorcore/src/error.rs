use thiserror::Error;

/// Errors from tensor construction, graph ops, and optimizer steps.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("maxpool2 requires even spatial dims, got {h}x{w}")]
    OddDims { h: usize, w: usize },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss([usize; 4]),

    #[error("parameter {0:?} already exists")]
    DuplicateParam(String),

    #[error("unknown parameter {0:?}")]
    UnknownParam(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;
