use std::path::PathBuf;

use rascore::RasterError;
use tensorcore::TensorError;
use thiserror::Error;

/// How an error maps onto the CLI exit-code contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Exit code 2: invalid or inconsistent configuration.
    Config,
    /// Exit code 3: missing, malformed, or mismatched data.
    Data,
    /// Exit code 4: numeric failure (NaN/Inf) during compute.
    Numeric,
}

#[derive(Debug, Error)]
pub enum WetsegError {
    #[error(transparent)]
    Raster(#[from] RasterError),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("config error: {0}")]
    Config(String),

    #[error("config validation failed:\n{}", .0.join("\n"))]
    ConfigViolations(Vec<String>),

    #[error("data error: {0}")]
    Data(String),

    #[error("unknown band {0:?}")]
    UnknownBand(String),

    #[error("split {0} is empty")]
    EmptySplit(rascore::Split),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: u32, batch: usize },

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("checkpoint kind mismatch: expected {expected}, got {got}")]
    KindMismatch { expected: String, got: String },

    #[error("encoder name sets differ: missing in checkpoint: {missing:?}; only in checkpoint: {unexpected:?}")]
    TransferNames { missing: Vec<String>, unexpected: Vec<String> },

    #[error("shape mismatch on transferred parameter {name:?}: checkpoint {ckpt:?} vs model {model:?}")]
    TransferShape { name: String, ckpt: [usize; 4], model: [usize; 4] },

    #[error("label downscale mapping leaves the target grid at source pixel ({x},{y})")]
    MappingOutside { x: u32, y: u32 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl WetsegError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        WetsegError::Io { path: path.into(), source }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            WetsegError::Config(_) | WetsegError::ConfigViolations(_) => ErrorCategory::Config,
            WetsegError::Tensor(TensorError::NonFinite { .. }) | WetsegError::NonFiniteLoss { .. } => {
                ErrorCategory::Numeric
            }
            _ => ErrorCategory::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, WetsegError>;
