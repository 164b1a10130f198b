use std::path::PathBuf;
use thiserror::Error;

/// Errors raised by raster, mask, and manifest handling.
#[derive(Debug, Error)]
pub enum RasterError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("truncated payload: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },

    #[error("trailing bytes after payload: {0} extra")]
    TrailingBytes(usize),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("entry {index}: dangling path {path}")]
    DanglingPath { index: usize, path: PathBuf },

    #[error("entry {index}: label dims {label_w}x{label_h} do not match patch dims {patch_w}x{patch_h}")]
    LabelDimsMismatch {
        index: usize,
        patch_w: u32,
        patch_h: u32,
        label_w: u32,
        label_h: u32,
    },

    #[error("NaN probability at pixel ({x},{y})")]
    NanProbability { x: u32, y: u32 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RasterError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RasterError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, RasterError>;
