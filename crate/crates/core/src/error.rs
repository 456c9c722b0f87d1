use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis { op: &'static str, axis: usize, rank: usize },

    #[error("{op}: reduction over an empty axis")]
    EmptyAxis { op: &'static str },

    #[error("{op}: non-finite value detected")]
    NonFinite { op: &'static str },

    #[error("{op}: zero denominator")]
    ZeroDenominator { op: &'static str },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("fft2d: dimension {dim} is not a power of two (pad spatial maps with `pad_to_pow2` first)")]
    NotPowerOfTwo { dim: usize },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("{path}: malformed data at byte {offset}: {reason}")]
    Format { path: PathBuf, offset: usize, reason: String },

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("dataset not found: {0}")]
    MissingDataset(PathBuf),

    #[error("gradient check failed for `{leaf}` (relative error {rel_err:.3e})")]
    GradCheck { leaf: String, rel_err: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
