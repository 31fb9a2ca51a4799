use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("non-increasing timestamp at row {row} (t = {t})")]
    NonIncreasingTime { row: usize, t: f64 },

    #[error("inconsistent demonstrations: {0}")]
    InconsistentDemos(String),

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("degenerate EM: component {component} holds {weight:.3} effective samples (< {dim})")]
    DegenerateEm { component: usize, weight: f64, dim: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("body point index {index} out of range ({count} points)")]
    InvalidBodyPoint { index: usize, count: usize },

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("constraint ({n}, {f}) produced a non-finite gradient or value")]
    NonFiniteConstraint { n: usize, f: usize },

    #[error("dual QP is unbounded along coordinate {0}")]
    UnboundedDual(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}
