//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shape disagreement, names both offending shapes.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Numeric domain violation (log of non-positive value, etc).
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    /// Caller violated a stated precondition.
    #[error("precondition violated in {op}: {msg}")]
    Precondition { op: &'static str, msg: String },

    /// Bad user input: unknown category, overlapping splits, bad flag.
    #[error("usage error: {0}")]
    Usage(String),

    /// Structural mismatch between weight banks / partition maps.
    #[error("structural error in {layer}: {msg}")]
    Structural { layer: String, msg: String },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss at step {step} in term `{term}`")]
    NonFiniteLoss { step: u64, term: &'static str },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
