//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by graph loading, training, and aggregation.
#[derive(Debug, Error)]
pub enum Error {
    /// A dataset file could not be parsed. Carries the 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Structural validation of a graph or partition failed.
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Matrix/vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An operation that needs at least one selected node got none.
    #[error("empty mask: {0}")]
    EmptyMask(&'static str),

    /// A gradient or parameter turned non-finite. Names the tensor.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Filesystem failure while reading or writing artifacts.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
