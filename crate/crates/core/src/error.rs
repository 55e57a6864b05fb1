//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible matrix shapes for an operation.
    #[error("shape mismatch in {op}: left is {lhs:?}, right is {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    /// An API contract was violated (wrong argument structure, out-of-bounds
    /// index, empty batch where one is required, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input file.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Numerically degenerate input (zero-norm row, all-equal statistics, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Batch selection could not proceed.
    #[error("selection error: {0}")]
    Selection(String),

    /// Training failed (non-finite loss or gradient).
    #[error("training error: {0}")]
    Train(String),

    /// Required input file or checkpoint is missing.
    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
