//! Crate-wide error type.
//!
//! Variants are grouped so the CLI can map them onto distinct exit codes
//! (configuration vs. data vs. numerical failures).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    #[error("shape mismatch in {op}: {details}")]
    Shape { op: &'static str, details: String },

    /// An input violates a precondition of the named operation.
    #[error("invalid input for {op}: {details}")]
    Input { op: &'static str, details: String },

    /// An iterative routine hit its iteration cap.
    #[error("{op} did not converge after {iterations} iterations")]
    Convergence { op: &'static str, iterations: usize },

    /// Bad run configuration (missing/unknown keys, invalid values).
    #[error("configuration error: {0}")]
    Config(String),

    /// Dataset ingestion failure, with file and row/column context.
    #[error("data error in {path}: {details}")]
    Data { path: String, details: String },

    /// A statistical estimate could not be formed from the given data.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// Checkpoint serialization/deserialization failure.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Non-finite values or other numerical breakdown at runtime.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::Shape {
            op,
            details: details.into(),
        }
    }

    pub fn input(op: &'static str, details: impl Into<String>) -> Self {
        Error::Input {
            op,
            details: details.into(),
        }
    }

    pub fn data(path: impl Into<String>, details: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            details: details.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
