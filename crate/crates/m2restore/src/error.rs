//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid hyperparameter or run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite values or other numeric failure during computation.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed file contents (checkpoint, image, manifest, ...).
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
