use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition (empty collections, blank text, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Dimensions of related collections disagree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An index is outside the valid range.
    #[error("index out of range: {0}")]
    Index(String),

    /// A numeric argument is outside the function's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A record could not be parsed at all.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A record parsed but does not match the dataset schema.
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    /// A configuration value is unusable.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
