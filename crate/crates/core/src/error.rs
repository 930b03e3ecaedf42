use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpoqError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite input component at index {0}")]
    NonFinite(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("initialization error: {0}")]
    Initialization(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SpoqError>;
