use thiserror::Error;

/// Errors raised by signal simulation, encoding, and reconstruction routines.
#[derive(Debug, Error)]
pub enum OssiError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("container format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, OssiError>;

impl OssiError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        OssiError::InvalidArgument(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        OssiError::ShapeMismatch(msg.into())
    }
}
