use thiserror::Error;

/// Errors produced while building penalties, solving, tuning or reading data.
#[derive(Debug, Error)]
pub enum FsglError {
    /// The grid, mask, fusion structure or group partition is malformed.
    #[error("structural error: {0}")]
    Structural(String),
    /// An argument is out of range or shapes disagree.
    #[error("validation error: {0}")]
    Validation(String),
    /// A numerical invariant was violated inside the solver.
    #[error("internal error: {0}")]
    Internal(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, FsglError>;

pub(crate) fn validation<T>(msg: impl Into<String>) -> Result<T> {
    Err(FsglError::Validation(msg.into()))
}

pub(crate) fn structural<T>(msg: impl Into<String>) -> Result<T> {
    Err(FsglError::Structural(msg.into()))
}
