//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A coordinate or index fell outside its valid range.
    #[error("out of range: {0}")]
    OutOfRange(String),

    /// Array shapes do not match the grid they are paired with.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Inputs that must have been produced together do not agree.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// A value that must be finite was NaN or infinite.
    #[error("numerical abort: {0}")]
    NonFinite(String),

    #[error("parse error in {path} at {location}: {message}")]
    Parse {
        path: String,
        location: String,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn range(msg: impl Into<String>) -> Self {
        Error::OutOfRange(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::ContractViolation(msg.into())
    }

    pub fn parse(path: &std::path::Path, location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            location: location.into(),
            message: message.into(),
        }
    }
}
