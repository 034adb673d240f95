use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    /// Malformed binary or image file. `offset` is the byte position where
    /// decoding failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    /// Malformed text record.
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A value violates a documented precondition or invariant.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("backward called without a matching forward trace")]
    MissingForward,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("calibration failed: {0}")]
    Calibration(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    /// True for errors caused by bad user input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Format { .. } | Error::Parse { .. } | Error::Invalid(_) | Error::Shape(_)
        )
    }
}
