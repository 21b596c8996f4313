//! Error types shared across the library.

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An input value fell outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A structural precondition between arguments was violated.
    #[error("contract error: {0}")]
    Contract(String),

    /// Malformed payload; the message names the offending field path.
    #[error("parse error: {0}")]
    Parse(String),

    /// A remote service could not be reached or answered abnormally.
    #[error("transport error: {0}")]
    Transport(String),

    /// Trajectory planning could not produce a valid pose set.
    #[error("planning error: {0}")]
    Planning(String),

    /// Optimization produced a non-finite loss.
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}
