//! Error types shared across the pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed a value outside the documented domain.
    #[error("invalid input: {0}")]
    Input(String),

    /// A registry, weights file, or config is unusable as configured.
    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite values or degenerate numerics where finite math was required.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Training could not reach its contract (accuracy floor, finite loss).
    #[error("training failure: {0}")]
    Training(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
    pub fn training(msg: impl Into<String>) -> Self {
        Error::Training(msg.into())
    }
}
