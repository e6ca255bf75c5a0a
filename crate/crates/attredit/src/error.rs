//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any operation in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation precondition (bad shape, bad range, bad width).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A tag or attribute index does not exist in the active schema,
    /// or a checkpoint/annotation column does not match it.
    #[error("schema error: {0}")]
    Schema(String),

    /// A model or run configuration is internally inconsistent.
    /// Raised at construction time, never mid-computation.
    #[error("configuration error: {0}")]
    Config(String),

    /// A training step produced a non-finite loss; the run is aborted.
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    /// Sampling could not be satisfied by the dataset.
    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
