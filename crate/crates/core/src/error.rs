//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid input or configuration; maps to CLI exit code 1.
    #[error("validation error: {0}")]
    Validation(String),

    /// Pretraining produced a non-finite loss. The iteration index and batch
    /// seed allow the offending step to be replayed in isolation.
    #[error("non-finite loss at iteration {iteration} (batch seed {batch_seed})")]
    NonFiniteLoss { iteration: usize, batch_seed: u64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
