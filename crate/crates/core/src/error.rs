use std::io;

use thiserror::Error;

pub type Result<T, E = CboError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CboError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid initialization: {0}")]
    InvalidInit(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("non-finite particle position at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("empty subset or dataset: {0}")]
    Empty(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
