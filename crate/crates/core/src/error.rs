//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid scene graph: {0}")]
    InvalidSceneGraph(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matching error: {0}")]
    Matching(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("dataset record {index}: {message}")]
    DatasetRecord { index: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint config hash mismatch: checkpoint {found}, config {expected}")]
    ConfigHashMismatch { found: String, expected: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(String),
}
