//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: {message}")]
    ShapeMismatch { layer: usize, message: String },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("label {label} out of range for {classes} classes (index {index})")]
    LabelOutOfRange {
        label: usize,
        classes: usize,
        index: usize,
    },

    #[error("weight file {path}: {message}")]
    WeightFile { path: PathBuf, message: String },

    #[error("dataset file {path} at offset {offset}: {message}")]
    DatasetFile {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("quantization failed: {0}")]
    Quantization(String),

    #[error("training diverged at iteration {iter} (loss = {loss})")]
    Diverged { iter: u64, loss: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("attack setup: {0}")]
    Attack(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
