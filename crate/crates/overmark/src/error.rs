//! Crate-wide error type.

use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the watermarking toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value is invalid or inconsistent with another one.
    #[error("configuration error: {0}")]
    Config(String),

    /// An input (image, message, tensor) violates an operation's contract.
    #[error("invalid input: {0}")]
    Input(String),

    /// A checkpoint file is malformed or does not match the requesting config.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A corpus manifest entry is missing, corrupt, or inconsistent.
    #[error("corpus error: {0}")]
    Corpus(String),

    /// Training diverged (non-finite loss).
    #[error("training diverged at stage {stage}, step {step}: loss = {loss}")]
    Diverged { stage: u8, step: usize, loss: f64 },

    /// File IO failure, annotated with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Image decode/encode failure.
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// Tensor backend failure.
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    /// Serialization failure (manifests, logs, checkpoint metadata).
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn checkpoint(msg: impl Into<String>) -> Self {
        Error::Checkpoint(msg.into())
    }

    pub fn corpus(msg: impl Into<String>) -> Self {
        Error::Corpus(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image { path: path.into(), source }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
