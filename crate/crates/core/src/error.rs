use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the echo-cancellation pipeline and its components.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// The adaptive filter diverged and was reset; processing may continue.
    #[error("adaptive filter reset after numerical fault")]
    FilterReset,

    #[error("design error: {0}")]
    Design(String),

    #[error("unsupported sample rate {got} Hz (expected {expected} Hz)")]
    SampleRate { got: u32, expected: u32 },

    #[error("autodiff: {0}")]
    Graph(String),

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
