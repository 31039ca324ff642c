use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration, detected before any work starts.
    #[error("configuration error: {0}")]
    Config(String),

    /// A value outside its domain, e.g. a label id `>= K`.
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller broke an operation precondition (shape mismatch, empty batch).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Bad input data (non-finite pixels, missing artifacts).
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite loss or gradient during training.
    #[error("numeric error at {phase} step {step}: {message}")]
    Numeric {
        phase: &'static str,
        step: u64,
        message: String,
    },

    #[error("checkpoint error{}: {message}", tensor.as_ref().map(|t| format!(" in tensor `{t}`")).unwrap_or_default())]
    Checkpoint {
        tensor: Option<String>,
        message: String,
    },

    #[error("missing artifact {}: {what}", path.display())]
    Missing { path: PathBuf, what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn checkpoint(tensor: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Checkpoint {
            tensor: Some(tensor.into()),
            message: message.into(),
        }
    }

    pub(crate) fn checkpoint_file(message: impl Into<String>) -> Self {
        Error::Checkpoint {
            tensor: None,
            message: message.into(),
        }
    }
}
