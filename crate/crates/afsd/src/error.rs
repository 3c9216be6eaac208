use tensorcore::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AfsdError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("malformed {what}: {message}")]
    Format { what: String, message: String },
    #[error("non-finite loss at step {step} on {clip}: {detail}")]
    NonFinite { step: usize, clip: String, detail: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AfsdError {
    pub(crate) fn format(what: &str, message: impl Into<String>) -> Self {
        AfsdError::Format {
            what: what.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, AfsdError>;
