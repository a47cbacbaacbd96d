use kbie_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KbieError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("document {doc}: {msg}")]
    Validation { doc: String, msg: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("numerics: {0}")]
    Numerics(String),
    #[error(transparent)]
    Tensor(TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<TensorError> for KbieError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Numerics { op } => KbieError::Numerics(format!("non-finite output of {op}")),
            other => KbieError::Tensor(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, KbieError>;

pub(crate) fn config_err(msg: impl Into<String>) -> KbieError {
    KbieError::Config(msg.into())
}
