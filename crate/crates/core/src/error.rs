use std::path::PathBuf;

use hoi_tensor::TensorError;
use thiserror::Error;

pub type Result<T, E = HoiError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HoiError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid box [{0}, {1}, {2}, {3}]")]
    InvalidBox(f64, f64, f64, f64),

    #[error("{context}: {message}")]
    Format { context: String, message: String },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("out-of-vocabulary category {0}")]
    OutOfVocabulary(u32),

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("predictions not sorted by descending score at position {0}")]
    Unsorted(usize),

    #[error("{0}")]
    Evaluation(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl HoiError {
    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        HoiError::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HoiError::Io {
            path: path.into(),
            source,
        }
    }
}
