use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("model config error at layer {index}: {message}")]
    Config { index: usize, message: String },

    #[error("model config error: {0}")]
    ConfigGeneral(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("weights file rejected: {0}")]
    WeightsFormat(String),

    #[error("weights do not match model at tensor `{name}`: {detail}")]
    WeightsMismatch { name: String, detail: String },

    #[error("audio error in {}: {message}", path.display())]
    Audio { path: PathBuf, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn audio(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Audio {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
