use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operand has a dimension the operation cannot accept.
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("weights do not match model: missing [{}], extra [{}]", missing.join(", "), extra.join(", "))]
    WeightMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("backward requires a scalar output, got dims {0:?}")]
    NotScalar([usize; 4]),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("class names differ: {0:?} vs {1:?}")]
    ClassNames(Vec<String>, Vec<String>),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
