use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NtmError>;

#[derive(Debug, Error)]
pub enum NtmError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite loss at step {step} (first instance index {instance})")]
    NonFiniteLoss { step: u64, instance: u64 },

    #[error("checkpoint error in field `{field}`: {detail}")]
    Checkpoint { field: String, detail: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl NtmError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        NtmError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn checkpoint(field: impl Into<String>, detail: impl Into<String>) -> Self {
        NtmError::Checkpoint {
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NtmError::Io {
            path: path.into(),
            source,
        }
    }
}
