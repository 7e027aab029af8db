use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors disagree along a named axis.
    #[error("{op}: dimension mismatch on axis {axis}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("parse error in {path} at byte {offset}: {message}")]
    Parse {
        path: String,
        offset: usize,
        message: String,
    },

    #[error("unsupported format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite value in tensor `{tensor}` at step {step}")]
    NonFinite { tensor: String, step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, axis: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            op,
            axis,
            expected,
            got,
        }
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    /// Process exit code for this error class: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension { .. } | Error::Usage(_) | Error::Config { .. } => 1,
            Error::Parse { .. }
            | Error::Format { .. }
            | Error::Codec(_)
            | Error::Checkpoint(_)
            | Error::Io(_) => 2,
            Error::NonFinite { .. } => 3,
        }
    }
}
