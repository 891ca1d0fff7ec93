use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("corrupt bitstream at byte {offset}: {reason}")]
    Bitstream { offset: usize, reason: String },

    #[error("model mismatch: stream was coded with model {expected:08x}, decoder has {actual:08x}")]
    ModelMismatch { expected: u32, actual: u32 },

    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn bitstream(offset: usize, reason: impl Into<String>) -> Self {
        Error::Bitstream {
            offset,
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Divergence { .. } => 3,
            Error::Bitstream { .. } | Error::ModelMismatch { .. } | Error::Checkpoint(_) => 4,
            Error::Evaluation(_) => 5,
            _ => 1,
        }
    }
}
