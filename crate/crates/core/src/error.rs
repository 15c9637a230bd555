use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] fcd_autograd::TensorError),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },
    #[error("text encoder failed on prompt {prompt:?}: {msg}")]
    TextEncoder { prompt: String, msg: String },
    #[error("training diverged at epoch {epoch}, step {step}: {msg}")]
    Diverged { epoch: usize, step: usize, msg: String },
    #[error("prediction value {value} at pixel ({y}, {x}) outside 0..{classes}")]
    PredictionRange {
        value: u8,
        y: usize,
        x: usize,
        classes: usize,
    },
    #[error("taxonomy mismatch: {0}")]
    TaxonomyMismatch(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(CoreError::Argument(msg.into()))
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CoreError {
    let path = path.into();
    move |source| CoreError::Io { path, source }
}
