use std::path::PathBuf;

use dstts_dsp::DspError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("unknown phoneme {0:?}")]
    UnknownPhoneme(String),
    #[error("phoneme id {id} outside vocabulary of {size}")]
    PhonemeOutOfRange { id: usize, size: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
