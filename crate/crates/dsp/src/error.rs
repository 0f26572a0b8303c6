use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DspError>;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("cannot read {path}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav error in {path}: {message}")]
    Wav { path: PathBuf, message: String },
    #[error("unsupported audio encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("audio clip is empty")]
    EmptyAudio,
    #[error("clip has {samples} samples, need at least {needed}")]
    TooShort { samples: usize, needed: usize },
    #[error("expected sample rate {expected} Hz, got {actual} Hz")]
    SampleRate { expected: u32, actual: u32 },
    #[error("durations sum to {sum} but there are {frames} frames")]
    DurationMismatch { sum: usize, frames: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("malformed tensor file: {0}")]
    TensorFormat(String),
}
