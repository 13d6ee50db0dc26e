use std::path::PathBuf;

use homonmt_nnet::NnetError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate entry for {key:?}")]
    Duplicate {
        path: String,
        line: usize,
        key: String,
    },
    #[error("character {ch:?} at position {position} is not in the syllable table")]
    Unmapped { ch: char, position: usize },
    #[error("input is not valid UTF-8")]
    Encoding,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    Range { id: usize, size: usize },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
