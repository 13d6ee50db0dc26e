use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnetError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("sequence length {len} exceeds max_len {max_len}")]
    Length { len: usize, max_len: usize },
    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenRange { id: usize, vocab: usize },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("cross entropy undefined: every position is ignored")]
    AllIgnored,
    #[error("training error: {0}")]
    Training(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnetError>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> NnetError {
    NnetError::Shape {
        op,
        detail: detail.into(),
    }
}
