use std::path::PathBuf;

use crate::autodiff::AutodiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed ICD-10 code {0:?}: expected a letter followed by digits")]
    Icd10(String),

    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("not enough eligible notes: need {needed}, have {available}")]
    Sizing { needed: usize, available: usize },

    #[error("token id {id} at position {position} is out of range (vocab size {vocab_size})")]
    TokenOutOfRange {
        id: u32,
        position: usize,
        vocab_size: usize,
    },

    #[error("invalid tokenizer: {0}")]
    Tokenizer(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sequence of length {len} exceeds context length {context_len}")]
    SequenceTooLong { len: usize, context_len: usize },

    #[error("checkpoint tokenizer hash {found} does not match supplied tokenizer {expected}")]
    TokenizerHashMismatch { expected: String, found: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("non-finite loss at iteration {iteration} (example {example})")]
    NonFiniteLoss { iteration: usize, example: usize },

    #[error("interrupted")]
    Interrupted,

    #[error("input mismatch: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
