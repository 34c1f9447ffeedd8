use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("duplicate passage id {0:?}")]
    DuplicateId(String),

    #[error("bad magic")]
    BadMagic,

    #[error("truncated file: {0}")]
    Truncated(&'static str),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite loss for question {question_id:?}")]
    NonFiniteLoss { question_id: String },

    #[error("non-finite value in embedding at position {0}")]
    NonFinite(usize),

    #[error("transport error talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },

    #[error("protocol error from {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Coarse classification used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Transport,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Transport { .. } | Error::Protocol { .. } => ErrorClass::Transport,
            _ => ErrorClass::Data,
        }
    }
}
