//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform for the named tensor operation.
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },

    /// A tensor operation received NaN or infinite input.
    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },

    /// An API contract was violated by the caller.
    #[error("{0}")]
    Usage(String),

    /// Malformed bracketed tree input; `offset` is a character offset into the line.
    #[error("tree parse error at offset {offset}: {msg}")]
    TreeParse { offset: usize, msg: String },

    /// Corpus or data-file problem (misaligned files, empty corpus, bad ids).
    #[error("{0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code: 2 for configuration and usage mistakes, 1 for
    /// data, I/O, and everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 2,
            _ => 1,
        }
    }
}
