use thiserror::Error;

/// Error type shared by all lark-core modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("shape mismatch for {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// The label cannot be aligned to the available frames
    /// (required path length 2L+1 adjusted for repeats exceeds T).
    #[error("label of length {label_len} is infeasible for {frames} frames")]
    InfeasibleLabel { label_len: usize, frames: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("unknown checkpoint format version {0}")]
    UnknownFormatVersion(u32),

    #[error("out-of-vocabulary word: {0}")]
    Oov(String),

    #[error("unknown token: {0}")]
    UnknownToken(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("wav error: {0}")]
    Wav(String),
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        Error::Wav(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
