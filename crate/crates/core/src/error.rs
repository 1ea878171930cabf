use std::path::PathBuf;

/// Everything that can go wrong across the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("image side {side} is not divisible by {divisor} (remainder {remainder})")]
    NotDivisible {
        side: usize,
        divisor: usize,
        remainder: usize,
    },
    #[error("image must be square, got {height}x{width}")]
    NotSquare { height: usize, width: usize },
    #[error("missing count {requested} must be smaller than the piece count {pieces}")]
    TooManyMissing { requested: usize, pieces: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("sequence length {len} exceeds limit {max}")]
    LengthOverflow { len: usize, max: usize },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("stale artifact {path}: {detail}")]
    DigestMismatch { path: PathBuf, detail: String },
    #[error("refused: {0}")]
    Refused(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure classes used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonFinite(_) => ErrorClass::Numeric,
            Error::InvalidArgument(_)
            | Error::Toml(_)
            | Error::Refused(_)
            | Error::TooManyMissing { .. }
            | Error::DigestMismatch { .. } => ErrorClass::Config,
            _ => ErrorClass::Data,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
