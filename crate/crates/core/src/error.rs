use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid phase code {0} (expected 1-5)")]
    InvalidPhaseCode(i64),

    #[error("degenerate orientation quaternion (norm {norm:e})")]
    DegenerateOrientation { norm: f64 },

    #[error("channel {channel} has zero variance")]
    DegenerateChannel { channel: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("class {0} absent from the training split")]
    MissingClass(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("session has {len} frames, window needs {needed}")]
    SessionTooShort { len: usize, needed: usize },

    #[error("model file version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt model file: {0}")]
    CorruptFile(String),

    #[error("invalid step attempt: {0}")]
    InvalidAttempt(String),

    #[error("length mismatch: {left} vs {right}")]
    Length { left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("network error: {0}")]
    Net(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    /// Stable identifier used in machine-readable CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidPhaseCode(_) => "InvalidPhaseCode",
            Error::DegenerateOrientation { .. } => "DegenerateOrientation",
            Error::DegenerateChannel { .. } => "DegenerateChannel",
            Error::Shape(_) => "ShapeError",
            Error::MissingClass(_) => "MissingClass",
            Error::InsufficientData(_) => "InsufficientData",
            Error::SessionTooShort { .. } => "SessionTooShort",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::CorruptFile(_) => "CorruptFile",
            Error::InvalidAttempt(_) => "InvalidAttempt",
            Error::Length { .. } => "LengthError",
            Error::Config(_) => "ConfigError",
            Error::Parse { .. } => "ParseError",
            Error::Io { .. } | Error::Net(_) => "IoError",
        }
    }
}
