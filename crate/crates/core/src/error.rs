use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
///
/// The variants are grouped into categories (see [`Error::category`]) that the
/// command-line front end maps onto process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("build error at layer {index}: {reason}")]
    Build { index: usize, reason: String },

    #[error("invalid width multiplier {0}")]
    InvalidMultiplier(f64),

    #[error("label {label} outside class range 0..{classes}")]
    InvalidLabel { label: usize, classes: usize },

    #[error("target of length {target_len} needs {required} frames, only {frames} available")]
    InfeasibleTarget {
        target_len: usize,
        required: usize,
        frames: usize,
    },

    #[error("brute-force oracle instance too large: {paths} paths (limit {limit})")]
    OracleTooLarge { paths: f64, limit: f64 },

    #[error("unknown token id {0}")]
    InvalidToken(usize),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("optimizer state error: {0}")]
    State(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error class used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Divergence,
    Other,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config { .. } | Error::InvalidMultiplier(_) => ErrorCategory::Config,
            Error::Data(_)
            | Error::InfeasibleTarget { .. }
            | Error::Io { .. }
            | Error::Checkpoint(_)
            | Error::EmptyInput(_)
            | Error::InvalidToken(_) => ErrorCategory::Data,
            Error::Divergence(_) | Error::Numeric(_) => ErrorCategory::Divergence,
            _ => ErrorCategory::Other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
