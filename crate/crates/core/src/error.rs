use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("fold count must be at least 2, got {0}")]
    InvalidFoldCount(usize),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("invalid search space: {0}")]
    InvalidSearchSpace(String),

    #[error("out-of-fold matrix incomplete: {0}")]
    IncompleteOof(String),

    #[error("leakage detected: {0}")]
    LeakageDetected(String),

    #[error("invalid meta bank: {0}")]
    InvalidBank(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("threshold probability {0} outside (0, 1)")]
    InvalidThresholdProbability(f64),

    #[error("background set is empty")]
    EmptyBackground,

    #[error("coalition budget {budget} below minimum {minimum}")]
    InsufficientBudget { budget: usize, minimum: usize },

    #[error("cannot decode {}: {reason}", path.display())]
    DecodeError { path: PathBuf, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    /// Stable machine-readable tag, used in CLI error payloads.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidFoldCount(_) => "invalid_fold_count",
            Error::DegenerateLabels(_) => "degenerate_labels",
            Error::InvalidInput(_) => "invalid_input",
            Error::ShapeError(_) => "shape",
            Error::InvalidSearchSpace(_) => "invalid_search_space",
            Error::IncompleteOof(_) => "incomplete_oof",
            Error::LeakageDetected(_) => "leakage",
            Error::InvalidBank(_) => "invalid_bank",
            Error::EmptyInput(_) => "empty_input",
            Error::InvalidThresholdProbability(_) => "invalid_threshold_probability",
            Error::EmptyBackground => "empty_background",
            Error::InsufficientBudget { .. } => "insufficient_budget",
            Error::DecodeError { .. } => "decode",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Serde(_) => "serde",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
