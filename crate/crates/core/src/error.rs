//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse: {file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("unknown locale code '{0}'")]
    UnknownLocale(String),

    #[error("config: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("segmentation: {0}")]
    Segmentation(String),

    #[error("vocab: {0}")]
    Vocab(String),

    #[error("shape: {0}")]
    Shape(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite gradient in tensor '{0}'")]
    NonFinite(String),

    #[error("audio: {path}: {msg}")]
    Audio { path: String, msg: String },

    #[error("metric: {0}")]
    Metric(String),
}

impl Error {
    /// Stable category tag, used by the CLI for one-line machine-parsable errors.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::UnknownLocale(_) => "locale",
            Error::Config(_) => "config",
            Error::InvalidInput(_) => "input",
            Error::Segmentation(_) => "segmentation",
            Error::Vocab(_) => "vocab",
            Error::Shape(_) => "shape",
            Error::Checkpoint(_) => "checkpoint",
            Error::NonFinite(_) => "non-finite",
            Error::Audio { .. } => "audio",
            Error::Metric(_) => "metric",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(file: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
