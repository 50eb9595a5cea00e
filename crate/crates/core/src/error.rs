use std::path::PathBuf;

use thiserror::Error;

/// Errors reported by every fallible operation in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch between operands.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// Input outside an operation's domain (empty batch, bad fraction, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation produced NaN or Inf.
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed binary input (IDX files, cache containers, checkpoints).
    #[error("parse error at offset {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    /// Class label outside [0, K).
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(offset: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
