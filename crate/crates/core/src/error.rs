//! Error type shared by every analytics module.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    /// A bundle entity (instance, segment, concept) failed validation.
    #[error("{entity}: {message}")]
    InvalidEntity { entity: String, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("{what} must not be empty")]
    Empty { what: &'static str },

    #[error("{what} has zero norm")]
    ZeroNorm { what: String },

    #[error("invalid parameter {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("unknown {kind} '{id}'")]
    NotFound { kind: &'static str, id: String },

    #[error("training diverged: {0}")]
    Training(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn entity(entity: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidEntity { entity: entity.into(), message: message.into() }
    }

    pub(crate) fn param(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter { name, message: message.into() }
    }

    /// The offending entity id, when the error concerns one.
    pub fn entity_id(&self) -> Option<&str> {
        match self {
            Error::InvalidEntity { entity, .. } => Some(entity),
            Error::NotFound { id, .. } => Some(id),
            Error::ZeroNorm { what } => Some(what),
            _ => None,
        }
    }
}
