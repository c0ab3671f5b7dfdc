use std::path::PathBuf;

use thiserror::Error;

use crate::data::nifti::NiftiError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] voxcore::VoxError),
    #[error(transparent)]
    Nifti(#[from] NiftiError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("data: {0}")]
    Data(String),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("non-finite {term}")]
    NonFinite { term: String },
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
    #[error("metric: {0}")]
    Metric(String),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
