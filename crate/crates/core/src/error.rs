use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingestion error at {path}: {message}")]
    Ingest { path: PathBuf, message: String },

    #[error("validation error for sample {id}: {message}")]
    Validation { id: String, message: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{}", format_empty_classes(.0))]
    EmptyClasses(Vec<usize>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error in {branch} branch: {message}")]
    Numeric { branch: String, message: String },

    #[error("selected samples have no bounding box: {}", .0.join(", "))]
    MissingBBoxes(Vec<String>),

    #[error("unknown sample id {0}")]
    UnknownSample(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

fn format_empty_classes(classes: &[usize]) -> String {
    classes
        .iter()
        .map(|k| format!("class {k} empty"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn ingest(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Ingest {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn validation(id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            id: id.into(),
            message: message.into(),
        }
    }
}
