//! File formats, synthetic datasets and the command-line front end for the
//! `supersplat` renderer.

pub mod cli;
pub mod dataset;
pub mod report;
pub mod scene_file;
pub mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkbenchError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("scene file: {0}")]
    SceneFormat(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] supersplat::Error),
}

pub type Result<T> = std::result::Result<T, WorkbenchError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> WorkbenchError {
    let path = path.into();
    move |source| WorkbenchError::Io { path, source }
}
