use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config: {path}: {message}")]
    Config { path: String, message: String },
    #[error("config: {path}: {source}")]
    Unresolvable {
        path: String,
        #[source]
        source: dsgd_core::Error,
    },
    #[error(transparent)]
    Core(#[from] dsgd_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("json output: {0}")]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("{0}")]
    Rejected(String),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn config_err(path: impl Into<String>, message: impl Into<String>) -> LabError {
    LabError::Config { path: path.into(), message: message.into() }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> LabError {
    let path = path.into();
    move |source| LabError::Io { path, source }
}
