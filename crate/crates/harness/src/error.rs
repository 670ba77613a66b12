use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Config { path: PathBuf, source: toml::de::Error },

    #[error("invalid config: {0}")]
    Invalid(String),

    #[error("task {task}: {source}")]
    Task { task: u32, source: space_core::Error },

    #[error(transparent)]
    Core(#[from] space_core::Error),

    #[error("fixture file: {0}")]
    Fixture(String),

    #[error("unknown report format {0:?} (expected records or csv)")]
    UnknownFormat(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
