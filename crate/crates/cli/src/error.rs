//! One error type for every command; `main` prints it and exits nonzero.

use adaptdet_core::checkpoint::CheckpointError;
use adaptdet_core::data::DataError;
use adaptdet_core::model::ModelError;
use adaptdet_core::training::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("report: {0}")]
    Json(#[from] serde_json::Error),
}
