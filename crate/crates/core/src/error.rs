use std::path::PathBuf;

use thiserror::Error;

use crate::data::PpmError;
use crate::weights_io::WeightsError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("axis {axis} out of range for rank-{rank} tensor")]
    AxisOutOfRange { axis: usize, rank: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("capability error: {0}")]
    Capability(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("class-count mismatch: model has {model} classes, dataset has {dataset}")]
    ClassMismatch { model: usize, dataset: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("failed to decode {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: PpmError,
    },

    #[error(transparent)]
    Ppm(#[from] PpmError),

    #[error(transparent)]
    Weights(#[from] WeightsError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
