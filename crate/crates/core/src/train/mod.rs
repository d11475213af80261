//! Learning-rate schedule, training loops for the classifier families and
//! the multi-round best-on-validation protocol.

mod augment;
mod config;
mod data;
mod engine;
mod ledger;
mod pipelines;
mod protocol;
mod schedule;

pub use augment::AugmentPolicy;
pub use config::{Objective, OptimizerKind, TrainConfig};
pub use data::{ExampleSet, InMemorySet, PairSet, PatchSet, ViewSet};
pub use engine::{evaluate, metric_name, train_run, EpochMetrics, Evaluation, RunResult, TestSummary};
pub use ledger::{config_hash, RunLedger};
pub use pipelines::{train_patch_classifier, train_two_view, train_whole_image, WholeImageInit};
pub use protocol::{run_protocol, summarize_rounds, ProtocolResult, RoundSummary};
pub use schedule::{lr_at, LrSchedule};

use thiserror::Error;

use crate::dataset::{DatasetError, Split};
use crate::model::ModelError;
use crate::patches::PatchError;
use crate::raster::RasterError;
use crate::stats::{ScoreCsvError, StatsError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("model head has {model} classes but the data has {data}")]
    ClassMismatch { model: usize, data: usize },
    #[error("split {0} has no examples")]
    EmptySplit(Split),
    #[error("split {split} needs both classes ({n_pos} positive, {n_neg} negative)")]
    SingleClassSplit { split: Split, n_pos: usize, n_neg: usize },
    #[error("prerequisite checkpoint {0} not found")]
    MissingPrerequisiteCheckpoint(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Scores(#[from] ScoreCsvError),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl TrainError {
    pub fn code(&self) -> &'static str {
        match self {
            TrainError::ClassMismatch { .. } => "ClassMismatch",
            TrainError::EmptySplit(_) => "EmptySplit",
            TrainError::SingleClassSplit { .. } => "SingleClassSplit",
            TrainError::MissingPrerequisiteCheckpoint(_) => "MissingPrerequisiteCheckpoint",
            TrainError::InvalidConfig(_) => "InvalidConfig",
            TrainError::Io { .. } => "Io",
            TrainError::Model(e) => e.code(),
            TrainError::Dataset(e) => e.code(),
            TrainError::Patch(e) => e.code(),
            TrainError::Raster(_) => "RasterError",
            TrainError::Stats(e) => e.code(),
            TrainError::Scores(_) => "ScoreCsvError",
            TrainError::Tensor(_) => "TensorError",
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        TrainError::Io { path: path.display().to_string(), source }
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;
