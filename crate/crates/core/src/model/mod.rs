//! Classifier families built from a string-keyed backbone registry:
//! patch classifiers, single-view whole-image models (optionally behind a
//! fixed or learned resizer) and two-view CC/MLO fusion models.

mod archive;
mod backbones;
mod blocks;
mod classifier;
mod registry;
mod resizer;
mod spec;
mod transfer;

pub use archive::{load_archive, save_archive, sidecar_path, ArchiveMeta};
pub use backbones::{build_trunk, Arch, Trunk};
pub use blocks::make_divisible;
pub use classifier::{
    build_backbone, build_model, build_patch_classifier, build_single_view, build_two_view, raster_batch, weights_path, BuildOptions,
    Model, ModelInput, SingleViewInit, WeightsSource, WEIGHTS_DIR_ENV,
};
pub use registry::{registry, resolve_backbone, BackboneEntry, Tier};
pub use resizer::{FixedResizer, LearnedResizer};
pub use spec::{HeadSpec, ModelSpec, PretrainTag, ResizeMode};
pub use transfer::{transfer_weights, CopiedTensor, ReinitReason, ReinitTensor, WeightTransferReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown backbone `{0}`")]
    UnknownBackbone(String),
    #[error("backbone {backbone} has no {tag} weights")]
    UnknownTag { backbone: String, tag: PretrainTag },
    #[error("pretrained weights for {backbone} ({tag}) not found at {path}")]
    WeightsUnavailable {
        backbone: String,
        tag: PretrainTag,
        path: String,
    },
    #[error("resize target {target:?} is not smaller than input {input:?}")]
    UpscaleRequested {
        target: (usize, usize),
        input: (usize, usize),
    },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("archive {path}: {reason}")]
    Archive { path: String, reason: String },
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl ModelError {
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::UnknownBackbone(_) => "UnknownBackbone",
            ModelError::UnknownTag { .. } => "UnknownPretrainTag",
            ModelError::WeightsUnavailable { .. } => "WeightsUnavailable",
            ModelError::UpscaleRequested { .. } => "UpscaleRequested",
            ModelError::InvalidSpec(_) => "InvalidModelSpec",
            ModelError::Archive { .. } => "ArchiveError",
            ModelError::Tensor(_) => "TensorError",
        }
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;
