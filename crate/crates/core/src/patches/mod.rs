//! Patch datasets: jittered crops around lesions plus tissue-bearing
//! background crops, materialized as PNG files with a CSV index.

mod builder;
mod class;
mod sampler;

pub use builder::{
    read_patch_index, BackgroundSource, PatchDataset, PatchDatasetBuilder, PatchIndexRow, PatchRecord,
    PATCH_INDEX_COLUMNS,
};
pub use class::{class_for_lesion, PatchClass, PatchScheme};
pub use sampler::{
    lesion_center, sample_background_patches, sample_lesion_patches, BackgroundResult, InsufficientBackground,
    PatchSample, BACKGROUND_RETRY_BUDGET, DEFAULT_JITTER_FRAC, DEFAULT_PATCH_COUNT, MIN_TISSUE_FRACTION, PATCH_SIZE,
};

use thiserror::Error;

use crate::dataset::{DatasetError, LesionKind, Severity};
use crate::raster::RasterError;

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("lesion mask has no nonzero pixels")]
    EmptyMask,
    #[error("lesion `{lesion_id}` centre {center:?} lies outside the {dims:?} image")]
    LesionOutsideImage {
        lesion_id: String,
        center: (f64, f64),
        dims: (usize, usize),
    },
    #[error("image {dims:?} is smaller than a {size}x{size} patch")]
    ImageTooSmall { dims: (usize, usize), size: usize },
    #[error("no {scheme} class for a {kind} lesion with severity {severity}")]
    UnsupportedLesion {
        scheme: PatchScheme,
        kind: LesionKind,
        severity: Severity,
    },
    #[error("class `{0}` is not part of scheme {1}")]
    ClassNotInScheme(String, PatchScheme),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("patch index {path}: {reason}")]
    Index { path: String, reason: String },
}

impl PatchError {
    pub fn code(&self) -> &'static str {
        match self {
            PatchError::EmptyMask => "EmptyMask",
            PatchError::LesionOutsideImage { .. } => "LesionOutsideImage",
            PatchError::ImageTooSmall { .. } => "ImageTooSmall",
            PatchError::UnsupportedLesion { .. } => "UnsupportedLesion",
            PatchError::ClassNotInScheme(..) => "ClassNotInScheme",
            PatchError::Dataset(e) => e.code(),
            PatchError::Raster(_) => "RasterError",
            PatchError::Io { .. } => "IoError",
            PatchError::Index { .. } => "MalformedPatchIndex",
        }
    }
}

pub type Result<T> = std::result::Result<T, PatchError>;
