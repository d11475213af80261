//! Manifest ingestion for both corpus styles, label mapping, image
//! normalization, geometry standardization and CC/MLO pairing.

mod geometry;
mod manifest;
mod normalize;
mod pairing;
mod split;
mod types;

pub use geometry::{
    scale_bbox, standardize_geometry, standardize_raster, BinaryMask, BoxF,
    LesionRegion, StandardLesion, StandardView,
};
pub use manifest::{load_manifest, Manifest, Reject, RejectReason, LESION_COLUMNS, VIEW_COLUMNS};
pub use normalize::normalize_image;
pub use pairing::{pair_views, PairingReport, UnpairedReason, UnpairedView};
pub use split::{carve_validation, split_counts, CBIS_VALIDATION_SIZE};
pub use types::*;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{file} manifest is missing column `{column}`")]
    MissingColumn { file: &'static str, column: &'static str },
    #[error("lesion `{lesion_id}` references view {owner} which is not in the manifest")]
    DanglingLesion { lesion_id: String, owner: String },
    #[error("view {0} appears more than once in the manifest")]
    DuplicateViewKey(String),
    #[error("record {key} is labelled by {found:?} but scheme {scheme:?} was requested")]
    SchemeMismatch {
        key: String,
        found: LabelSource,
        scheme: LabelScheme,
    },
    #[error("pixel value {value} does not fit in {bit_depth} bits")]
    BitDepthOverflow { value: u32, bit_depth: u8 },
    #[error("unreadable image {path}: {reason}")]
    UnreadableImage { path: String, reason: String },
    #[error("malformed csv {path}: {reason}")]
    Csv { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot carve {requested} validation records from {available} training records")]
    NotEnoughForValidation { requested: usize, available: usize },
}

impl DatasetError {
    pub fn code(&self) -> &'static str {
        match self {
            DatasetError::MissingColumn { .. } => "MissingColumn",
            DatasetError::DanglingLesion { .. } => "DanglingLesion",
            DatasetError::DuplicateViewKey(_) => "DuplicateViewKey",
            DatasetError::SchemeMismatch { .. } => "SchemeMismatch",
            DatasetError::BitDepthOverflow { .. } => "BitDepthOverflow",
            DatasetError::UnreadableImage { .. } => "UnreadableImage",
            DatasetError::Csv { .. } => "MalformedCsv",
            DatasetError::Io { .. } => "Io",
            DatasetError::NotEnoughForValidation { .. } => "NotEnoughForValidation",
        }
    }
}

pub type Result<T> = std::result::Result<T, DatasetError>;
