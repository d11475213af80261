use serde::{Deserialize, Serialize};

use super::normalize::normalize_image;
use super::types::*;
use super::{DatasetError, Result};
use crate::raster::{IntRaster, Raster};

/// Axis-aligned box in (possibly fractional) pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxF {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxF {
    /// (row, col) of the box center.
    pub fn center(&self) -> (f64, f64) {
        (self.y + self.h / 2.0, self.x + self.w / 2.0)
    }

    /// Smallest integer pixel rectangle covering the box, as
    /// `(row0, col0, row1, col1)` with exclusive ends, clipped to `dims`.
    pub fn pixel_support(&self, dims: (usize, usize)) -> (usize, usize, usize, usize) {
        let clip = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi);
        (
            clip(self.y.floor(), dims.0),
            clip(self.x.floor(), dims.1),
            clip((self.y + self.h).ceil(), dims.0),
            clip((self.x + self.w).ceil(), dims.1),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    /// Nonzero pixels of `r` become set bits.
    pub fn from_raster(r: &Raster) -> Self {
        Self {
            height: r.height(),
            width: r.width(),
            bits: r.data().iter().map(|&v| v > 0.0).collect(),
        }
    }

    pub fn from_points(height: usize, width: usize, points: &[(usize, usize)]) -> Self {
        let mut bits = vec![false; height * width];
        for &(r, c) in points {
            bits[r * width + c] = true;
        }
        Self { height, width, bits }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.width + c]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LesionRegion {
    Box(BoxF),
    Mask(BinaryMask),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardLesion {
    pub lesion_id: String,
    pub kind: LesionKind,
    pub severity: Severity,
    pub region: LesionRegion,
}

/// A view resampled to the working resolution, in canonical (LEFT-facing)
/// orientation, with its lesions mapped into the same frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardView {
    pub record: ViewRecord,
    pub raster: Raster,
    pub lesions: Vec<StandardLesion>,
    pub mirrored: bool,
}

impl StandardView {
    pub fn key(&self) -> ViewKey {
        self.record.key()
    }
}

/// Resizes to `target` (area down, bilinear up) and mirrors RIGHT breasts.
pub fn standardize_raster(r: &Raster, side: BreastSide, target: (usize, usize)) -> Raster {
    let resized = r.resize(target.0, target.1);
    match side {
        BreastSide::Left => resized,
        BreastSide::Right => resized.flip_horizontal(),
    }
}

/// Maps a bbox from raw image coordinates into the standardized frame.
pub fn scale_bbox(b: &BBox, raw: (usize, usize), target: (usize, usize), mirrored: bool) -> BoxF {
    let sy = target.0 as f64 / raw.0 as f64;
    let sx = target.1 as f64 / raw.1 as f64;
    let (w, h) = (b.w * sx, b.h * sy);
    let mut x = b.x * sx;
    if mirrored {
        x = target.1 as f64 - x - w;
    }
    BoxF { x, y: b.y * sy, w, h }
}

fn read_image(path: &std::path::Path) -> Result<IntRaster> {
    IntRaster::load_png(path).map_err(|e| DatasetError::UnreadableImage {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Loads a view, normalizes it, and brings image and lesions to `target`.
pub fn standardize_geometry(
    record: &ViewRecord,
    lesions: &[&LesionAnnotation],
    target: (usize, usize),
) -> Result<StandardView> {
    let raw = read_image(&record.image_path)?;
    if (raw.height, raw.width) != record.raw_size {
        return Err(DatasetError::UnreadableImage {
            path: record.image_path.display().to_string(),
            reason: format!(
                "image is {}x{} but the manifest records {:?}",
                raw.height, raw.width, record.raw_size
            ),
        });
    }
    let raster = normalize_image(&raw, record.bit_depth)?;
    let mirrored = record.breast_side == BreastSide::Right;
    let out = standardize_raster(&raster, record.breast_side, target);
    let mut std_lesions = Vec::with_capacity(lesions.len());
    for l in lesions {
        let region = match &l.geometry {
            LesionGeometry::BBox(b) => LesionRegion::Box(scale_bbox(b, record.raw_size, target, mirrored)),
            LesionGeometry::Mask(p) => {
                let m = read_image(p)?;
                if (m.height, m.width) != record.raw_size {
                    return Err(DatasetError::UnreadableImage {
                        path: p.display().to_string(),
                        reason: "mask size differs from its image".into(),
                    });
                }
                let binary: Vec<f32> = m.data.iter().map(|&v| if v > 0 { 1.0 } else { 0.0 }).collect();
                let mr = Raster::from_vec(m.height, m.width, binary).expect("mask dims");
                LesionRegion::Mask(BinaryMask::from_raster(&standardize_raster(
                    &mr,
                    record.breast_side,
                    target,
                )))
            }
        };
        std_lesions.push(StandardLesion {
            lesion_id: l.lesion_id.clone(),
            kind: l.kind,
            severity: l.severity,
            region,
        });
    }
    Ok(StandardView {
        record: record.clone(),
        raster: out,
        lesions: std_lesions,
        mirrored,
    })
}
