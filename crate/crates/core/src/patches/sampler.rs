use rand::Rng;
use serde::{Deserialize, Serialize};

use super::class::{class_for_lesion, PatchClass, PatchScheme};
use super::{PatchError, Result};
use crate::dataset::{LesionRegion, StandardLesion, StandardView, ViewKey};
use crate::seed::rng_for;

pub const PATCH_SIZE: usize = 224;
pub const DEFAULT_PATCH_COUNT: usize = 10;
pub const DEFAULT_JITTER_FRAC: f64 = 0.10;
pub const BACKGROUND_RETRY_BUDGET: usize = 1000;
pub const MIN_TISSUE_FRACTION: f64 = 0.20;

/// One square crop location. The patch centre is `top_left + size/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSample {
    pub source: ViewKey,
    pub top_left: (usize, usize),
    pub size: usize,
    pub patch_class: PatchClass,
    /// Realised centre offset from the lesion centre, zero for background.
    pub jitter_applied: (f64, f64),
    pub clamped: bool,
    pub lesion_id: Option<String>,
}

impl PatchSample {
    pub fn center(&self) -> (f64, f64) {
        let half = self.size as f64 / 2.0;
        (self.top_left.0 as f64 + half, self.top_left.1 as f64 + half)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InsufficientBackground {
    pub source: ViewKey,
    pub requested: usize,
    pub found: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundResult {
    pub patches: Vec<PatchSample>,
    pub warning: Option<InsufficientBackground>,
}

/// (row, col) of a lesion: mask centre of mass or bbox centre.
pub fn lesion_center(region: &LesionRegion) -> Result<(f64, f64)> {
    match region {
        LesionRegion::Box(b) => Ok(b.center()),
        LesionRegion::Mask(m) => {
            let (mut sr, mut sc, mut n) = (0f64, 0f64, 0usize);
            for r in 0..m.height {
                for c in 0..m.width {
                    if m.get(r, c) {
                        sr += r as f64;
                        sc += c as f64;
                        n += 1;
                    }
                }
            }
            if n == 0 {
                return Err(PatchError::EmptyMask);
            }
            Ok((sr / n as f64, sc / n as f64))
        }
    }
}

fn check_size(dims: (usize, usize), size: usize) -> Result<()> {
    if dims.0 < size || dims.1 < size {
        return Err(PatchError::ImageTooSmall { dims, size });
    }
    Ok(())
}

/// Integer top-left for a patch whose ideal centre is `center + offset`.
/// Rounding goes towards the unjittered position so the realised offset
/// never exceeds `limit` whenever `limit >= 0.5`.
fn place(center: f64, offset: f64, limit: f64, size: usize, extent: usize) -> (usize, f64, bool) {
    let half = size as f64 / 2.0;
    let ideal = center + offset - half;
    let mut t = ideal.round();
    if (t + half - center).abs() > limit {
        t = if offset > 0.0 { ideal.floor() } else { ideal.ceil() };
    }
    let hi = (extent - size) as f64;
    let clamped_t = t.clamp(0.0, hi);
    (clamped_t as usize, clamped_t + half - center, clamped_t != t)
}

pub fn sample_lesion_patches(
    view: &StandardView,
    lesion: &StandardLesion,
    scheme: PatchScheme,
    count: usize,
    jitter_frac: f64,
    seed: u64,
) -> Result<Vec<PatchSample>> {
    let dims = view.raster.dims();
    check_size(dims, PATCH_SIZE)?;
    let class = class_for_lesion(lesion.kind, lesion.severity, scheme)?;
    let (cr, cc) = lesion_center(&lesion.region)?;
    if !(0.0..dims.0 as f64).contains(&cr) || !(0.0..dims.1 as f64).contains(&cc) {
        return Err(PatchError::LesionOutsideImage {
            lesion_id: lesion.lesion_id.clone(),
            center: (cr, cc),
            dims,
        });
    }
    let key = view.key();
    let limit = jitter_frac * PATCH_SIZE as f64;
    let mut rng = rng_for(seed, &["lesion", &key.to_string(), &lesion.lesion_id]);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (dy, dx) = if limit > 0.0 {
            (rng.random_range(-limit..=limit), rng.random_range(-limit..=limit))
        } else {
            (0.0, 0.0)
        };
        let (top, ry, cy) = place(cr, dy, limit.max(0.5), PATCH_SIZE, dims.0);
        let (left, rx, cx) = place(cc, dx, limit.max(0.5), PATCH_SIZE, dims.1);
        out.push(PatchSample {
            source: key.clone(),
            top_left: (top, left),
            size: PATCH_SIZE,
            patch_class: class,
            jitter_applied: (ry, rx),
            clamped: cy || cx,
            lesion_id: Some(lesion.lesion_id.clone()),
        });
    }
    Ok(out)
}

/// Summed-area table with one row/column of zero padding.
struct Integral {
    w: usize,
    s: Vec<u32>,
}

impl Integral {
    fn new(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut s = vec![0u32; (h + 1) * (w + 1)];
        for r in 0..h {
            let mut run = 0u32;
            for c in 0..w {
                run += f(r, c) as u32;
                s[(r + 1) * (w + 1) + c + 1] = s[r * (w + 1) + c + 1] + run;
            }
        }
        Self { w: w + 1, s }
    }

    fn sum(&self, r0: usize, c0: usize, r1: usize, c1: usize) -> u32 {
        self.s[r1 * self.w + c1] + self.s[r0 * self.w + c0] - self.s[r0 * self.w + c1] - self.s[r1 * self.w + c0]
    }
}

/// Pixel support of every lesion, boxes taken as their covering integer
/// rectangles.
pub(crate) fn lesion_support(view: &StandardView) -> Vec<bool> {
    let (h, w) = view.raster.dims();
    let mut support = vec![false; h * w];
    for l in &view.lesions {
        match &l.region {
            LesionRegion::Box(b) => {
                let (r0, c0, r1, c1) = b.pixel_support((h, w));
                for r in r0..r1 {
                    support[r * w + c0..r * w + c1].fill(true);
                }
            }
            LesionRegion::Mask(m) => {
                for (s, &b) in support.iter_mut().zip(&m.bits) {
                    *s |= b;
                }
            }
        }
    }
    support
}

pub fn sample_background_patches(view: &StandardView, count: usize, seed: u64) -> Result<BackgroundResult> {
    let (h, w) = view.raster.dims();
    check_size((h, w), PATCH_SIZE)?;
    let key = view.key();
    let support = lesion_support(view);
    let lesion_ii = Integral::new(h, w, |r, c| support[r * w + c]);
    let data = view.raster.data();
    let tissue_ii = Integral::new(h, w, |r, c| data[r * w + c] > 0.0);
    let min_tissue = (MIN_TISSUE_FRACTION * (PATCH_SIZE * PATCH_SIZE) as f64).ceil() as u32;

    let mut rng = rng_for(seed, &["background", &key.to_string()]);
    let mut patches = Vec::with_capacity(count);
    'outer: for _ in 0..count {
        for _ in 0..BACKGROUND_RETRY_BUDGET {
            let top = rng.random_range(0..=h - PATCH_SIZE);
            let left = rng.random_range(0..=w - PATCH_SIZE);
            let (r1, c1) = (top + PATCH_SIZE, left + PATCH_SIZE);
            if lesion_ii.sum(top, left, r1, c1) == 0 && tissue_ii.sum(top, left, r1, c1) >= min_tissue {
                patches.push(PatchSample {
                    source: key.clone(),
                    top_left: (top, left),
                    size: PATCH_SIZE,
                    patch_class: PatchClass::Background,
                    jitter_applied: (0.0, 0.0),
                    clamped: false,
                    lesion_id: None,
                });
                continue 'outer;
            }
        }
        break;
    }
    let warning = (patches.len() < count).then(|| InsufficientBackground {
        source: key,
        requested: count,
        found: patches.len(),
    });
    Ok(BackgroundResult { patches, warning })
}
