//! Synthetic mammogram-like corpus: a tissue region with smooth texture
//! and noise; positives carry bright Gaussian blobs. Written as a
//! biopsy-labelled manifest with bounding boxes, paired CC/MLO per breast.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Raster, RasterError};
use crate::seed::rng_for;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Image count; must be even, CC and MLO of each breast are generated.
    pub n_images: usize,
    pub height: usize,
    pub width: usize,
    /// Breasts per split (train, val, test); half of each are positive.
    pub split_breasts: [usize; 3],
    pub blob_sigma: f64,
    pub blob_amplitude: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_images: 128,
            height: 576,
            width: 448,
            split_breasts: [40, 12, 12],
            blob_sigma: 14.0,
            blob_amplitude: 0.35,
            noise_std: 0.03,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub views_csv: PathBuf,
    pub lesions_csv: PathBuf,
    pub n_positive: usize,
}

struct Blob {
    cy: f64,
    cx: f64,
    sigma: f64,
}

fn tissue_mask(h: usize, w: usize, r: usize, c: usize) -> bool {
    // half ellipse anchored on the left edge (chest wall)
    let y = (r as f64 - h as f64 / 2.0) / (0.47 * h as f64);
    let x = c as f64 / (0.85 * w as f64);
    x * x + y * y <= 1.0
}

fn render(cfg: &SyntheticConfig, blobs: &[Blob], rng: &mut impl Rng) -> Raster {
    let (h, w) = (cfg.height, cfg.width);
    let noise = Normal::new(0.0, cfg.noise_std).expect("finite std");
    let base = rng.random_range(0.30..0.45);
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.02..0.06),
                rng.random_range(0.005..0.03),
                rng.random_range(0.005..0.03),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut r = Raster::zeros(h, w);
    for row in 0..h {
        for col in 0..w {
            if !tissue_mask(h, w, row, col) {
                r.set(row, col, (noise.sample(rng).abs() * 0.2) as f32);
                continue;
            }
            let (y, x) = (row as f64, col as f64);
            let mut v = base;
            for &(a, fy, fx, ph) in &waves {
                v += a * (fy * y + fx * x + ph).sin();
            }
            for b in blobs {
                let d2 = (y - b.cy).powi(2) + (x - b.cx).powi(2);
                v += cfg.blob_amplitude * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
            }
            v += noise.sample(rng);
            r.set(row, col, v.clamp(0.0, 1.0) as f32);
        }
    }
    r
}

fn place_blob(cfg: &SyntheticConfig, rng: &mut impl Rng) -> Blob {
    let (h, w) = (cfg.height, cfg.width);
    let margin = 3.0 * cfg.blob_sigma;
    loop {
        let cy = rng.random_range(margin..h as f64 - margin);
        let cx = rng.random_range(margin..w as f64 - margin);
        if tissue_mask(h, w, cy as usize, (cx + margin) as usize) {
            let sigma = cfg.blob_sigma * rng.random_range(0.8..1.25);
            return Blob { cy, cx, sigma };
        }
    }
}

/// Writes images under `dir/images`, `dir/views.csv` and `dir/lesions.csv`.
pub fn generate(dir: &Path, cfg: &SyntheticConfig) -> Result<SyntheticCorpus, SyntheticError> {
    let n_breasts: usize = cfg.split_breasts.iter().sum();
    if cfg.n_images != 2 * n_breasts {
        return Err(SyntheticError::InvalidConfig(format!(
            "{} images but the split sizes describe {} breasts",
            cfg.n_images, n_breasts
        )));
    }
    if cfg.height < 64 || cfg.width < 64 {
        return Err(SyntheticError::InvalidConfig("images must be at least 64x64".into()));
    }
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| SyntheticError::Io { path: img_dir.display().to_string(), source: e })?;
    let views_csv = dir.join("views.csv");
    let lesions_csv = dir.join("lesions.csv");
    let csv_err = |p: &Path| {
        let path = p.display().to_string();
        move |source: csv::Error| SyntheticError::Csv { path: path.clone(), source }
    };
    let mut views = csv::Writer::from_path(&views_csv).map_err(csv_err(&views_csv))?;
    let mut lesions = csv::Writer::from_path(&lesions_csv).map_err(csv_err(&lesions_csv))?;
    views
        .write_record(["exam_id", "breast_side", "view", "image_path", "bit_depth", "label_source", "pathology", "birads", "split"])
        .map_err(csv_err(&views_csv))?;
    lesions
        .write_record(crate::dataset::LESION_COLUMNS)
        .map_err(csv_err(&lesions_csv))?;

    let splits = ["TRAIN", "VAL", "TEST"];
    let mut breast = 0usize;
    let mut n_positive = 0;
    for (s, &count) in cfg.split_breasts.iter().enumerate() {
        for k in 0..count {
            let positive = k % 2 == 1;
            let exam = format!("S{breast:04}");
            let side = if breast % 3 == 2 { "RIGHT" } else { "LEFT" };
            for view in ["CC", "MLO"] {
                let mut rng = rng_for(cfg.seed, &["synthetic", &exam, view]);
                let blobs: Vec<Blob> = if positive { vec![place_blob(cfg, &mut rng)] } else { vec![] };
                let mut img = render(cfg, &blobs, &mut rng);
                // breasts on the right side are stored mirrored, as acquired
                let mirrored = side == "RIGHT";
                if mirrored {
                    img = img.flip_horizontal();
                }
                let rel = format!("images/{exam}_{side}_{view}.png");
                img.save_png16(&dir.join(&rel))?;
                let pathology = if positive { "MALIGNANT" } else { "BENIGN" };
                views
                    .write_record([exam.as_str(), side, view, rel.as_str(), "16", "BIOPSY", pathology, "", splits[s]])
                    .map_err(csv_err(&views_csv))?;
                for (j, b) in blobs.iter().enumerate() {
                    let half = 2.0 * b.sigma;
                    let cx = if mirrored { cfg.width as f64 - b.cx } else { b.cx };
                    let x = (cx - half).max(0.0);
                    let y = (b.cy - half).max(0.0);
                    let bw = (2.0 * half).min(cfg.width as f64 - x);
                    let bh = (2.0 * half).min(cfg.height as f64 - y);
                    let id = format!("{exam}_{view}_{j}");
                    let nums = [x, y, bw, bh].map(|v| format!("{v:.2}"));
                    lesions
                        .write_record([
                            id.as_str(), exam.as_str(), side, view, "MASS", "MALIGNANT", "", &nums[0], &nums[1], &nums[2], &nums[3],
                        ])
                        .map_err(csv_err(&lesions_csv))?;
                }
            }
            n_positive += positive as usize;
            breast += 1;
        }
    }
    views.flush().map_err(|e| SyntheticError::Io { path: views_csv.display().to_string(), source: e })?;
    lesions.flush().map_err(|e| SyntheticError::Io { path: lesions_csv.display().to_string(), source: e })?;
    Ok(SyntheticCorpus { views_csv, lesions_csv, n_positive: 2 * n_positive })
}
