use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::class::{PatchClass, PatchScheme};
use super::sampler::*;
use super::{PatchError, Result};
use crate::dataset::{standardize_geometry, BreastSide, Manifest, Split, StandardView, View, ViewKey};
use crate::seed::rng_for;

pub const PATCH_INDEX_COLUMNS: [&str; 9] =
    ["patch_path", "source_exam", "source_view", "patch_class", "row", "col", "dy", "dx", "split"];

/// Which views contribute background patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BackgroundSource {
    AllViews,
    LesionViews,
}

impl BackgroundSource {
    pub fn default_for(scheme: PatchScheme) -> Self {
        match scheme {
            PatchScheme::Cbis5 => BackgroundSource::AllViews,
            PatchScheme::Vindr4 => BackgroundSource::LesionViews,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PatchWarning {
    InsufficientBackground(InsufficientBackground),
    LesionOutsideImage { source: ViewKey, lesion_id: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    pub sample: PatchSample,
    pub split: Split,
    /// Crop location relative to the dataset root, once materialized.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct PatchDataset {
    pub scheme: PatchScheme,
    pub records: Vec<PatchRecord>,
    pub warnings: Vec<PatchWarning>,
}

#[derive(Debug, Clone)]
pub struct PatchDatasetBuilder {
    pub scheme: PatchScheme,
    pub target: (usize, usize),
    pub lesion_count: usize,
    pub background_count: usize,
    pub jitter_frac: f64,
    pub background: BackgroundSource,
    pub seed: u64,
}

impl PatchDatasetBuilder {
    pub fn new(scheme: PatchScheme, seed: u64) -> Self {
        Self {
            scheme,
            target: (1152, 896),
            lesion_count: DEFAULT_PATCH_COUNT,
            background_count: DEFAULT_PATCH_COUNT,
            jitter_frac: DEFAULT_JITTER_FRAC,
            background: BackgroundSource::default_for(scheme),
            seed,
        }
    }

    /// Standardizes each manifest view in turn and samples it. When `root`
    /// is given, crops are written below it as 16-bit PNGs.
    pub fn build(&self, manifest: &Manifest, root: Option<&Path>) -> Result<PatchDataset> {
        let by_view = manifest.lesions_by_view();
        let mut acc = Accumulator::new(self, root);
        for rec in &manifest.views {
            let lesions = by_view.get(&rec.key()).map(Vec::as_slice).unwrap_or(&[]);
            let sv = standardize_geometry(rec, lesions, self.target)?;
            acc.add(&sv)?;
        }
        Ok(acc.finish())
    }

    pub fn build_from_views<'a>(
        &self,
        views: impl IntoIterator<Item = &'a StandardView>,
        root: Option<&Path>,
    ) -> Result<PatchDataset> {
        let mut acc = Accumulator::new(self, root);
        for v in views {
            acc.add(v)?;
        }
        Ok(acc.finish())
    }
}

struct Accumulator<'a> {
    cfg: &'a PatchDatasetBuilder,
    root: Option<&'a Path>,
    records: Vec<PatchRecord>,
    warnings: Vec<PatchWarning>,
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

impl<'a> Accumulator<'a> {
    fn new(cfg: &'a PatchDatasetBuilder, root: Option<&'a Path>) -> Self {
        Self { cfg, root, records: Vec::new(), warnings: Vec::new() }
    }

    fn add(&mut self, view: &StandardView) -> Result<()> {
        let cfg = self.cfg;
        let mut samples = Vec::new();
        for lesion in &view.lesions {
            match sample_lesion_patches(view, lesion, cfg.scheme, cfg.lesion_count, cfg.jitter_frac, cfg.seed) {
                Ok(p) => samples.extend(p),
                Err(PatchError::LesionOutsideImage { lesion_id, .. }) => {
                    log::warn!("lesion {lesion_id} lies outside {}", view.key());
                    self.warnings.push(PatchWarning::LesionOutsideImage { source: view.key(), lesion_id });
                }
                Err(e) => return Err(e),
            }
        }
        let wants_background = match cfg.background {
            BackgroundSource::AllViews => true,
            BackgroundSource::LesionViews => !view.lesions.is_empty(),
        };
        if wants_background && cfg.background_count > 0 {
            let bg = sample_background_patches(view, cfg.background_count, cfg.seed)?;
            samples.extend(bg.patches);
            if let Some(w) = bg.warning {
                log::warn!("{}: only {} of {} background patches", w.source, w.found, w.requested);
                self.warnings.push(PatchWarning::InsufficientBackground(w));
            }
        }
        for sample in samples {
            let path = match self.root {
                Some(root) => Some(self.write_crop(root, view, &sample)?),
                None => None,
            };
            self.records.push(PatchRecord { sample, split: view.record.split, path });
        }
        Ok(())
    }

    fn write_crop(&self, root: &Path, view: &StandardView, s: &PatchSample) -> Result<PathBuf> {
        let key = &s.source;
        let rel = PathBuf::from("patches")
            .join(view.record.split.as_str())
            .join(s.patch_class.as_str())
            .join(format!(
                "{:07}_{}_{}_{}.png",
                self.records.len(),
                sanitize(&key.exam_id),
                key.side,
                key.view
            ));
        let full = root.join(&rel);
        let dir = full.parent().unwrap();
        std::fs::create_dir_all(dir).map_err(|source| PatchError::Io { path: dir.display().to_string(), source })?;
        view.raster.crop(s.top_left.0, s.top_left.1, s.size, s.size).save_png16(&full)?;
        Ok(rel)
    }

    fn finish(self) -> PatchDataset {
        let mut records = self.records;
        let mut rng = rng_for(self.cfg.seed, &["shuffle"]);
        records.shuffle(&mut rng);
        PatchDataset { scheme: self.cfg.scheme, records, warnings: self.warnings }
    }
}

impl PatchDataset {
    /// Per-class, per-split counts over the scheme's classes.
    pub fn counts(&self) -> BTreeMap<PatchClass, BTreeMap<Split, usize>> {
        let mut out: BTreeMap<PatchClass, BTreeMap<Split, usize>> = self
            .scheme
            .classes()
            .iter()
            .map(|&c| (c, Split::ALL.iter().map(|&s| (s, 0)).collect()))
            .collect();
        for r in &self.records {
            *out.entry(r.sample.patch_class).or_default().entry(r.split).or_default() += 1;
        }
        out
    }

    pub fn count(&self, class: PatchClass, split: Split) -> usize {
        self.records.iter().filter(|r| r.sample.patch_class == class && r.split == split).count()
    }

    /// Index CSV text. Byte-identical for identical inputs and seed.
    pub fn index_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(PATCH_INDEX_COLUMNS).unwrap();
        for r in &self.records {
            let s = &r.sample;
            w.write_record([
                r.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                s.source.exam_id.clone(),
                format!("{}|{}", s.source.side, s.source.view),
                s.patch_class.to_string(),
                s.top_left.0.to_string(),
                s.top_left.1.to_string(),
                format!("{:.4}", s.jitter_applied.0),
                format!("{:.4}", s.jitter_applied.1),
                r.split.to_string(),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.index_csv().as_bytes()))
    }

    pub fn write_index(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.index_csv()).map_err(|source| PatchError::Io { path: path.display().to_string(), source })
    }

    /// `class,TRAIN,VAL,TEST` CSV.
    pub fn counts_csv(&self) -> String {
        let mut s = String::from("class,TRAIN,VAL,TEST\n");
        for (c, per) in self.counts() {
            let _ = writeln!(s, "{c},{},{},{}", per[&Split::Train], per[&Split::Val], per[&Split::Test]);
        }
        s
    }

    /// Aligned plain-text counts table.
    pub fn counts_table(&self) -> String {
        let mut s = format!("{:<16}{:>10}{:>10}{:>10}\n", "class", "TRAIN", "VAL", "TEST");
        for (c, per) in self.counts() {
            let _ = writeln!(
                s,
                "{:<16}{:>10}{:>10}{:>10}",
                c.as_str(),
                per[&Split::Train],
                per[&Split::Val],
                per[&Split::Test]
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchIndexRow {
    pub patch_path: PathBuf,
    pub source: ViewKey,
    pub patch_class: PatchClass,
    pub row: usize,
    pub col: usize,
    pub dy: f64,
    pub dx: f64,
    pub split: Split,
}

/// Reads an index CSV; relative crop paths resolve against its directory.
pub fn read_patch_index(path: &Path) -> Result<Vec<PatchIndexRow>> {
    let bad = |reason: String| PatchError::Index { path: path.display().to_string(), reason };
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| bad(format!("missing column {name}")));
    let idx: Vec<usize> = PATCH_INDEX_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let f = |k: usize| row.get(idx[k]).unwrap_or("");
        let ctx = |e: String| bad(format!("row {}: {e}", i + 1));
        let (side, view) = f(2).split_once('|').ok_or_else(|| ctx(format!("bad source_view `{}`", f(2))))?;
        let num = |k: usize| f(k).parse::<f64>().map_err(|e| ctx(e.to_string()));
        let int = |k: usize| f(k).parse::<usize>().map_err(|e| ctx(e.to_string()));
        out.push(PatchIndexRow {
            patch_path: base.join(f(0)),
            source: ViewKey::new(
                f(1),
                side.parse::<BreastSide>().map_err(ctx)?,
                view.parse::<View>().map_err(ctx)?,
            ),
            patch_class: f(3).parse().map_err(ctx)?,
            row: int(4)?,
            col: int(5)?,
            dy: num(6)?,
            dx: num(7)?,
            split: f(8).parse().map_err(ctx)?,
        });
    }
    Ok(out)
}
