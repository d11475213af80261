//! Example sources for training and evaluation. Each example is one image
//! (or a CC/MLO pair) with an integer target.

use std::path::PathBuf;

use super::Result;
use crate::dataset::{normalize_image, standardize_geometry, BitDepth, ExamPair, ViewRecord};
use crate::patches::{PatchIndexRow, PatchScheme};
use crate::raster::{IntRaster, Raster};

pub trait ExampleSet: Send + Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn id(&self, i: usize) -> String;
    fn target(&self, i: usize) -> usize;
    /// One raster per view.
    fn load(&self, i: usize) -> Result<Vec<Raster>>;
    /// Bytes a fully loaded copy would take.
    fn footprint(&self) -> usize;
}

/// Preloaded examples.
#[derive(Debug, Clone, Default)]
pub struct InMemorySet {
    pub items: Vec<(String, Vec<Raster>, usize)>,
}

impl InMemorySet {
    pub fn from_set(set: &dyn ExampleSet) -> Result<Self> {
        let items = (0..set.len()).map(|i| Ok((set.id(i), set.load(i)?, set.target(i)))).collect::<Result<_>>()?;
        Ok(Self { items })
    }
}

impl ExampleSet for InMemorySet {
    fn len(&self) -> usize {
        self.items.len()
    }
    fn id(&self, i: usize) -> String {
        self.items[i].0.clone()
    }
    fn target(&self, i: usize) -> usize {
        self.items[i].2
    }
    fn load(&self, i: usize) -> Result<Vec<Raster>> {
        Ok(self.items[i].1.clone())
    }
    fn footprint(&self) -> usize {
        self.items.iter().map(|(_, v, _)| v.iter().map(|r| r.data().len() * 4).sum::<usize>()).sum()
    }
}

/// Whole images read from a manifest and standardized to `size`.
#[derive(Debug, Clone)]
pub struct ViewSet {
    pub records: Vec<ViewRecord>,
    pub labels: Vec<u8>,
    pub size: (usize, usize),
}

impl ExampleSet for ViewSet {
    fn len(&self) -> usize {
        self.records.len()
    }
    fn id(&self, i: usize) -> String {
        self.records[i].key().to_string()
    }
    fn target(&self, i: usize) -> usize {
        self.labels[i] as usize
    }
    fn load(&self, i: usize) -> Result<Vec<Raster>> {
        Ok(vec![standardize_geometry(&self.records[i], &[], self.size)?.raster])
    }
    fn footprint(&self) -> usize {
        self.len() * self.size.0 * self.size.1 * 4
    }
}

/// CC/MLO pairs, ids are `exam|SIDE`.
#[derive(Debug, Clone)]
pub struct PairSet {
    pub pairs: Vec<ExamPair>,
    pub size: (usize, usize),
}

impl ExampleSet for PairSet {
    fn len(&self) -> usize {
        self.pairs.len()
    }
    fn id(&self, i: usize) -> String {
        self.pairs[i].breast_key()
    }
    fn target(&self, i: usize) -> usize {
        self.pairs[i].label.bit() as usize
    }
    fn load(&self, i: usize) -> Result<Vec<Raster>> {
        let p = &self.pairs[i];
        Ok(vec![
            standardize_geometry(&p.cc, &[], self.size)?.raster,
            standardize_geometry(&p.mlo, &[], self.size)?.raster,
        ])
    }
    fn footprint(&self) -> usize {
        2 * self.len() * self.size.0 * self.size.1 * 4
    }
}

/// Patch crops listed in a patch index.
#[derive(Debug, Clone)]
pub struct PatchSet {
    pub scheme: PatchScheme,
    pub paths: Vec<PathBuf>,
    pub targets: Vec<usize>,
}

impl PatchSet {
    /// Rows whose class is not part of `scheme` are reported as `None`.
    pub fn from_rows<'a>(scheme: PatchScheme, rows: impl IntoIterator<Item = &'a PatchIndexRow>) -> Option<Self> {
        let mut paths = Vec::new();
        let mut targets = Vec::new();
        for r in rows {
            targets.push(scheme.index_of(r.patch_class).ok()?);
            paths.push(r.patch_path.clone());
        }
        Some(Self { scheme, paths, targets })
    }
}

impl ExampleSet for PatchSet {
    fn len(&self) -> usize {
        self.paths.len()
    }
    fn id(&self, i: usize) -> String {
        self.paths[i].display().to_string()
    }
    fn target(&self, i: usize) -> usize {
        self.targets[i]
    }
    fn load(&self, i: usize) -> Result<Vec<Raster>> {
        let raw = IntRaster::load_png(&self.paths[i])?;
        Ok(vec![normalize_image(&raw, BitDepth::Sixteen)?])
    }
    fn footprint(&self) -> usize {
        self.len() * 224 * 224 * 4
    }
}
