//! Checkpoints: a safetensors file plus a JSON sidecar with the `ModelSpec` and
//! provenance.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::classifier::{restore, Model};
use super::spec::ModelSpec;
use super::{ModelError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub spec: ModelSpec,
    pub source_run: String,
    pub epoch: usize,
    pub val_metric: f64,
    pub seed: u64,
}

/// `best.safetensors` -> `best.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn archive_err(path: &Path, e: impl std::fmt::Display) -> ModelError {
    ModelError::Archive { path: path.display().to_string(), reason: e.to_string() }
}

pub fn save_archive(model: &Model, path: &Path, meta: &ArchiveMeta) -> Result<()> {
    if &meta.spec != model.spec() {
        return Err(archive_err(path, "metadata spec differs from the model"));
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| archive_err(path, e))?;
    }
    let tensors: HashMap<String, Tensor> = model.params().tensors().into_iter().collect();
    candle_core::safetensors::save(&tensors, path)?;
    let json = serde_json::to_string_pretty(meta).map_err(|e| archive_err(path, e))?;
    std::fs::write(sidecar_path(path), json).map_err(|e| archive_err(path, e))?;
    Ok(())
}

pub fn load_archive(path: &Path) -> Result<(Model, ArchiveMeta)> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| archive_err(&side, e))?;
    let meta: ArchiveMeta = serde_json::from_str(&text).map_err(|e| archive_err(&side, e))?;
    let tensors = candle_core::safetensors::load(path, &candle_core::Device::Cpu).map_err(|e| archive_err(path, e))?;
    let model = restore(&meta.spec, &tensors, meta.seed, path)?;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::super::{build_model, BuildOptions, ModelInput};
    use super::*;

    #[test]
    fn round_trip_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ModelSpec::whole_image("tiny-mbconv", (64, 64));
        let m = build_model(&spec, &BuildOptions::random(9)).unwrap();
        let meta = ArchiveMeta { spec: spec.clone(), source_run: "r".into(), epoch: 3, val_metric: 0.7, seed: 9 };
        let path = dir.path().join("round_0/best.safetensors");
        save_archive(&m, &path, &meta).unwrap();
        let (m2, meta2) = load_archive(&path).unwrap();
        assert_eq!(meta2, meta);
        let x = Tensor::rand(0f32, 1.0, (2, 1, 64, 64), &candle_core::Device::Cpu).unwrap();
        let a = m.probabilities(&ModelInput::Single(x.clone())).unwrap().to_vec1::<f32>().unwrap();
        let b = m2.probabilities(&ModelInput::Single(x)).unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_archive(&dir.path().join("x.safetensors")), Err(ModelError::Archive { .. })));
    }
}
