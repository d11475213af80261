use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Serialize;

use super::config::{InitMode, PipelineConfig};
use super::{io_err, CliError};
use crate::dataset::{carve_validation, load_manifest, DatasetError, Manifest, Schema, CBIS_VALIDATION_SIZE};
use crate::model::{BuildOptions, HeadSpec};
use crate::patches::{read_patch_index, PatchDataset, PatchDatasetBuilder};
use crate::stats::{aggregate_view_scores, auc_report, delong_test, pair_key, z_test_correlated, AggregateOp, ScoreSet};
use crate::synthetic::{generate, SyntheticConfig, SyntheticCorpus};
use crate::train::{
    train_patch_classifier, train_two_view, train_whole_image, ProtocolResult, TrainError, WholeImageInit,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Stage {
    Patch,
    #[value(alias = "single_view")]
    SingleView,
    #[value(alias = "two_view")]
    TwoView,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CompareMode {
    #[value(alias = "DELONG_PAIRED")]
    DelongPaired,
    #[value(alias = "Z_TEST_SE")]
    ZTestSe,
}

impl CompareMode {
    fn as_str(self) -> &'static str {
        match self {
            CompareMode::DelongPaired => "DELONG_PAIRED",
            CompareMode::ZTestSe => "Z_TEST_SE",
        }
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

fn load_views(cfg: &PipelineConfig, seed: u64) -> Result<Manifest, CliError> {
    let d = &cfg.dataset;
    let mut m = load_manifest(&d.views, d.lesions.as_deref(), d.schema)?;
    if !m.rejects.is_empty() {
        log::warn!("{} manifest rows rejected", m.rejects.len());
    }
    let n_val = d.val_size.unwrap_or(match d.schema {
        Schema::CbisStyle => CBIS_VALIDATION_SIZE,
        Schema::VindrStyle => 0,
    });
    let moved = carve_validation(&mut m, n_val, seed)?;
    if moved > 0 {
        log::info!("moved {moved} TRAIN views to VAL");
    }
    Ok(m)
}

#[derive(Debug)]
pub struct PrepareOutcome {
    pub dataset: PatchDataset,
    pub index_path: PathBuf,
    pub counts_csv_path: PathBuf,
    pub counts_table: String,
}

/// Samples patches for every view and writes crops, `index.csv`,
/// `counts.csv` and `counts.txt` under the output directory.
pub fn cmd_prepare_patches(cfg: &PipelineConfig) -> Result<PrepareOutcome, CliError> {
    if !cfg.dataset.lesions.as_deref().is_some_and(Path::is_file) {
        return Err(DatasetError::MissingColumn { file: "lesions", column: "lesion_id" }.into());
    }
    cfg.validate_paths()?;
    let seed = cfg.train_config().seed;
    let manifest = load_views(cfg, seed)?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    if !manifest.rejects.is_empty() {
        manifest.write_rejects(&out.join("rejects.csv"))?;
    }
    let p = &cfg.patches;
    let builder = PatchDatasetBuilder {
        target: p.target,
        lesion_count: p.lesion_count,
        background_count: p.background_count,
        jitter_frac: p.jitter_frac,
        ..PatchDatasetBuilder::new(cfg.patch_scheme(), seed)
    };
    let dataset = builder.build(&manifest, Some(out))?;
    if !dataset.warnings.is_empty() {
        log::warn!("{} patch sampling warnings", dataset.warnings.len());
    }
    let index_path = out.join("index.csv");
    dataset.write_index(&index_path)?;
    let counts_csv_path = out.join("counts.csv");
    std::fs::write(&counts_csv_path, dataset.counts_csv()).map_err(io_err(&counts_csv_path))?;
    let counts_table = dataset.counts_table();
    let txt = out.join("counts.txt");
    std::fs::write(&txt, &counts_table).map_err(io_err(&txt))?;
    Ok(PrepareOutcome { dataset, index_path, counts_csv_path, counts_table })
}

/// Accepts an archive file or a run ledger directory, in which case the
/// checkpoint of its best-on-validation round is used.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf, CliError> {
    let missing = || CliError::from(TrainError::MissingPrerequisiteCheckpoint(path.display().to_string()));
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    let protocol = path.join("protocol.json");
    if !protocol.is_file() {
        return Err(missing());
    }
    let text = std::fs::read_to_string(&protocol).map_err(io_err(&protocol))?;
    let result: ProtocolResult = serde_json::from_str(&text)
        .map_err(|e| CliError::BadLedger { path: path.display().to_string(), reason: e.to_string() })?;
    let ckpt = result.best_checkpoint();
    if ckpt.is_file() {
        Ok(ckpt.to_path_buf())
    } else if path.join(ckpt).is_file() {
        Ok(path.join(ckpt))
    } else {
        Err(missing())
    }
}

fn prerequisite(cfg: &PipelineConfig) -> Result<PathBuf, CliError> {
    let p = cfg
        .init
        .checkpoint
        .as_ref()
        .ok_or_else(|| TrainError::MissingPrerequisiteCheckpoint("init.checkpoint is not set".into()))?;
    resolve_checkpoint(p)
}

/// Trains `stage` and leaves a run ledger in the output directory.
pub fn cmd_train(stage: Stage, cfg: &PipelineConfig) -> Result<ProtocolResult, CliError> {
    let head_ok = matches!(
        (stage, &cfg.model.head),
        (Stage::Patch, HeadSpec::PatchHead { .. })
            | (Stage::SingleView, HeadSpec::WholeImageHead)
            | (Stage::TwoView, HeadSpec::TwoViewHead)
    );
    if !head_ok {
        return Err(CliError::Config(format!("stage {stage:?} does not match model head {:?}", cfg.model.head)));
    }
    let tc = cfg.train_config();
    let out = &cfg.output_dir;
    let mut opts = BuildOptions { allow_random_init: cfg.init.allow_random_init, ..BuildOptions::default() };
    if let Some(w) = &cfg.init.weights_dir {
        opts.weights_dir = Some(w.clone());
    }
    let result = match stage {
        Stage::Patch => {
            let index = cfg
                .dataset
                .patch_index
                .as_ref()
                .ok_or_else(|| CliError::Config("dataset.patch_index is required for the patch stage".into()))?;
            if !index.is_file() {
                return Err(CliError::Config(format!("dataset.patch_index: {} does not exist", index.display())));
            }
            let rows = read_patch_index(index)?;
            train_patch_classifier(&rows, cfg.patch_scheme(), &tc, out, &opts)?
        }
        Stage::SingleView => {
            let init = match cfg.init.mode.unwrap_or(InitMode::FromPatch) {
                InitMode::FromPatch => WholeImageInit::FromPatch(prerequisite(cfg)?),
                InitMode::FromImagenet => WholeImageInit::FromImagenet,
                InitMode::FromSingleView => {
                    return Err(CliError::Config("single-view stage cannot start FROM_SINGLE_VIEW".into()))
                }
            };
            cfg.validate_paths()?;
            let m = load_views(cfg, tc.seed)?;
            train_whole_image(&m, &tc, init, out, &opts)?
        }
        Stage::TwoView => {
            let ckpt = match cfg.init.mode.unwrap_or(InitMode::FromSingleView) {
                InitMode::FromSingleView | InitMode::FromPatch => Some(prerequisite(cfg)?),
                InitMode::FromImagenet => None,
            };
            cfg.validate_paths()?;
            let m = load_views(cfg, tc.seed)?;
            train_two_view(&m, &tc, ckpt.as_deref(), out, &opts)?
        }
    };
    let p = out.join("pipeline.toml");
    std::fs::write(&p, cfg.to_toml()).map_err(io_err(&p))?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub mode: CompareMode,
    pub name_a: String,
    pub name_b: String,
    pub aggregate: Option<AggregateOp>,
    pub n_pos: (usize, usize),
    pub n_neg: (usize, usize),
    pub auc_a: f64,
    pub se_a: f64,
    pub auc_b: f64,
    pub se_b: f64,
    pub z: Option<f64>,
    /// One-tailed, H1: AUC(a) > AUC(b).
    pub p_one_tailed: f64,
    pub flag: Option<String>,
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let agg = self.aggregate.map(|a| format!("{a:?}").to_uppercase()).unwrap_or_default();
        let z = self.z.map(|z| format!("{z:.6}")).unwrap_or_default();
        format!(
            "mode,scores_a,scores_b,aggregate,n_pos_a,n_neg_a,n_pos_b,n_neg_b,auc_a,se_a,auc_b,se_b,z,p_one_tailed,flag\n\
             {},{},{},{agg},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{z},{:.6},{}\n",
            self.mode.as_str(),
            self.name_a,
            self.name_b,
            self.n_pos.0,
            self.n_neg.0,
            self.n_pos.1,
            self.n_neg.1,
            self.auc_a,
            self.se_a,
            self.auc_b,
            self.se_b,
            self.p_one_tailed,
            self.flag.as_deref().unwrap_or("")
        )
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} comparison", self.mode.as_str());
        if let Some(a) = self.aggregate {
            let _ = writeln!(s, "view scores aggregated with {a:?}");
        }
        let _ = writeln!(s, "{:<4}{:<32}{:>8}{:>8}{:>10}{:>10}", "", "scores", "n_pos", "n_neg", "AUC", "SE");
        for (tag, name, np, nn, auc, se) in [
            ("A", &self.name_a, self.n_pos.0, self.n_neg.0, self.auc_a, self.se_a),
            ("B", &self.name_b, self.n_pos.1, self.n_neg.1, self.auc_b, self.se_b),
        ] {
            let _ = writeln!(s, "{tag:<4}{name:<32}{np:>8}{nn:>8}{auc:>10.4}{se:>10.4}");
        }
        match self.z {
            Some(z) => {
                let _ = writeln!(s, "z = {z:.4}, one-tailed p = {:.4} (H1: A > B)", self.p_one_tailed);
            }
            None => {
                let _ = writeln!(s, "z undefined, one-tailed p = {:.4}", self.p_one_tailed);
            }
        }
        if let Some(f) = &self.flag {
            let _ = writeln!(s, "flag: {f}");
        }
        s
    }
}

fn prepare_scores(path: &Path, aggregate: Option<AggregateOp>) -> Result<ScoreSet, CliError> {
    let s = ScoreSet::load(path)?;
    match aggregate {
        Some(op) if s.ids().iter().any(|id| pair_key(id) != id) => Ok(aggregate_view_scores(&s, op)?),
        _ => Ok(s),
    }
}

/// Compares two classifiers' test scores. With `aggregate`, any file holding
/// view-level ids is first collapsed to one score per breast.
pub fn cmd_compare(
    a: &Path,
    b: &Path,
    mode: CompareMode,
    aggregate: Option<AggregateOp>,
    r: f64,
) -> Result<ComparisonReport, CliError> {
    let sa = prepare_scores(a, aggregate)?;
    let sb = prepare_scores(b, aggregate)?;
    let (ra, rb) = (auc_report(&sa)?, auc_report(&sb)?);
    let base = ComparisonReport {
        mode,
        name_a: file_name(a),
        name_b: file_name(b),
        aggregate,
        n_pos: (ra.n_pos, rb.n_pos),
        n_neg: (ra.n_neg, rb.n_neg),
        auc_a: ra.auc,
        se_a: ra.se,
        auc_b: rb.auc,
        se_b: rb.se,
        z: None,
        p_one_tailed: f64::NAN,
        flag: None,
    };
    Ok(match mode {
        CompareMode::DelongPaired => {
            let d = delong_test(&sa, &sb)?;
            ComparisonReport {
                se_a: d.var1.sqrt(),
                se_b: d.var2.sqrt(),
                z: d.z,
                p_one_tailed: d.p_one_tailed,
                flag: d.flag.map(|f| format!("{f:?}")),
                ..base
            }
        }
        CompareMode::ZTestSe => {
            let t = z_test_correlated(ra.auc, ra.se, rb.auc, rb.se, r)?;
            ComparisonReport { z: Some(t.z), p_one_tailed: t.p_one_tailed, ..base }
        }
    })
}

pub fn cmd_synth(out: &Path, seed: u64, n_images: usize, height: usize, width: usize) -> Result<SyntheticCorpus, CliError> {
    let n_breasts = n_images / 2;
    let val = n_breasts / 5;
    let cfg = SyntheticConfig {
        n_images,
        height,
        width,
        split_breasts: [n_breasts - 2 * val, val, val],
        seed,
        ..SyntheticConfig::default()
    };
    Ok(generate(out, &cfg)?)
}

