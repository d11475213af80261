//! Per-family entry points: build data splits, construct a model per round
//! and run the protocol into a run ledger.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::engine::{evaluate, train_run, TestSummary};
use super::{run_protocol, ExampleSet, InMemorySet, Objective, PairSet, PatchSet, ProtocolResult, Result, RunLedger, TrainConfig, TrainError, ViewSet};
use crate::dataset::{map_binary_label, pair_views, Manifest, Split};
use crate::model::{
    build_patch_classifier, build_single_view, build_two_view, load_archive, BuildOptions, HeadSpec, Model, SingleViewInit,
};
use crate::patches::{PatchIndexRow, PatchScheme};
use crate::stats::TtaPolicy;

/// Sets smaller than this are loaded once and kept in memory.
const PRELOAD_BYTES: usize = 1 << 30;

pub enum WholeImageInit {
    /// Archive of a trained patch classifier (the PBC path).
    FromPatch(PathBuf),
    /// ImageNet weights straight into the whole-image model (the DC path).
    FromImagenet,
}

struct Splits {
    train: Box<dyn ExampleSet>,
    val: Box<dyn ExampleSet>,
    test: Box<dyn ExampleSet>,
}

fn preload<S: ExampleSet + 'static>(set: S) -> Result<Box<dyn ExampleSet>> {
    if set.footprint() <= PRELOAD_BYTES {
        Ok(Box::new(InMemorySet::from_set(&set)?))
    } else {
        Ok(Box::new(set))
    }
}

impl Splits {
    fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, s) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            h.update(name.as_bytes());
            for i in 0..s.len() {
                h.update(format!("{},{}\n", s.id(i), s.target(i)).as_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    fn check(&self, objective: Objective) -> Result<()> {
        for (split, s) in [(Split::Train, &self.train), (Split::Val, &self.val), (Split::Test, &self.test)] {
            if s.is_empty() {
                return Err(TrainError::EmptySplit(split));
            }
            if objective == Objective::BinaryCrossEntropy && split != Split::Train {
                let n_pos = (0..s.len()).filter(|&i| s.target(i) == 1).count();
                if n_pos == 0 || n_pos == s.len() {
                    return Err(TrainError::SingleClassSplit { split, n_pos, n_neg: s.len() - n_pos });
                }
            }
        }
        Ok(())
    }
}

fn run_family<F>(config: &TrainConfig, splits: &Splits, out_dir: &Path, mut make_model: F) -> Result<ProtocolResult>
where
    F: FnMut(u64) -> Result<Model>,
{
    config.validate()?;
    splits.check(config.objective)?;
    let ledger = RunLedger::create(out_dir, config, &splits.digest(), config.seed, config.rounds)?;
    let result = run_protocol(config, |round, seed| {
        let model = make_model(seed)?;
        let dir = ledger.round_dir(round);
        let (mut run, best) =
            train_run(&model, splits.train.as_ref(), splits.val.as_ref(), config, round, seed, &dir, &ledger.config_hash)?;
        let ev = evaluate(&best, splits.test.as_ref(), config.objective, &TtaPolicy::identity())?;
        let tta = if config.tta != TtaPolicy::identity() && config.objective == Objective::BinaryCrossEntropy {
            Some(evaluate(&best, splits.test.as_ref(), config.objective, &config.tta)?)
        } else {
            None
        };
        if let Some(s) = tta.as_ref().and_then(|e| e.scores.as_ref()) {
            s.save(&dir.join("test_scores_tta.csv"))?;
        }
        let tta_metric = tta.map(|e| e.metric);
        let summary = match &ev.scores {
            Some(s) => {
                let path = dir.join("test_scores.csv");
                s.save(&path)?;
                TestSummary { metric: ev.metric, tta_metric, n_pos: Some(s.n_pos()), n_neg: Some(s.n_neg()), scores_path: Some(path) }
            }
            None => TestSummary { metric: ev.metric, tta_metric, n_pos: None, n_neg: None, scores_path: None },
        };
        run.test = Some(summary);
        ledger.write(&format!("round_{round}/run.json"), &run)?;
        Ok(run)
    })?;
    ledger.write("protocol.json", &result)?;
    Ok(result)
}

fn with_seed(opts: &BuildOptions, seed: u64) -> BuildOptions {
    BuildOptions { seed, ..opts.clone() }
}

fn load_prerequisite(path: &Path) -> Result<Model> {
    if !path.is_file() {
        return Err(TrainError::MissingPrerequisiteCheckpoint(path.display().to_string()));
    }
    Ok(load_archive(path)?.0)
}

pub fn train_patch_classifier(
    rows: &[PatchIndexRow],
    scheme: PatchScheme,
    config: &TrainConfig,
    out_dir: &Path,
    opts: &BuildOptions,
) -> Result<ProtocolResult> {
    let model_classes = match config.model.head {
        HeadSpec::PatchHead { n_classes } => n_classes,
        _ => return Err(TrainError::InvalidConfig("patch training needs a PATCH_HEAD model".into())),
    };
    if model_classes != scheme.n_classes() {
        return Err(TrainError::ClassMismatch { model: model_classes, data: scheme.n_classes() });
    }
    let split = |s: Split| -> Result<Box<dyn ExampleSet>> {
        let set = PatchSet::from_rows(scheme, rows.iter().filter(|r| r.split == s))
            .ok_or(TrainError::ClassMismatch { model: model_classes, data: scheme.n_classes() + 1 })?;
        preload(set)
    };
    let splits = Splits { train: split(Split::Train)?, val: split(Split::Val)?, test: split(Split::Test)? };
    run_family(config, &splits, out_dir, |seed| Ok(build_patch_classifier(&config.model, &with_seed(opts, seed))?))
}

fn view_split(manifest: &Manifest, split: Split, size: (usize, usize)) -> Result<Box<dyn ExampleSet>> {
    let scheme = manifest.schema.label_scheme();
    let records: Vec<_> = manifest.views.iter().filter(|v| v.split == split).cloned().collect();
    let labels = records.iter().map(|r| map_binary_label(r, scheme)).collect::<std::result::Result<Vec<_>, _>>()?;
    preload(ViewSet { records, labels, size })
}

pub fn train_whole_image(
    manifest: &Manifest,
    config: &TrainConfig,
    init: WholeImageInit,
    out_dir: &Path,
    opts: &BuildOptions,
) -> Result<ProtocolResult> {
    if config.model.head != HeadSpec::WholeImageHead {
        return Err(TrainError::InvalidConfig("whole-image training needs a WHOLE_IMAGE_HEAD model".into()));
    }
    let patch = match &init {
        WholeImageInit::FromPatch(p) => Some(load_prerequisite(p)?),
        WholeImageInit::FromImagenet => None,
    };
    let size = config.model.input_size;
    let splits = Splits {
        train: view_split(manifest, Split::Train, size)?,
        val: view_split(manifest, Split::Val, size)?,
        test: view_split(manifest, Split::Test, size)?,
    };
    run_family(config, &splits, out_dir, |seed| {
        let init = match &patch {
            Some(m) => SingleViewInit::FromPatch(m),
            None => SingleViewInit::FromPretrained,
        };
        Ok(build_single_view(&config.model, init, &with_seed(opts, seed))?.0)
    })
}

pub fn train_two_view(
    manifest: &Manifest,
    config: &TrainConfig,
    single_view: Option<&Path>,
    out_dir: &Path,
    opts: &BuildOptions,
) -> Result<ProtocolResult> {
    if config.model.head != HeadSpec::TwoViewHead {
        return Err(TrainError::InvalidConfig("two-view training needs a TWO_VIEW_HEAD model".into()));
    }
    let single = single_view.map(load_prerequisite).transpose()?;
    let report = pair_views(manifest, manifest.schema.label_scheme());
    if !report.unpaired.is_empty() {
        log::warn!("{} views left unpaired", report.unpaired.len());
    }
    let size = config.model.input_size;
    let split = |s: Split| {
        let pairs = report.pairs.iter().filter(|p| p.cc.split == s).cloned().collect();
        preload(PairSet { pairs, size })
    };
    let splits = Splits { train: split(Split::Train)?, val: split(Split::Val)?, test: split(Split::Test)? };
    run_family(config, &splits, out_dir, |seed| Ok(build_two_view(&config.model, single.as_ref(), &with_seed(opts, seed))?.0))
}

impl ProtocolResult {
    /// Checkpoint of the round selected on validation.
    pub fn best_checkpoint(&self) -> &Path {
        &self.per_round.iter().find(|r| r.round == self.best_round).expect("best round present").checkpoint
    }
}
