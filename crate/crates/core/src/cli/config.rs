//! Pipeline configuration: a TOML file plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::dataset::Schema;
use crate::model::ModelSpec;
use crate::patches::PatchScheme;
use crate::stats::{AggregateOp, TtaPolicy};
use crate::train::{AugmentPolicy, LrSchedule, OptimizerKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub schema: Schema,
    pub views: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lesions: Option<PathBuf>,
    /// Records carved from TRAIN into VAL when the manifest has none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_size: Option<usize>,
    /// Patch index written by `prepare-patches`, used by the patch stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_index: Option<PathBuf>,
}

/// Overrides applied on top of the per-family training defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cosine_period_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<AugmentPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balance_batches: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default)]
    pub tta: TtaPolicy,
    #[serde(default = "default_aggregation")]
    pub aggregation: Vec<AggregateOp>,
}

fn default_aggregation() -> Vec<AggregateOp> {
    vec![AggregateOp::Mean, AggregateOp::Max]
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { tta: TtaPolicy::default(), aggregation: default_aggregation() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InitMode {
    FromImagenet,
    FromPatch,
    FromSingleView,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    /// Defaults per stage: patch FROM_IMAGENET, single_view FROM_PATCH,
    /// two_view FROM_SINGLE_VIEW.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<InitMode>,
    /// Prerequisite checkpoint, or the run ledger that holds it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_dir: Option<PathBuf>,
    #[serde(default)]
    pub allow_random_init: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<PatchScheme>,
    #[serde(default = "default_target")]
    pub target: (usize, usize),
    #[serde(default = "default_count")]
    pub lesion_count: usize,
    #[serde(default = "default_count")]
    pub background_count: usize,
    #[serde(default = "default_jitter")]
    pub jitter_frac: f64,
}

fn default_target() -> (usize, usize) {
    (1152, 896)
}

fn default_count() -> usize {
    crate::patches::DEFAULT_PATCH_COUNT
}

fn default_jitter() -> f64 {
    crate::patches::DEFAULT_JITTER_FRAC
}

impl Default for PatchSection {
    fn default() -> Self {
        Self {
            scheme: None,
            target: default_target(),
            lesion_count: default_count(),
            background_count: default_count(),
            jitter_frac: default_jitter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub dataset: DatasetSection,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub init: InitSection,
    #[serde(default)]
    pub patches: PatchSection,
}

/// Parses a `--set` value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_set(root: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{assignment}`")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| CliError::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, sets: &[String]) -> Result<Self, CliError> {
        let mut root: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for s in sets {
            apply_set(&mut root, s)?;
        }
        root.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }

    /// Loads `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path, sets: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text, sets)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.dataset.views);
        for p in [&mut self.dataset.lesions, &mut self.dataset.patch_index, &mut self.init.checkpoint, &mut self.init.weights_dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable config")
    }

    /// Checks that referenced input files exist.
    pub fn validate_paths(&self) -> Result<(), CliError> {
        let mut need = vec![("dataset.views", &self.dataset.views)];
        if let Some(l) = &self.dataset.lesions {
            need.push(("dataset.lesions", l));
        }
        for (key, p) in need {
            if !p.exists() {
                return Err(CliError::Config(format!("{key}: {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut c = TrainConfig::for_model(self.model.clone());
        let t = &self.train;
        let d = LrSchedule::default();
        c.schedule = LrSchedule {
            base_lr: t.base_lr.unwrap_or(d.base_lr),
            lr_delta: t.lr_delta.unwrap_or(d.lr_delta),
            cosine_period_epochs: t.cosine_period_epochs.unwrap_or(d.cosine_period_epochs),
            warmup_epochs: t.warmup_epochs.unwrap_or(d.warmup_epochs),
        };
        if let Some(v) = t.optimizer {
            c.optimizer = v;
        }
        if let Some(v) = t.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = t.epochs {
            c.epochs = v;
        }
        if let Some(v) = t.rounds {
            c.rounds = v;
        }
        if let Some(v) = t.seed {
            c.seed = v;
        }
        if let Some(v) = t.augmentation {
            c.augmentation = v;
        }
        if let Some(v) = t.balance_batches {
            c.balance_batches = v;
        }
        c.tta = self.eval.tta.clone();
        c
    }

    pub fn patch_scheme(&self) -> PatchScheme {
        self.patches.scheme.unwrap_or(match self.dataset.schema {
            Schema::CbisStyle => PatchScheme::Cbis5,
            Schema::VindrStyle => PatchScheme::Vindr4,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
output_dir = "runs/a"

[dataset]
schema = "CBIS_STYLE"
views = "views.csv"
lesions = "lesions.csv"

[model]
backbone = "efficientnet-b3"
pretrain_tag = "IMAGENET1K"
head = "WHOLE_IMAGE_HEAD"
resize_mode = { LEARNED = { height = 576, width = 448 } }
input_size = [1152, 896]

[train]
epochs = 5
"#;

    #[test]
    fn parses_and_round_trips() {
        let c = PipelineConfig::from_toml_str(SAMPLE, &[]).unwrap();
        assert_eq!(c.train.epochs, Some(5));
        assert_eq!(c.model.input_size, (1152, 896));
        let again = PipelineConfig::from_toml_str(&c.to_toml(), &[]).unwrap();
        assert_eq!(again, c);
        let t = c.train_config();
        assert_eq!((t.epochs, t.rounds, t.batch_size), (5, 3, 8));
    }

    #[test]
    fn set_overrides() {
        let sets = vec!["train.base_lr=1e-3".to_string(), "model.backbone=resnet-50".into(), "train.rounds = 1".into()];
        let c = PipelineConfig::from_toml_str(SAMPLE, &sets).unwrap();
        assert_eq!(c.train.base_lr, Some(1e-3));
        assert_eq!(c.model.backbone, "resnet-50");
        assert_eq!(c.train_config().rounds, 1);
        assert!(PipelineConfig::from_toml_str(SAMPLE, &["nokey".into()]).is_err());
        assert!(PipelineConfig::from_toml_str(SAMPLE, &["train.bogus=1".into()]).is_err());
    }
}
