//! `mammoview` subcommands. Each command is also callable as a library
//! function so tests can drive the pipeline without a subprocess.

mod commands;
pub mod config;
mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use commands::{
    cmd_compare, cmd_prepare_patches, cmd_synth, cmd_train, resolve_checkpoint, CompareMode, ComparisonReport,
    PrepareOutcome, Stage,
};
pub use config::{InitMode, PipelineConfig};
pub use report::{cmd_report, load_ledger, read_top1_table, LedgerRow, ReportOutcome, Top1Entry, BUILTIN_TOP1};

use crate::dataset::DatasetError;
use crate::model::ModelError;
use crate::patches::PatchError;
use crate::stats::{AggregateOp, ScoreCsvError, StatsError};
use crate::synthetic::SyntheticError;
use crate::train::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("no run ledgers given")]
    EmptyLedgerSet,
    #[error("{path} is not a run ledger: {reason}")]
    BadLedger { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("plot failed: {0}")]
    Plot(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Scores(#[from] ScoreCsvError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "InvalidConfig",
            CliError::EmptyLedgerSet => "EmptyLedgerSet",
            CliError::BadLedger { .. } => "BadLedger",
            CliError::Io { .. } => "Io",
            CliError::Plot(_) => "Plot",
            CliError::Dataset(e) => e.code(),
            CliError::Patch(e) => e.code(),
            CliError::Model(e) => e.code(),
            CliError::Train(e) => e.code(),
            CliError::Stats(e) => e.code(),
            CliError::Scores(ScoreCsvError::Invalid(e)) => e.code(),
            CliError::Scores(ScoreCsvError::Csv(_)) => "ScoreCsv",
            CliError::Synthetic(_) => "Synthetic",
        }
    }

    /// 1 for bad inputs and unmet preconditions, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        const RUNTIME: [&str; 7] = ["Io", "Plot", "TensorError", "Synthetic", "UnreadableImage", "ArchiveError", "RasterError"];
        if RUNTIME.contains(&self.code()) {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mammoview", version, about = "Mammogram classifier training and AUC comparison")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Base seed; overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// `key=value` override, dotted keys, value parsed as TOML.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<PipelineConfig, CliError> {
        let mut cfg = PipelineConfig::load(&self.config, &self.sets)?;
        if let Some(s) = self.seed {
            cfg.train.seed = Some(s);
        }
        if let Some(o) = &self.output {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregateArg {
    Mean,
    Max,
}

impl From<AggregateArg> for AggregateOp {
    fn from(a: AggregateArg) -> Self {
        match a {
            AggregateArg::Mean => AggregateOp::Mean,
            AggregateArg::Max => AggregateOp::Max,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample lesion and background patches and write the patch index.
    PreparePatches(ConfigArgs),
    /// Train one stage over all rounds into a run ledger.
    Train {
        #[arg(long, value_enum)]
        stage: Stage,
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Compare two score files (`id,score,label`).
    Compare {
        scores_a: PathBuf,
        scores_b: PathBuf,
        #[arg(long, value_enum, default_value = "delong-paired")]
        mode: CompareMode,
        /// Collapse view-level ids (`exam|SIDE|VIEW`) to breast level first.
        #[arg(long, value_enum)]
        aggregate: Option<AggregateArg>,
        /// Assumed correlation between the two AUCs for the z-test.
        #[arg(long, default_value_t = crate::stats::DEFAULT_CORRELATION)]
        r: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Results tables and the backbone-accuracy correlation plot.
    Report {
        ledgers: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// CSV of `backbone,pretrain_tag,top1[,source]` replacing the built-in table.
        #[arg(long)]
        top1: Option<PathBuf>,
    },
    /// Registry listing.
    Models {
        #[command(subcommand)]
        action: ModelsAction,
    },
    /// Generate a synthetic corpus with blob lesions.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        n_images: usize,
        #[arg(long, default_value_t = 576)]
        height: usize,
        #[arg(long, default_value_t = 448)]
        width: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum ModelsAction {
    List,
}

fn models_list() -> String {
    let mut s = format!("{:<20}{:<20}{:<11}{:>9}  {}\n", "backbone", "arch", "tier", "channels", "tags");
    for e in crate::model::registry() {
        let tags: Vec<&str> = e.tags.iter().map(|t| t.as_str()).collect();
        s.push_str(&format!(
            "{:<20}{:<20}{:<11}{:>9}  {}\n",
            e.name,
            format!("{:?}", e.arch),
            format!("{:?}", e.tier),
            e.out_channels,
            tags.join(",")
        ));
    }
    s
}

/// Runs a parsed command, printing human-readable output to stdout.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::PreparePatches(a) => {
            let out = cmd_prepare_patches(&a.load()?)?;
            print!("{}", out.counts_table);
            println!("index: {}", out.index_path.display());
        }
        Command::Train { stage, args } => {
            let cfg = args.load()?;
            let result = cmd_train(stage, &cfg)?;
            for r in &result.per_round {
                println!("round {} seed {} val {:.4} test {:.4}", r.round, r.seed, r.best_val_metric, r.test_metric);
            }
            println!("test mean {:.4} std {:.4}; best round {} test {:.4}", result.test_mean, result.test_std, result.best_round, result.best_test);
            println!("ledger: {}", cfg.output_dir.display());
        }
        Command::Compare { scores_a, scores_b, mode, aggregate, r, output } => {
            let rep = cmd_compare(&scores_a, &scores_b, mode, aggregate.map(Into::into), r)?;
            print!("{}", rep.to_text());
            let dir = output.unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let path = dir.join("comparison.csv");
            std::fs::write(&path, rep.to_csv()).map_err(io_err(&path))?;
        }
        Command::Report { ledgers, output, top1 } => {
            let out = cmd_report(&ledgers, top1.as_deref(), &output)?;
            print!("{}", out.table_text);
            if let Some(r) = out.pearson_r {
                println!("pearson r (top-1 vs best test): {r:.4}");
            }
        }
        Command::Models { action: ModelsAction::List } => print!("{}", models_list()),
        Command::Synth { output, seed, n_images, height, width } => {
            let c = cmd_synth(&output, seed, n_images, height, width)?;
            println!("views: {}\nlesions: {}", c.views_csv.display(), c.lesions_csv.display());
        }
    }
    Ok(())
}
