use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ledger::MetricsWriter;
use super::{ExampleSet, Objective, OptimizerKind, Result, TrainConfig, TrainError};
use crate::dataset::Split;
use crate::model::{load_archive, save_archive, ArchiveMeta, Model, ModelInput};
use crate::raster::Raster;
use crate::seed::rng_for;
use crate::stats::{auc, tta_predict, ScoreSet, TtaInput, TtaPolicy};

const EVAL_BATCH: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    /// Plain (identity-only) test metric.
    pub metric: f64,
    /// Test metric under the configured TTA policy, when it is not identity.
    pub tta_metric: Option<f64>,
    pub n_pos: Option<usize>,
    pub n_neg: Option<usize>,
    pub scores_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub round: usize,
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_metric: f64,
    /// Validation metric recomputed from the reloaded checkpoint.
    pub reloaded_val_metric: f64,
    pub checkpoint: PathBuf,
    pub test: Option<TestSummary>,
}

/// AUC with its scores for binary models, accuracy for patch models.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metric: f64,
    pub scores: Option<ScoreSet>,
}

fn to_input(views: Vec<Raster>) -> TtaInput {
    let mut it = views.into_iter();
    let a = it.next().expect("at least one view");
    match it.next() {
        Some(b) => TtaInput::Pair(a, b),
        None => TtaInput::Single(a),
    }
}

pub fn evaluate(model: &Model, set: &dyn ExampleSet, objective: Objective, tta: &TtaPolicy) -> Result<Evaluation> {
    match objective {
        Objective::BinaryCrossEntropy => {
            let mut ids = Vec::with_capacity(set.len());
            let mut scores = Vec::with_capacity(set.len());
            let mut labels = Vec::with_capacity(set.len());
            for i in 0..set.len() {
                let input = to_input(set.load(i)?);
                scores.push(tta_predict(model, &input, tta)?);
                ids.push(set.id(i));
                labels.push(set.target(i) as u8);
            }
            let s = ScoreSet::new(ids, scores, labels)?;
            Ok(Evaluation { metric: auc(&s)?, scores: Some(s) })
        }
        Objective::CrossEntropy => {
            let mut correct = 0usize;
            for start in (0..set.len()).step_by(EVAL_BATCH) {
                let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(set.len())).collect();
                let imgs = idx.iter().map(|&i| Ok(set.load(i)?.remove(0))).collect::<Result<Vec<_>>>()?;
                let probs = model.predict_patches(&imgs)?;
                for (p, &i) in probs.iter().zip(&idx) {
                    let arg = p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| k).unwrap_or(0);
                    correct += (arg == set.target(i)) as usize;
                }
            }
            Ok(Evaluation { metric: correct as f64 / set.len().max(1) as f64, scores: None })
        }
    }
}

/// Example order for one epoch. Binary sets with `balance_batches` draw
/// each batch half from positives and half from negatives, cycling through
/// per-class shuffles; everything else is a plain shuffle.
pub(crate) fn epoch_batches(set: &dyn ExampleSet, config: &TrainConfig, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = rng_for(seed, &["batches", &epoch.to_string()]);
    let n = set.len();
    let bs = config.batch_size;
    let n_batches = n.div_ceil(bs);
    let binary = config.objective == Objective::BinaryCrossEntropy;
    let mut pos: Vec<usize> = (0..n).filter(|&i| set.target(i) == 1).collect();
    let mut neg: Vec<usize> = (0..n).filter(|&i| set.target(i) != 1).collect();
    if !(binary && config.balance_batches) || pos.is_empty() || neg.is_empty() {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        return order.chunks(bs).map(|c| c.to_vec()).collect();
    }
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let (mut ip, mut ineg) = (0usize, 0usize);
    let mut out = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let size = if b + 1 == n_batches { n - b * bs } else { bs };
        // odd sizes alternate which class gets the extra slot
        let n_pos = size / 2 + (size % 2) * (b % 2);
        let mut batch = Vec::with_capacity(size);
        for k in 0..size {
            let from_pos = k < n_pos;
            let (list, i) = if from_pos { (&mut pos, &mut ip) } else { (&mut neg, &mut ineg) };
            if *i == list.len() {
                list.shuffle(&mut rng);
                *i = 0;
            }
            batch.push(list[*i]);
            *i += 1;
        }
        out.push(batch);
    }
    out
}

fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> candle_core::Result<Tensor> {
    // max(x, 0) - x·y + log(1 + exp(-|x|))
    let softplus = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    ((logits.relu()? - (logits * targets)?)? + softplus)?.mean_all()
}

fn batch_loss(model: &Model, views: &[Vec<Raster>], targets: &[usize], objective: Objective) -> Result<Tensor> {
    let arity = views[0].len();
    let stack = |k: usize| -> Result<Tensor> {
        let prepared = views.iter().map(|v| model.prepare(&v[k])).collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(model.batch(&prepared.iter().collect::<Vec<_>>())?)
    };
    let input = if arity == 2 { ModelInput::Pair(stack(0)?, stack(1)?) } else { ModelInput::Single(stack(0)?) };
    let logits = model.forward(&input, true)?;
    let dev = model.device();
    Ok(match objective {
        Objective::BinaryCrossEntropy => {
            let y: Vec<f32> = targets.iter().map(|&t| t as f32).collect();
            let y = Tensor::from_vec(y, targets.len(), dev)?.to_dtype(logits.dtype())?;
            bce_with_logits(&logits, &y)?
        }
        Objective::CrossEntropy => {
            let y: Vec<u32> = targets.iter().map(|&t| t as u32).collect();
            candle_nn::loss::cross_entropy(&logits, &Tensor::from_vec(y, targets.len(), dev)?)?
        }
    })
}

fn optimizer(model: &Model, config: &TrainConfig) -> Result<AdamW> {
    let OptimizerKind::Adam { beta1, beta2, eps, weight_decay } = config.optimizer;
    let p = ParamsAdamW { lr: config.schedule.lr_at(0), beta1, beta2, eps, weight_decay };
    Ok(AdamW::new(model.trainable_vars(), p)?)
}

/// Trains `model` for `config.epochs`, keeping the best-on-validation
/// checkpoint at `round_dir/best.safetensors`. Returns the run record and
/// the reloaded best model.
pub fn train_run(
    model: &Model,
    train: &dyn ExampleSet,
    val: &dyn ExampleSet,
    config: &TrainConfig,
    round: usize,
    seed: u64,
    round_dir: &Path,
    source_run: &str,
) -> Result<(RunResult, Model)> {
    if train.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit(Split::Val));
    }
    std::fs::create_dir_all(round_dir).map_err(|e| TrainError::io(round_dir, e))?;
    let mut metrics = MetricsWriter::create(&round_dir.join("metrics.csv"))?;
    let mut opt = optimizer(model, config)?;
    let checkpoint = round_dir.join("best.safetensors");
    let identity = TtaPolicy::identity();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64)> = None;
    for epoch in 0..config.epochs {
        let lr = config.schedule.lr_at(epoch);
        opt.set_learning_rate(lr);
        let batches = epoch_batches(train, config, seed, epoch);
        let mut total = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let mut rng = rng_for(seed, &["augment", &epoch.to_string(), &b.to_string()]);
            let mut views = Vec::with_capacity(idx.len());
            let mut targets = Vec::with_capacity(idx.len());
            for &i in idx {
                let v: Vec<Raster> = train.load(i)?.iter().map(|r| config.augmentation.apply(r, &mut rng)).collect();
                views.push(v);
                targets.push(train.target(i));
            }
            let loss = batch_loss(model, &views, &targets, config.objective)?;
            opt.backward_step(&loss)?;
            total += loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        }
        let train_loss = total / batches.len() as f64;
        let val_metric = evaluate(model, val, config.objective, &identity)?.metric;
        log::info!("round {round} epoch {epoch}: lr {lr:.3e} loss {train_loss:.4} val {val_metric:.4}");
        metrics.row(epoch, Split::Train, "loss", train_loss)?;
        metrics.row(epoch, Split::Train, "lr", lr)?;
        metrics.row(epoch, Split::Val, metric_name(config.objective), val_metric)?;
        if best.is_none_or(|(_, m)| val_metric > m) {
            best = Some((epoch, val_metric));
            let meta = ArchiveMeta { spec: model.spec().clone(), source_run: source_run.into(), epoch, val_metric, seed };
            save_archive(model, &checkpoint, &meta)?;
        }
        epochs.push(EpochMetrics { epoch, lr, train_loss, val_metric });
    }
    let (best_epoch, best_val_metric) = best.expect("epochs >= 1");
    let (reloaded, _) = load_archive(&checkpoint)?;
    let reloaded_val_metric = evaluate(&reloaded, val, config.objective, &identity)?.metric;
    metrics.flush()?;
    let run = RunResult { round, seed, epochs, best_epoch, best_val_metric, reloaded_val_metric, checkpoint, test: None };
    Ok((run, reloaded))
}

pub fn metric_name(objective: Objective) -> &'static str {
    match objective {
        Objective::BinaryCrossEntropy => "auc",
        Objective::CrossEntropy => "accuracy",
    }
}
