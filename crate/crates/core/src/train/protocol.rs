use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{Result, RunResult, TrainConfig, TrainError};
use crate::stats::hanley_mcneil_se;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub seed: u64,
    pub best_val_metric: f64,
    pub test_metric: f64,
    pub test_tta_metric: Option<f64>,
    pub checkpoint: PathBuf,
    /// Test class counts, present for AUC runs.
    pub test_counts: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub per_round: Vec<RoundSummary>,
    pub test_mean: f64,
    /// Sample standard deviation; 0 with `std_defined = false` for one round.
    pub test_std: f64,
    pub std_defined: bool,
    /// Round with the highest validation metric, lowest index on ties.
    pub best_round: usize,
    pub best_test: f64,
    /// Hanley–McNeil SE of `best_test`, AUC runs only.
    pub best_test_se: Option<f64>,
    /// TTA test metric of the best round.
    pub best_test_tta: Option<f64>,
}

pub fn summarize_rounds(per_round: Vec<RoundSummary>) -> Result<ProtocolResult> {
    if per_round.is_empty() {
        return Err(TrainError::InvalidConfig("protocol needs at least one round".into()));
    }
    let n = per_round.len() as f64;
    let test_mean = per_round.iter().map(|r| r.test_metric).sum::<f64>() / n;
    let (test_std, std_defined) = if per_round.len() > 1 {
        let ss: f64 = per_round.iter().map(|r| (r.test_metric - test_mean).powi(2)).sum();
        ((ss / (n - 1.0)).sqrt(), true)
    } else {
        (0.0, false)
    };
    let mut best = 0;
    for (i, r) in per_round.iter().enumerate() {
        if r.best_val_metric > per_round[best].best_val_metric {
            best = i;
        }
    }
    let b = &per_round[best];
    let best_test_se = b.test_counts.map(|(p, q)| hanley_mcneil_se(b.test_metric, p, q));
    Ok(ProtocolResult {
        best_round: b.round,
        best_test: b.test_metric,
        best_test_se,
        best_test_tta: b.test_tta_metric,
        test_mean,
        test_std,
        std_defined,
        per_round,
    })
}

/// Runs `train_fn(round, seed)` for each round with `seed = config.seed +
/// round` and summarizes the test metrics.
pub fn run_protocol<F>(config: &TrainConfig, mut train_fn: F) -> Result<ProtocolResult>
where
    F: FnMut(usize, u64) -> Result<RunResult>,
{
    if config.rounds < 1 {
        return Err(TrainError::InvalidConfig("rounds must be >= 1".into()));
    }
    let mut rounds = Vec::with_capacity(config.rounds);
    for r in 0..config.rounds {
        let seed = config.seed + r as u64;
        let run = train_fn(r, seed)?;
        let test = run.test.as_ref().ok_or(TrainError::EmptySplit(crate::dataset::Split::Test))?;
        rounds.push(RoundSummary {
            round: r,
            seed,
            best_val_metric: run.best_val_metric,
            test_metric: test.metric,
            test_tta_metric: test.tta_metric,
            checkpoint: run.checkpoint.clone(),
            test_counts: test.n_pos.zip(test.n_neg),
        });
    }
    summarize_rounds(rounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::train::TestSummary;

    fn round(r: usize, val: f64, test: f64) -> RoundSummary {
        RoundSummary { round: r, seed: r as u64, best_val_metric: val, test_metric: test, test_tta_metric: None, checkpoint: PathBuf::new(), test_counts: None }
    }

    #[test]
    fn best_on_validation() {
        let p = summarize_rounds(vec![round(0, 0.70, 0.68), round(1, 0.75, 0.74), round(2, 0.72, 0.71)]).unwrap();
        assert_eq!(p.best_test, 0.74);
        assert_eq!(p.best_round, 1);
    }

    #[test]
    fn ties_go_to_lowest_round() {
        let p = summarize_rounds(vec![round(0, 0.7, 0.1), round(1, 0.7, 0.2)]).unwrap();
        assert_eq!(p.best_round, 0);
    }

    #[test]
    fn mean_and_sample_std() {
        let p = summarize_rounds(vec![round(0, 0.1, 0.80), round(1, 0.2, 0.82), round(2, 0.3, 0.84)]).unwrap();
        assert!((p.test_mean - 0.82).abs() < 1e-12);
        assert!((p.test_std - 0.02).abs() < 1e-12);
        assert!(p.std_defined);
    }

    #[test]
    fn single_round() {
        let p = summarize_rounds(vec![round(0, 0.5, 0.77)]).unwrap();
        assert_eq!((p.test_mean, p.best_test, p.test_std, p.std_defined), (0.77, 0.77, 0.0, false));
    }

    #[test]
    fn seeds_and_se() {
        let mut cfg = TrainConfig::for_model(ModelSpec::whole_image("tiny-mbconv", (64, 64)));
        cfg.seed = 40;
        let mut seen = Vec::new();
        let p = run_protocol(&cfg, |r, seed| {
            seen.push(seed);
            Ok(RunResult {
                round: r,
                seed,
                epochs: vec![],
                best_epoch: 0,
                best_val_metric: 0.5,
                reloaded_val_metric: 0.5,
                checkpoint: PathBuf::new(),
                test: Some(TestSummary { metric: 0.5, tta_metric: None, n_pos: Some(10), n_neg: Some(10), scores_path: None }),
            })
        })
        .unwrap();
        assert_eq!(seen, vec![40, 41, 42]);
        assert_eq!(p.per_round.len(), 3);
        assert!((p.best_test_se.unwrap() - 0.132288).abs() < 1e-6);
    }
}
