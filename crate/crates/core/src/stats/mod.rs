//! AUC estimation, standard errors and the comparison tests used to rank
//! classifiers, plus view aggregation, test-time augmentation and the
//! backbone-accuracy correlation.

mod aggregate;
mod auc;
mod correlation;
mod delong;
mod normal;
mod scores;
mod tta;
mod ztest;

pub use aggregate::{aggregate_view_scores, aggregate_views, pair_key, AggregateOp};
pub use auc::{auc, auc_report, hanley_mcneil_se, midranks, AucReport};
pub use correlation::{patch_accuracy, pearson_r};
pub use delong::{delong_test, placements, DelongFlag, DelongResult, Placements};
pub use normal::{normal_cdf, upper_tail};
pub use scores::{ScoreCsvError, ScoreSet};
pub use tta::{tta_predict, Predictor, TtaInput, TtaPolicy, TtaTransform};
pub use ztest::{z_test_correlated, ZTestResult, DEFAULT_CORRELATION};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("score set needs both classes: {n_pos} positive, {n_neg} negative")]
    DegenerateLabels { n_pos: usize, n_neg: usize },
    #[error("score set fields have different lengths (ids {ids}, scores {scores}, labels {labels})")]
    LengthMismatch {
        ids: usize,
        scores: usize,
        labels: usize,
    },
    #[error("score {value} for `{id}` is not a finite probability in [0, 1]")]
    InvalidScore { id: String, value: f64 },
    #[error("label {value} for `{id}` is not 0 or 1")]
    InvalidLabel { id: String, value: u8 },
    #[error("duplicate id `{0}` in score set")]
    DuplicateId(String),
    #[error("zero variance: {0}")]
    ZeroVariance(&'static str),
    #[error("score sets are not paired on the same cases: {0}")]
    UnpairedScoreSets(String),
    #[error("views are not paired one-to-one: {0}")]
    UnpairedViews(String),
    #[error("CC and MLO labels disagree for `{0}`")]
    LabelConflict(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("prediction failed: {0}")]
    Prediction(String),
}

impl StatsError {
    pub fn code(&self) -> &'static str {
        match self {
            StatsError::DegenerateLabels { .. } => "DegenerateLabels",
            StatsError::LengthMismatch { .. } => "LengthMismatch",
            StatsError::InvalidScore { .. } => "InvalidScore",
            StatsError::InvalidLabel { .. } => "InvalidLabel",
            StatsError::DuplicateId(_) => "DuplicateId",
            StatsError::ZeroVariance(_) => "ZeroVariance",
            StatsError::UnpairedScoreSets(_) => "UnpairedScoreSets",
            StatsError::UnpairedViews(_) => "UnpairedViews",
            StatsError::LabelConflict(_) => "LabelConflict",
            StatsError::InvalidInput(_) => "InvalidInput",
            StatsError::Prediction(_) => "PredictionFailed",
        }
    }
}

pub type Result<T> = std::result::Result<T, StatsError>;
