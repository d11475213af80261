use serde::{Deserialize, Serialize};

use super::{AugmentPolicy, LrSchedule, Result, TrainError};
use crate::model::{HeadSpec, ModelSpec};
use crate::stats::TtaPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OptimizerKind {
    /// Adam with decoupled weight decay; `weight_decay = 0` is plain Adam.
    Adam { beta1: f64, beta2: f64, eps: f64, weight_decay: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Objective {
    CrossEntropy,
    BinaryCrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelSpec,
    #[serde(flatten)]
    pub schedule: LrSchedule,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub rounds: usize,
    pub seed: u64,
    pub augmentation: AugmentPolicy,
    pub objective: Objective,
    /// Draw binary batches 1:1 from each class.
    #[serde(default = "yes")]
    pub balance_batches: bool,
    /// Transforms averaged when scoring the test split.
    #[serde(default)]
    pub tta: TtaPolicy,
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    pub const PATCH_EPOCHS: usize = 12;
    pub const WHOLE_IMAGE_EPOCHS: usize = 30;
    pub const TWO_VIEW_EPOCHS: usize = 30;

    /// Defaults for the family selected by the model head.
    pub fn for_model(model: ModelSpec) -> Self {
        let (epochs, batch_size, augmentation, objective) = match model.head {
            HeadSpec::PatchHead { .. } => (Self::PATCH_EPOCHS, 32, AugmentPolicy::Flips, Objective::CrossEntropy),
            HeadSpec::WholeImageHead => (Self::WHOLE_IMAGE_EPOCHS, 8, AugmentPolicy::WholeImage, Objective::BinaryCrossEntropy),
            HeadSpec::TwoViewHead => (Self::TWO_VIEW_EPOCHS, 4, AugmentPolicy::WholeImage, Objective::BinaryCrossEntropy),
        };
        Self {
            model,
            schedule: LrSchedule::default(),
            optimizer: OptimizerKind::default(),
            batch_size,
            epochs,
            rounds: 3,
            seed: 0,
            augmentation,
            objective,
            balance_batches: true,
            tta: TtaPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        let s = &self.schedule;
        if !(s.base_lr > 0.0) {
            return bad("base_lr must be > 0");
        }
        if !(s.lr_delta >= 0.0) {
            return bad("lr_delta must be >= 0");
        }
        if s.cosine_period_epochs < 1 {
            return bad("cosine_period_epochs must be >= 1");
        }
        if self.rounds < 1 {
            return bad("rounds must be >= 1");
        }
        if self.batch_size < 1 || self.epochs < 1 {
            return bad("batch_size and epochs must be >= 1");
        }
        let want = match self.model.head {
            HeadSpec::PatchHead { .. } => Objective::CrossEntropy,
            _ => Objective::BinaryCrossEntropy,
        };
        if self.objective != want {
            return bad("objective does not match the model head");
        }
        self.model.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let c = TrainConfig::for_model(ModelSpec::patch("resnet-50", 5));
        assert_eq!((c.epochs, c.rounds), (12, 3));
        assert!(c.validate().is_ok());
        let j = serde_json::to_string(&c).unwrap();
        assert!(j.contains("\"base_lr\":2e-5") || j.contains("\"base_lr\":0.00002"), "{j}");
        assert_eq!(serde_json::from_str::<TrainConfig>(&j).unwrap(), c);
        let mut bad = c.clone();
        bad.rounds = 0;
        assert!(bad.validate().is_err());
        let mut bad = c.clone();
        bad.schedule.cosine_period_epochs = 0;
        assert!(bad.validate().is_err());
        let mut bad = c;
        bad.objective = Objective::BinaryCrossEntropy;
        assert!(bad.validate().is_err());
    }
}
