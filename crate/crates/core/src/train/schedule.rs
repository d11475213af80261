use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::TrainConfig;

/// Linear warm-up from `base_lr` to `base_lr + lr_delta`, then a
/// non-decaying cosine cycle of `cosine_period_epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub lr_delta: f64,
    pub cosine_period_epochs: usize,
    pub warmup_epochs: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { base_lr: 2e-5, lr_delta: 2e-4, cosine_period_epochs: 3, warmup_epochs: 4 }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            return self.base_lr + self.lr_delta * epoch as f64 / self.warmup_epochs as f64;
        }
        let period = self.cosine_period_epochs.max(1);
        let phase = ((epoch - self.warmup_epochs) % period) as f64 / period as f64;
        self.base_lr + self.lr_delta * (1.0 + (PI * phase).cos()) / 2.0
    }
}

pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    config.schedule.lr_at(epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decided_values() {
        let s = LrSchedule::default();
        assert!((s.lr_at(0) - 2e-5).abs() < 1e-12);
        assert!((s.lr_at(4) - 2.2e-4).abs() < 1e-12);
        assert!((s.lr_at(5) - 1.7e-4).abs() < 1e-12);
        // last warm-up epoch and the jump into the cycle
        assert!((s.lr_at(3) - (2e-5 + 2e-4 * 0.75)).abs() < 1e-12);
        assert!((s.lr_at(4) - s.lr_at(3) - 2e-4 / 4.0).abs() < 1e-12);
        // period 3 repeats
        assert!((s.lr_at(7) - s.lr_at(4)).abs() < 1e-18);
        assert!((s.lr_at(6) - (2e-5 + 2e-4 * (1.0 + (2.0 * PI / 3.0).cos()) / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn no_warmup() {
        let s = LrSchedule { warmup_epochs: 0, ..LrSchedule::default() };
        assert!((s.lr_at(0) - 2.2e-4).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn bounded(epoch in 0usize..10_000, base in 1e-7f64..1e-2, delta in 0f64..1e-2, period in 1usize..20, warm in 0usize..20) {
            let s = LrSchedule { base_lr: base, lr_delta: delta, cosine_period_epochs: period, warmup_epochs: warm };
            let lr = s.lr_at(epoch);
            prop_assert!(lr >= base - 1e-18 && lr <= base + delta + 1e-18);
        }
    }
}
