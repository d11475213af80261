use serde::{Deserialize, Serialize};

use super::{Result, StatsError};
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TtaTransform {
    Identity,
    HorizontalFlip,
}

impl TtaTransform {
    fn apply(self, input: &TtaInput) -> TtaInput {
        match (self, input) {
            (TtaTransform::Identity, _) => input.clone(),
            (TtaTransform::HorizontalFlip, TtaInput::Single(r)) => TtaInput::Single(r.flip_horizontal()),
            (TtaTransform::HorizontalFlip, TtaInput::Pair(cc, mlo)) => {
                TtaInput::Pair(cc.flip_horizontal(), mlo.flip_horizontal())
            }
        }
    }
}

impl std::str::FromStr for TtaTransform {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "IDENTITY" => Ok(TtaTransform::Identity),
            "HFLIP" | "HORIZONTAL_FLIP" => Ok(TtaTransform::HorizontalFlip),
            _ => Err(format!("unknown TTA transform `{s}`")),
        }
    }
}

/// Transform set whose outputs are averaged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtaPolicy(pub Vec<TtaTransform>);

impl Default for TtaPolicy {
    fn default() -> Self {
        TtaPolicy(vec![TtaTransform::Identity, TtaTransform::HorizontalFlip])
    }
}

impl TtaPolicy {
    pub fn identity() -> Self {
        TtaPolicy(vec![TtaTransform::Identity])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TtaInput {
    Single(Raster),
    Pair(Raster, Raster),
}

/// Anything mapping an image (or CC/MLO pair) to a probability.
pub trait Predictor {
    fn predict(&self, input: &TtaInput) -> Result<f64>;

    /// Batched variant; the default calls [`Predictor::predict`] per input.
    fn predict_many(&self, inputs: &[TtaInput]) -> Result<Vec<f64>> {
        inputs.iter().map(|x| self.predict(x)).collect()
    }
}

/// Mean prediction over the policy's transforms.
pub fn tta_predict<P: Predictor + ?Sized>(model: &P, input: &TtaInput, policy: &TtaPolicy) -> Result<f64> {
    if policy.0.is_empty() {
        return Err(StatsError::InvalidInput("empty TTA policy".into()));
    }
    let inputs: Vec<TtaInput> = policy.0.iter().map(|t| t.apply(input)).collect();
    let outs = model.predict_many(&inputs)?;
    Ok(outs.iter().sum::<f64>() / outs.len() as f64)
}
