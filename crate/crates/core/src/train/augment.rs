use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AugmentPolicy {
    None,
    /// Horizontal and vertical flips, each with p = 0.5.
    Flips,
    /// Horizontal flip (p = 0.5), rotation within ±15°, brightness and
    /// contrast jitter within ±10%.
    WholeImage,
}

impl AugmentPolicy {
    pub const MAX_ROTATION_DEG: f32 = 15.0;
    pub const JITTER: f32 = 0.10;

    pub fn apply(self, r: &Raster, rng: &mut impl Rng) -> Raster {
        match self {
            AugmentPolicy::None => r.clone(),
            AugmentPolicy::Flips => {
                let mut out = if rng.random_bool(0.5) { r.flip_horizontal() } else { r.clone() };
                if rng.random_bool(0.5) {
                    out = out.flip_vertical();
                }
                out
            }
            AugmentPolicy::WholeImage => {
                let out = if rng.random_bool(0.5) { r.flip_horizontal() } else { r.clone() };
                let deg = rng.random_range(-Self::MAX_ROTATION_DEG..=Self::MAX_ROTATION_DEG);
                let b = rng.random_range(-Self::JITTER..=Self::JITTER);
                let c = 1.0 + rng.random_range(-Self::JITTER..=Self::JITTER);
                out.rotate(deg).adjust(b, c)
            }
        }
    }
}

impl std::str::FromStr for AugmentPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NONE" => Ok(AugmentPolicy::None),
            "FLIPS" => Ok(AugmentPolicy::Flips),
            "WHOLE_IMAGE" => Ok(AugmentPolicy::WholeImage),
            _ => Err(format!("unknown augmentation policy `{s}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;

    #[test]
    fn flips_preserve_values() {
        let r = Raster::from_vec(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let mut rng = rng_for(0, &["t"]);
        for _ in 0..20 {
            let a = AugmentPolicy::Flips.apply(&r, &mut rng);
            let mut x = a.data().to_vec();
            x.sort_by(f32::total_cmp);
            assert_eq!(x, r.data());
        }
    }

    #[test]
    fn whole_image_bounded() {
        let r = Raster::filled(32, 24, 0.5);
        let mut rng = rng_for(1, &["t"]);
        for _ in 0..10 {
            let a = AugmentPolicy::WholeImage.apply(&r, &mut rng);
            assert_eq!(a.dims(), (32, 24));
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(AugmentPolicy::None.apply(&r, &mut rng), r);
    }
}
