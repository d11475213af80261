use super::types::BitDepth;
use super::{DatasetError, Result};
use crate::raster::{IntRaster, Raster};

/// Scales integer pixels to [0, 1] by `2^bits - 1`.
pub fn normalize_image(raw: &IntRaster, bit_depth: BitDepth) -> Result<Raster> {
    let max = bit_depth.max_value();
    if let Some(&v) = raw.data.iter().find(|&&v| v as u32 > max) {
        return Err(DatasetError::BitDepthOverflow {
            value: v as u32,
            bit_depth: bit_depth.bits(),
        });
    }
    let scale = 1.0 / max as f64;
    let data = raw.data.iter().map(|&v| (v as f64 * scale) as f32).collect();
    Ok(Raster::from_vec(raw.height, raw.width, data).expect("dimensions preserved"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(bits: u8, data: Vec<u16>) -> IntRaster {
        IntRaster {
            height: 1,
            width: data.len(),
            bit_depth: bits,
            data,
        }
    }

    #[test]
    fn extremes_and_midpoint() {
        let r = normalize_image(&raw(16, vec![65535, 0, 32768]), BitDepth::Sixteen).unwrap();
        assert_eq!(r.data()[0], 1.0);
        assert_eq!(r.data()[1], 0.0);
        assert!((r.data()[2] as f64 - 32768.0 / 65535.0).abs() < 1e-7);
        assert!((r.data()[2] as f64 - 0.500_007_629).abs() < 1e-7);
        let r = normalize_image(&raw(8, vec![0, 255]), BitDepth::Eight).unwrap();
        assert_eq!(r.data(), &[0.0, 1.0]);
    }

    #[test]
    fn overflow() {
        assert!(matches!(
            normalize_image(&raw(16, vec![3, 256]), BitDepth::Eight),
            Err(DatasetError::BitDepthOverflow { value: 256, bit_depth: 8 })
        ));
    }

    proptest! {
        #[test]
        fn monotone_and_round_trips(mut v in prop::collection::vec(0u16..=u16::MAX, 1..64)) {
            v.sort();
            let r = normalize_image(&raw(16, v.clone()), BitDepth::Sixteen).unwrap();
            prop_assert!(r.data().windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(r.data().iter().all(|x| (0.0..=1.0).contains(x)));
            for (x, &orig) in r.data().iter().zip(&v) {
                let back = (*x as f64 * 65535.0).round();
                prop_assert!((back - orig as f64).abs() <= 1.0);
                prop_assert_eq!(back as u16, orig);
            }
        }
    }
}
