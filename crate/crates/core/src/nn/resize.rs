use candle_core::{Result, Tensor};

use crate::raster::bilinear_taps;

fn resize_axis(x: &Tensor, dim: usize, out: usize) -> Result<Tensor> {
    let src = x.dim(dim)?;
    if src == out {
        return Ok(x.clone());
    }
    let taps = bilinear_taps(src, out);
    let dev = x.device();
    let i0 = Tensor::from_vec(taps.iter().map(|t| t.0 as u32).collect::<Vec<_>>(), out, dev)?;
    let i1 = Tensor::from_vec(taps.iter().map(|t| t.1 as u32).collect::<Vec<_>>(), out, dev)?;
    let mut shape = vec![1usize; x.rank()];
    shape[dim] = out;
    let w = Tensor::from_vec(taps.iter().map(|t| t.2 as f64).collect::<Vec<_>>(), shape, dev)?.to_dtype(x.dtype())?;
    let a = x.index_select(&i0, dim)?;
    let b = x.index_select(&i1, dim)?;
    a.broadcast_add(&(b - &a)?.broadcast_mul(&w)?)
}

/// Differentiable bilinear resize of an NCHW tensor with the same sampling
/// grid as `Raster::resize_bilinear`.
pub fn bilinear_resize(x: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    resize_axis(&resize_axis(x, 2, height)?, 3, width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Raster;
    use candle_core::{Device, Var};

    #[test]
    fn matches_raster() {
        let vals: Vec<f32> = (0..11 * 7).map(|i| ((i * 37) % 19) as f32 / 19.0).collect();
        let r = Raster::from_vec(11, 7, vals.clone()).unwrap();
        let t = Tensor::from_vec(vals, (1, 1, 11, 7), &Device::Cpu).unwrap();
        for (h, w) in [(5, 3), (11, 7), (20, 9), (6, 7)] {
            let want = r.resize_bilinear(h, w);
            let got = bilinear_resize(&t, h, w).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            for (a, b) in got.iter().zip(want.data()) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn differentiable() {
        let x = Var::from_tensor(&Tensor::ones((1, 2, 8, 8), candle_core::DType::F64, &Device::Cpu).unwrap()).unwrap();
        let y = bilinear_resize(x.as_tensor(), 4, 4).unwrap().sum_all().unwrap();
        let g = y.backward().unwrap();
        let gx = g.get(x.as_tensor()).unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap();
        // Each output's weights sum to one.
        assert!((gx - 32.0).abs() < 1e-9);
    }
}
