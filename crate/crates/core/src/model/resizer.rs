//! Resizers placed in front of a whole-image backbone.

use candle_core::{Result, Tensor};

use super::{ModelError, Result as ModelResult};
use crate::nn::{bilinear_resize, BatchNorm2d, Conv2d, ConvSpec, Layer, Params};
use crate::raster::Raster;

/// Deterministic area-averaging downscale applied to rasters before batching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedResizer {
    pub target: (usize, usize),
}

impl FixedResizer {
    pub fn apply(&self, r: &Raster) -> ModelResult<Raster> {
        let (h, w) = self.target;
        if h > r.height() || w > r.width() {
            return Err(ModelError::UpscaleRequested { target: self.target, input: r.dims() });
        }
        Ok(r.resize_area(h, w))
    }
}

const LEAK: f64 = 0.2;

fn leaky(x: &Tensor) -> Result<Tensor> {
    let neg = (x.minimum(0.0)? * LEAK)?;
    x.relu()? + neg
}

struct ResBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
}

impl ResBlock {
    fn new(p: &Params, n: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(&p.pp("conv1"), ConvSpec::new(n, n, 3, 1))?,
            bn1: BatchNorm2d::new(&p.pp("bn1"), n, 1e-5)?,
            conv2: Conv2d::new(&p.pp("conv2"), ConvSpec::new(n, n, 3, 1))?,
            bn2: BatchNorm2d::new(&p.pp("bn2"), n, 1e-5)?,
        })
    }
}

impl Layer for ResBlock {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = leaky(&self.bn1.forward_t(&self.conv1.forward_t(x, train)?, train)?)?;
        let y = self.bn2.forward_t(&self.conv2.forward_t(&y, train)?, train)?;
        y + x
    }
}

/// Trainable resizer: a bilinear skip plus a convolutional residual branch
/// that is resized in feature space. Runs on single-channel images and is
/// optimized jointly with the classifier.
pub struct LearnedResizer {
    target: (usize, usize),
    conv_in: Conv2d,
    conv_mid: Conv2d,
    bn_mid: BatchNorm2d,
    blocks: Vec<ResBlock>,
    conv_post: Conv2d,
    bn_post: BatchNorm2d,
    conv_out: Conv2d,
}

impl LearnedResizer {
    pub const FILTERS: usize = 16;
    pub const RES_BLOCKS: usize = 1;

    pub fn new(p: &Params, target: (usize, usize)) -> Result<Self> {
        let n = Self::FILTERS;
        Ok(Self {
            target,
            conv_in: Conv2d::new(&p.pp("conv_in"), ConvSpec::new(1, n, 7, 1).bias(true))?,
            conv_mid: Conv2d::new(&p.pp("conv_mid"), ConvSpec::new(n, n, 1, 1))?,
            bn_mid: BatchNorm2d::new(&p.pp("bn_mid"), n, 1e-5)?,
            blocks: (0..Self::RES_BLOCKS).map(|i| ResBlock::new(&p.pp(format!("blocks.{i}")), n)).collect::<Result<_>>()?,
            conv_post: Conv2d::new(&p.pp("conv_post"), ConvSpec::new(n, n, 3, 1))?,
            bn_post: BatchNorm2d::new(&p.pp("bn_post"), n, 1e-5)?,
            conv_out: Conv2d::new(&p.pp("conv_out"), ConvSpec::new(n, 1, 7, 1).bias(true))?,
        })
    }

    pub fn target(&self) -> (usize, usize) {
        self.target
    }
}

impl Layer for LearnedResizer {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (h, w) = self.target;
        let skip = bilinear_resize(x, h, w)?;
        let y = leaky(&self.conv_in.forward_t(x, train)?)?;
        let y = leaky(&self.conv_mid.forward_t(&y, train)?)?;
        let y = self.bn_mid.forward_t(&y, train)?;
        let feat = bilinear_resize(&y, h, w)?;
        let mut z = feat.clone();
        for b in &self.blocks {
            z = b.forward_t(&z, train)?;
        }
        let z = (self.bn_post.forward_t(&self.conv_post.forward_t(&z, train)?, train)? + feat)?;
        self.conv_out.forward_t(&z, train)? + skip
    }
}
