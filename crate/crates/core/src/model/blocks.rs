//! Backbone building blocks in NCHW layout.

use candle_core::{Result, Tensor, Var};

use crate::nn::{value, Activation, BatchNorm2d, Conv2d, ConvBnAct, ConvSpec, Init, Layer, LayerNorm2d, Params, SqueezeExcite};

pub fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut n = (((v + d / 2.0) / d).floor() * d).max(d);
    if n < 0.9 * v {
        n += d;
    }
    n as usize
}

pub struct Seq(pub Vec<Box<dyn Layer>>);

impl Layer for Seq {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut x = x.clone();
        for l in &self.0 {
            x = l.forward_t(&x, train)?;
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SeCfg {
    pub squeeze: usize,
    pub act: Activation,
    pub gate: Activation,
}

#[derive(Debug, Clone, Copy)]
pub struct IrCfg {
    pub cin: usize,
    pub cout: usize,
    pub expanded: usize,
    pub kernel: usize,
    pub stride: usize,
    pub act: Activation,
    pub se: Option<SeCfg>,
    pub fused: bool,
    pub bn_eps: f64,
}

/// Inverted residual block: MBConv (expand, depthwise, SE, project) or its
/// fused variant (full k×k expansion conv, project).
pub struct InvertedResidual {
    expand: Option<ConvBnAct>,
    dw: Option<ConvBnAct>,
    se: Option<SqueezeExcite>,
    project: Option<ConvBnAct>,
    residual: bool,
}

impl InvertedResidual {
    pub fn new(p: &Params, c: IrCfg) -> Result<Self> {
        let none = Activation::Identity;
        let b = if c.fused {
            if c.expanded != c.cin {
                Self {
                    expand: Some(ConvBnAct::new(&p.pp("expand"), ConvSpec::new(c.cin, c.expanded, c.kernel, c.stride), c.act, c.bn_eps)?),
                    dw: None,
                    se: None,
                    project: Some(ConvBnAct::new(&p.pp("project"), ConvSpec::new(c.expanded, c.cout, 1, 1), none, c.bn_eps)?),
                    residual: false,
                }
            } else {
                Self {
                    expand: Some(ConvBnAct::new(&p.pp("expand"), ConvSpec::new(c.cin, c.cout, c.kernel, c.stride), c.act, c.bn_eps)?),
                    dw: None,
                    se: None,
                    project: None,
                    residual: false,
                }
            }
        } else {
            let expand = if c.expanded != c.cin {
                Some(ConvBnAct::new(&p.pp("expand"), ConvSpec::new(c.cin, c.expanded, 1, 1), c.act, c.bn_eps)?)
            } else {
                None
            };
            let dw_spec = ConvSpec::new(c.expanded, c.expanded, c.kernel, c.stride).groups(c.expanded);
            Self {
                expand,
                dw: Some(ConvBnAct::new(&p.pp("dw"), dw_spec, c.act, c.bn_eps)?),
                se: match c.se {
                    Some(s) => Some(SqueezeExcite::new(&p.pp("se"), c.expanded, s.squeeze, s.act, s.gate)?),
                    None => None,
                },
                project: Some(ConvBnAct::new(&p.pp("project"), ConvSpec::new(c.expanded, c.cout, 1, 1), none, c.bn_eps)?),
                residual: false,
            }
        };
        Ok(Self { residual: c.stride == 1 && c.cin == c.cout, ..b })
    }
}

impl Layer for InvertedResidual {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut y = x.clone();
        if let Some(l) = &self.expand {
            y = l.forward_t(&y, train)?;
        }
        if let Some(l) = &self.dw {
            y = l.forward_t(&y, train)?;
        }
        if let Some(se) = &self.se {
            y = se.forward_t(&y, train)?;
        }
        if let Some(l) = &self.project {
            y = l.forward_t(&y, train)?;
        }
        if self.residual {
            y = (y + x)?;
        }
        Ok(y)
    }
}

pub struct ResNetBlock {
    convs: Vec<ConvBnAct>,
    downsample: Option<ConvBnAct>,
}

impl ResNetBlock {
    /// Basic (two 3×3) block when `bottleneck` is None, else a 1×1-3×3-1×1
    /// bottleneck of the given (width, groups).
    pub fn new(p: &Params, cin: usize, planes: usize, stride: usize, bottleneck: Option<(usize, usize)>) -> Result<Self> {
        let relu = Activation::Relu;
        let (convs, cout) = match bottleneck {
            None => (
                vec![
                    ConvBnAct::new(&p.pp("conv1"), ConvSpec::new(cin, planes, 3, stride), relu, 1e-5)?,
                    ConvBnAct::new(&p.pp("conv2"), ConvSpec::new(planes, planes, 3, 1), Activation::Identity, 1e-5)?,
                ],
                planes,
            ),
            Some((width, groups)) => (
                vec![
                    ConvBnAct::new(&p.pp("conv1"), ConvSpec::new(cin, width, 1, 1), relu, 1e-5)?,
                    ConvBnAct::new(&p.pp("conv2"), ConvSpec::new(width, width, 3, stride).groups(groups), relu, 1e-5)?,
                    ConvBnAct::new(&p.pp("conv3"), ConvSpec::new(width, planes * 4, 1, 1), Activation::Identity, 1e-5)?,
                ],
                planes * 4,
            ),
        };
        let downsample = if stride != 1 || cin != cout {
            Some(ConvBnAct::new(&p.pp("downsample"), ConvSpec::new(cin, cout, 1, stride), Activation::Identity, 1e-5)?)
        } else {
            None
        };
        Ok(Self { convs, downsample })
    }
}

impl Layer for ResNetBlock {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut y = x.clone();
        for c in &self.convs {
            y = c.forward_t(&y, train)?;
        }
        let skip = match &self.downsample {
            Some(d) => d.forward_t(x, train)?,
            None => x.clone(),
        };
        (y + skip)?.relu()
    }
}

/// Pre-activation norm, ReLU, conv.
pub struct BnReluConv {
    bn: BatchNorm2d,
    conv: Conv2d,
}

impl BnReluConv {
    pub fn new(p: &Params, s: ConvSpec) -> Result<Self> {
        Ok(Self { bn: BatchNorm2d::new(&p.pp("norm"), s.cin, 1e-5)?, conv: Conv2d::new(&p.pp("conv"), s)? })
    }
}

impl Layer for BnReluConv {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.conv.forward_t(&self.bn.forward_t(x, train)?.relu()?, train)
    }
}

pub struct DenseLayer {
    a: BnReluConv,
    b: BnReluConv,
}

impl DenseLayer {
    pub fn new(p: &Params, cin: usize, growth: usize, bn_size: usize) -> Result<Self> {
        Ok(Self {
            a: BnReluConv::new(&p.pp("a"), ConvSpec::new(cin, bn_size * growth, 1, 1))?,
            b: BnReluConv::new(&p.pp("b"), ConvSpec::new(bn_size * growth, growth, 3, 1))?,
        })
    }
}

impl Layer for DenseLayer {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.b.forward_t(&self.a.forward_t(x, train)?, train)?;
        Tensor::cat(&[x, &y], 1)
    }
}

pub struct Transition(BnReluConv);

impl Transition {
    pub fn new(p: &Params, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self(BnReluConv::new(p, ConvSpec::new(cin, cout, 1, 1))?))
    }
}

impl Layer for Transition {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.0.forward_t(x, train)?.avg_pool2d(2)
    }
}

pub struct ConvNextBlock {
    dw: Conv2d,
    norm: LayerNorm2d,
    pw1: Conv2d,
    pw2: Conv2d,
    gamma: Var,
}

impl ConvNextBlock {
    pub fn new(p: &Params, dim: usize) -> Result<Self> {
        let tn = Init::TruncNormal(0.02);
        let zero = Init::Const(0.0);
        Ok(Self {
            dw: Conv2d::with_init(&p.pp("dw"), ConvSpec::new(dim, dim, 7, 1).groups(dim).bias(true), tn, zero)?,
            norm: LayerNorm2d::new(&p.pp("norm"), dim, 1e-6)?,
            pw1: Conv2d::with_init(&p.pp("pw1"), ConvSpec::new(dim, 4 * dim, 1, 1).bias(true), tn, zero)?,
            pw2: Conv2d::with_init(&p.pp("pw2"), ConvSpec::new(4 * dim, dim, 1, 1).bias(true), tn, zero)?,
            gamma: p.weight("gamma", dim, Init::Const(1e-6))?,
        })
    }
}

impl Layer for ConvNextBlock {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.norm.forward_t(&self.dw.forward_t(x, train)?, train)?;
        let y = self.pw2.forward_t(&self.pw1.forward_t(&y, train)?.gelu_erf()?, train)?;
        let g = value(&self.gamma, train).reshape((1, (), 1, 1))?;
        y.broadcast_mul(&g)? + x
    }
}

/// LayerNorm followed by a non-overlapping strided conv (or the reverse
/// for the stem).
pub struct NormConv {
    norm: LayerNorm2d,
    conv: Conv2d,
    norm_first: bool,
}

impl NormConv {
    pub fn new(p: &Params, cin: usize, cout: usize, k: usize, norm_first: bool) -> Result<Self> {
        let s = ConvSpec::new(cin, cout, k, k).padding(0).bias(true);
        Ok(Self {
            norm: LayerNorm2d::new(&p.pp("norm"), if norm_first { cin } else { cout }, 1e-6)?,
            conv: Conv2d::with_init(&p.pp("conv"), s, Init::TruncNormal(0.02), Init::Const(0.0))?,
            norm_first,
        })
    }
}

impl Layer for NormConv {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        if self.norm_first {
            self.conv.forward_t(&self.norm.forward_t(x, train)?, train)
        } else {
            self.norm.forward_t(&self.conv.forward_t(x, train)?, train)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divisible() {
        assert_eq!(make_divisible(32.0 * 1.2, 8), 40);
        assert_eq!(make_divisible(320.0 * 1.2, 8), 384);
        assert_eq!(make_divisible(16.0 * 1.4, 8), 24);
        assert_eq!(make_divisible(72.0 / 4.0, 8), 24);
        assert_eq!(make_divisible(3.0, 8), 8);
    }
}
