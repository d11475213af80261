use candle_core::{Result, Tensor, Var, D};

use super::kernels::{self, ConvCfg, PoolCfg};
use super::params::{Init, Params};

/// A layer whose behaviour may depend on training mode. Outside training,
/// parameters are read through detached handles so no graph is recorded.
pub trait Layer: Send + Sync {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor>;
}

pub fn value(v: &Var, train: bool) -> Tensor {
    if train {
        v.as_tensor().clone()
    } else {
        v.as_tensor().detach()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Relu6,
    Silu,
    HardSwish,
    Gelu,
    Sigmoid,
    HardSigmoid,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Identity => Ok(x.clone()),
            Activation::Relu => x.relu(),
            Activation::Relu6 => x.clamp(0.0, 6.0),
            Activation::Silu => x.silu(),
            Activation::HardSwish => x * ((x + 3.0)?.clamp(0.0, 6.0)? / 6.0)?,
            Activation::Gelu => x.gelu_erf(),
            Activation::Sigmoid => candle_nn::ops::sigmoid(x),
            Activation::HardSigmoid => (x + 3.0)?.clamp(0.0, 6.0)? / 6.0,
        }
    }
}

pub struct Conv2d {
    pub weight: Var,
    pub bias: Option<Var>,
    pub cfg: ConvCfg,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Odd kernel with "same" padding.
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        Self { cin, cout, kernel, stride, padding: (kernel - 1) / 2, groups: 1, bias: false }
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn bias(mut self, b: bool) -> Self {
        self.bias = b;
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = p;
        self
    }
}

impl Conv2d {
    pub fn new(p: &Params, s: ConvSpec) -> Result<Self> {
        let fan_out = s.cout * s.kernel * s.kernel / s.groups;
        Self::with_init(p, s, Init::KaimingFanOut { fan_out }, Init::Const(0.0))
    }

    pub fn with_init(p: &Params, s: ConvSpec, w_init: Init, b_init: Init) -> Result<Self> {
        let weight = p.weight("weight", (s.cout, s.cin / s.groups, s.kernel, s.kernel), w_init)?;
        let bias = if s.bias { Some(p.weight("bias", s.cout, b_init)?) } else { None };
        let cfg = ConvCfg { stride: (s.stride, s.stride), padding: (s.padding, s.padding), groups: s.groups };
        Ok(Self { weight, bias, cfg })
    }

}

impl Layer for Conv2d {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = kernels::conv2d(x, &value(&self.weight, train), self.cfg)?;
        match &self.bias {
            Some(b) => y.broadcast_add(&value(b, train).reshape((1, (), 1, 1))?),
            None => Ok(y),
        }
    }
}

pub struct BatchNorm2d {
    pub weight: Var,
    pub bias: Var,
    pub running_mean: Var,
    pub running_var: Var,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new(p: &Params, c: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            weight: p.weight("weight", c, Init::Const(1.0))?,
            bias: p.weight("bias", c, Init::Const(0.0))?,
            running_mean: p.buffer("running_mean", c, Init::Const(0.0))?,
            running_var: p.buffer("running_var", c, Init::Const(1.0))?,
            eps,
            momentum: 0.1,
        })
    }
}

impl Layer for BatchNorm2d {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        if train {
            let (y, mean, var) =
                kernels::batch_norm_train(x, self.weight.as_tensor(), self.bias.as_tensor(), self.eps)?;
            let (n, _, h, w) = x.dims4()?;
            let m = (n * h * w) as f64;
            let unbiased = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            let dev = x.device();
            let dt = self.running_mean.dtype();
            let mean = Tensor::from_vec(mean, self.running_mean.shape(), dev)?.to_dtype(dt)?;
            let var = (Tensor::from_vec(var, self.running_var.shape(), dev)?.to_dtype(dt)? * unbiased)?;
            let k = self.momentum;
            self.running_mean.set(&((self.running_mean.as_tensor() * (1.0 - k))? + (mean * k)?)?)?;
            self.running_var.set(&((self.running_var.as_tensor() * (1.0 - k))? + (var * k)?)?)?;
            Ok(y)
        } else {
            let inv = (self.running_var.as_tensor().detach() + self.eps)?.sqrt()?.recip()?;
            let scale = self.weight.as_tensor().detach().mul(&inv)?;
            let shift = (self.bias.as_tensor().detach() - self.running_mean.as_tensor().detach().mul(&scale)?)?;
            x.broadcast_mul(&scale.reshape((1, (), 1, 1))?)?.broadcast_add(&shift.reshape((1, (), 1, 1))?)
        }
    }
}

/// LayerNorm over the channel axis of an NCHW tensor.
pub struct LayerNorm2d {
    pub weight: Var,
    pub bias: Var,
    pub eps: f64,
}

impl LayerNorm2d {
    pub fn new(p: &Params, c: usize, eps: f64) -> Result<Self> {
        Ok(Self { weight: p.weight("weight", c, Init::Const(1.0))?, bias: p.weight("bias", c, Init::Const(0.0))?, eps })
    }

}

impl Layer for LayerNorm2d {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mu = x.mean_keepdim(1)?;
        let xc = x.broadcast_sub(&mu)?;
        let var = xc.sqr()?.mean_keepdim(1)?;
        let y = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        y.broadcast_mul(&value(&self.weight, train).reshape((1, (), 1, 1))?)?
            .broadcast_add(&value(&self.bias, train).reshape((1, (), 1, 1))?)
    }
}

pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new(p: &Params, cin: usize, cout: usize) -> Result<Self> {
        let b = 1.0 / (cin as f64).sqrt();
        Self::with_init(p, cin, cout, Init::Uniform(b), Init::Uniform(b))
    }

    pub fn with_init(p: &Params, cin: usize, cout: usize, w: Init, b: Init) -> Result<Self> {
        Ok(Self { weight: p.weight("weight", (cout, cin), w)?, bias: p.weight("bias", cout, b)? })
    }

}

impl Layer for Linear {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        x.matmul(&value(&self.weight, train).t()?)?.broadcast_add(&value(&self.bias, train))
    }
}

/// Convolution, batch norm, activation.
pub struct ConvBnAct {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    pub act: Activation,
}

impl ConvBnAct {
    pub fn new(p: &Params, s: ConvSpec, act: Activation, bn_eps: f64) -> Result<Self> {
        Ok(Self { conv: Conv2d::new(&p.pp("conv"), s)?, bn: BatchNorm2d::new(&p.pp("bn"), s.cout, bn_eps)?, act })
    }
}

impl Layer for ConvBnAct {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.act.apply(&self.bn.forward_t(&self.conv.forward_t(x, train)?, train)?)
    }
}

/// Channel attention: pool, reduce, expand, gate.
pub struct SqueezeExcite {
    pub fc1: Conv2d,
    pub fc2: Conv2d,
    pub act: Activation,
    pub gate: Activation,
}

impl SqueezeExcite {
    pub fn new(p: &Params, c: usize, squeeze: usize, act: Activation, gate: Activation) -> Result<Self> {
        Ok(Self {
            fc1: Conv2d::new(&p.pp("fc1"), ConvSpec::new(c, squeeze, 1, 1).bias(true))?,
            fc2: Conv2d::new(&p.pp("fc2"), ConvSpec::new(squeeze, c, 1, 1).bias(true))?,
            act,
            gate,
        })
    }

}

impl Layer for SqueezeExcite {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let s = x.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?;
        let s = self.act.apply(&self.fc1.forward_t(&s, train)?)?;
        let s = self.gate.apply(&self.fc2.forward_t(&s, train)?)?;
        x.broadcast_mul(&s)
    }
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    x.flatten_from(2)?.mean(2)
}

pub fn max_pool(x: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    kernels::max_pool2d(x, PoolCfg { kernel, stride, padding })
}
