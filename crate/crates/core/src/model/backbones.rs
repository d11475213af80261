//! Convolutional trunks (classification heads removed), all with overall
//! stride 32.

use candle_core::{Result, Tensor};

use super::blocks::*;
use crate::nn::{max_pool, Activation, BatchNorm2d, ConvBnAct, ConvSpec, Layer, LayerNorm2d, Params};

pub struct Trunk {
    body: Seq,
    out_channels: usize,
    relu_out: bool,
}

impl Trunk {
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }
}

impl Layer for Trunk {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.body.forward_t(x, train)?;
        if self.relu_out {
            y.relu()
        } else {
            Ok(y)
        }
    }
}

/// Stage row for MBConv-style networks:
/// (fused, expansion, kernel, stride, out_channels, repeats, se_ratio).
type MbStage = (bool, f64, usize, usize, usize, usize, Option<f64>);

struct MbNet {
    stem: usize,
    stages: Vec<MbStage>,
    head: usize,
    act: Activation,
    bn_eps: f64,
    width: f64,
    depth: f64,
}

fn efficientnet(width: f64, depth: f64) -> MbNet {
    let se = Some(0.25);
    MbNet {
        stem: 32,
        stages: vec![
            (false, 1.0, 3, 1, 16, 1, se),
            (false, 6.0, 3, 2, 24, 2, se),
            (false, 6.0, 5, 2, 40, 2, se),
            (false, 6.0, 3, 2, 80, 3, se),
            (false, 6.0, 5, 1, 112, 3, se),
            (false, 6.0, 5, 2, 192, 4, se),
            (false, 6.0, 3, 1, 320, 1, se),
        ],
        head: 0,
        act: Activation::Silu,
        bn_eps: 1e-5,
        width,
        depth,
    }
}

fn efficientnet_v2(medium: bool) -> MbNet {
    let se = Some(0.25);
    let stages = if medium {
        vec![
            (true, 1.0, 3, 1, 24, 3, None),
            (true, 4.0, 3, 2, 48, 5, None),
            (true, 4.0, 3, 2, 80, 5, None),
            (false, 4.0, 3, 2, 160, 7, se),
            (false, 6.0, 3, 1, 176, 14, se),
            (false, 6.0, 3, 2, 304, 18, se),
            (false, 6.0, 3, 1, 512, 5, se),
        ]
    } else {
        vec![
            (true, 1.0, 3, 1, 24, 2, None),
            (true, 4.0, 3, 2, 48, 4, None),
            (true, 4.0, 3, 2, 64, 4, None),
            (false, 4.0, 3, 2, 128, 6, se),
            (false, 6.0, 3, 1, 160, 9, se),
            (false, 6.0, 3, 2, 256, 15, se),
        ]
    };
    MbNet { stem: 24, stages, head: 1280, act: Activation::Silu, bn_eps: 1e-3, width: 1.0, depth: 1.0 }
}

fn mobilenet_v2() -> MbNet {
    MbNet {
        stem: 32,
        stages: vec![
            (false, 1.0, 3, 1, 16, 1, None),
            (false, 6.0, 3, 2, 24, 2, None),
            (false, 6.0, 3, 2, 32, 3, None),
            (false, 6.0, 3, 2, 64, 4, None),
            (false, 6.0, 3, 1, 96, 3, None),
            (false, 6.0, 3, 2, 160, 3, None),
            (false, 6.0, 3, 1, 320, 1, None),
        ],
        head: 1280,
        act: Activation::Relu6,
        bn_eps: 1e-5,
        width: 1.0,
        depth: 1.0,
    }
}

fn mnasnet() -> MbNet {
    MbNet {
        stem: 32,
        stages: vec![
            // depthwise-separable stem stage
            (false, 1.0, 3, 1, 16, 1, None),
            (false, 3.0, 3, 2, 24, 3, None),
            (false, 3.0, 5, 2, 40, 3, None),
            (false, 6.0, 5, 2, 80, 3, None),
            (false, 6.0, 3, 1, 96, 2, None),
            (false, 6.0, 5, 2, 192, 4, None),
            (false, 6.0, 3, 1, 320, 1, None),
        ],
        head: 1280,
        act: Activation::Relu,
        bn_eps: 1e-5,
        width: 1.0,
        depth: 1.0,
    }
}

/// Small trunk for tests and desk-scale runs.
fn tiny() -> MbNet {
    let se = Some(0.25);
    MbNet {
        stem: 16,
        stages: vec![
            (false, 1.0, 3, 2, 16, 1, se),
            (false, 4.0, 3, 2, 24, 1, se),
            (false, 4.0, 5, 2, 32, 1, se),
            (false, 4.0, 3, 2, 48, 1, se),
        ],
        head: 96,
        act: Activation::Silu,
        bn_eps: 1e-5,
        width: 1.0,
        depth: 1.0,
    }
}

fn build_mb(p: &Params, net: &MbNet) -> Result<Trunk> {
    let ch = |c: usize| make_divisible(c as f64 * net.width, 8);
    let stem = ch(net.stem);
    let mut layers: Vec<Box<dyn Layer>> =
        vec![Box::new(ConvBnAct::new(&p.pp("stem"), ConvSpec::new(3, stem, 3, 2), net.act, net.bn_eps)?)];
    let mut cin = stem;
    let mut idx = 0;
    for &(fused, e, k, s, out, n, se) in &net.stages {
        let cout = ch(out);
        let repeats = (n as f64 * net.depth).ceil() as usize;
        for r in 0..repeats {
            let stride = if r == 0 { s } else { 1 };
            let expanded = if e == 1.0 { cin } else { make_divisible(cin as f64 * e, 8) };
            let cfg = IrCfg {
                cin,
                cout,
                expanded,
                kernel: k,
                stride,
                act: net.act,
                se: se.map(|ratio| SeCfg {
                    squeeze: ((cin as f64 * ratio) as usize).max(1),
                    act: Activation::Silu,
                    gate: Activation::Sigmoid,
                }),
                fused,
                bn_eps: net.bn_eps,
            };
            layers.push(Box::new(InvertedResidual::new(&p.pp(format!("blocks.{idx}")), cfg)?));
            idx += 1;
            cin = cout;
        }
    }
    let head = if net.head == 0 { 4 * cin } else { net.head };
    layers.push(Box::new(ConvBnAct::new(&p.pp("head"), ConvSpec::new(cin, head, 1, 1), net.act, net.bn_eps)?));
    Ok(Trunk { body: Seq(layers), out_channels: head, relu_out: false })
}

fn mobilenet_v3_large(p: &Params) -> Result<Trunk> {
    use Activation::{HardSwish as HS, Relu as RE};
    // (kernel, expanded, out, se, act, stride)
    let rows = [
        (3, 16, 16, false, RE, 1),
        (3, 64, 24, false, RE, 2),
        (3, 72, 24, false, RE, 1),
        (5, 72, 40, true, RE, 2),
        (5, 120, 40, true, RE, 1),
        (5, 120, 40, true, RE, 1),
        (3, 240, 80, false, HS, 2),
        (3, 200, 80, false, HS, 1),
        (3, 184, 80, false, HS, 1),
        (3, 184, 80, false, HS, 1),
        (3, 480, 112, true, HS, 1),
        (3, 672, 112, true, HS, 1),
        (5, 672, 160, true, HS, 2),
        (5, 960, 160, true, HS, 1),
        (5, 960, 160, true, HS, 1),
    ];
    let eps = 1e-3;
    let mut layers: Vec<Box<dyn Layer>> =
        vec![Box::new(ConvBnAct::new(&p.pp("stem"), ConvSpec::new(3, 16, 3, 2), HS, eps)?)];
    let mut cin = 16;
    for (i, &(k, e, out, se, act, s)) in rows.iter().enumerate() {
        let cfg = IrCfg {
            cin,
            cout: out,
            expanded: e,
            kernel: k,
            stride: s,
            act,
            se: se.then(|| SeCfg { squeeze: make_divisible(e as f64 / 4.0, 8), act: RE, gate: Activation::HardSigmoid }),
            fused: false,
            bn_eps: eps,
        };
        layers.push(Box::new(InvertedResidual::new(&p.pp(format!("blocks.{i}")), cfg)?));
        cin = out;
    }
    layers.push(Box::new(ConvBnAct::new(&p.pp("head"), ConvSpec::new(cin, 960, 1, 1), HS, eps)?));
    Ok(Trunk { body: Seq(layers), out_channels: 960, relu_out: false })
}

struct StemPool(ConvBnAct);

impl Layer for StemPool {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        max_pool(&self.0.forward_t(x, train)?, 3, 2, 1)
    }
}

fn stem_7x7(p: &Params, cout: usize) -> Result<StemPool> {
    Ok(StemPool(ConvBnAct::new(&p.pp("stem"), ConvSpec::new(3, cout, 7, 2), Activation::Relu, 1e-5)?))
}

/// `bottleneck`: None for basic blocks, else (groups, width_per_group).
fn resnet(p: &Params, layers: [usize; 4], bottleneck: Option<(usize, usize)>) -> Result<Trunk> {
    let mut seq: Vec<Box<dyn Layer>> = vec![Box::new(stem_7x7(p, 64)?)];
    let mut cin = 64;
    for (stage, &n) in layers.iter().enumerate() {
        let planes = 64 << stage;
        for b in 0..n {
            let stride = if b == 0 && stage > 0 { 2 } else { 1 };
            let bn = bottleneck.map(|(g, wpg)| (planes * wpg / 64 * g, g));
            let name = format!("layer{}.{b}", stage + 1);
            seq.push(Box::new(ResNetBlock::new(&p.pp(name), cin, planes, stride, bn)?));
            cin = if bottleneck.is_some() { planes * 4 } else { planes };
        }
    }
    Ok(Trunk { body: Seq(seq), out_channels: cin, relu_out: false })
}

fn densenet(p: &Params, blocks: [usize; 4]) -> Result<Trunk> {
    let (growth, bn_size) = (32, 4);
    let mut seq: Vec<Box<dyn Layer>> = vec![Box::new(stem_7x7(p, 64)?)];
    let mut c = 64;
    for (i, &n) in blocks.iter().enumerate() {
        for j in 0..n {
            seq.push(Box::new(DenseLayer::new(&p.pp(format!("block{}.layer{j}", i + 1)), c, growth, bn_size)?));
            c += growth;
        }
        if i + 1 < blocks.len() {
            seq.push(Box::new(Transition::new(&p.pp(format!("transition{}", i + 1)), c, c / 2)?));
            c /= 2;
        }
    }
    seq.push(Box::new(BatchNorm2d::new(&p.pp("norm5"), c, 1e-5)?));
    Ok(Trunk { body: Seq(seq), out_channels: c, relu_out: true })
}

fn convnext(p: &Params, depths: [usize; 4], dims: [usize; 4]) -> Result<Trunk> {
    let mut seq: Vec<Box<dyn Layer>> = vec![Box::new(NormConv::new(&p.pp("stem"), 3, dims[0], 4, false)?)];
    for s in 0..4 {
        if s > 0 {
            seq.push(Box::new(NormConv::new(&p.pp(format!("stages.{s}.down")), dims[s - 1], dims[s], 2, true)?));
        }
        for b in 0..depths[s] {
            seq.push(Box::new(ConvNextBlock::new(&p.pp(format!("stages.{s}.blocks.{b}")), dims[s])?));
        }
    }
    seq.push(Box::new(LayerNorm2d::new(&p.pp("norm"), dims[3], 1e-6)?));
    Ok(Trunk { body: Seq(seq), out_channels: dims[3], relu_out: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Tiny,
    EfficientNet(u8),
    EfficientNetV2S,
    EfficientNetV2M,
    MobileNetV2,
    MobileNetV3Large,
    MnasNet,
    ResNet18,
    ResNet50,
    ResNet101,
    ResNeXt50,
    DenseNet121,
    DenseNet169,
    DenseNet201,
    ConvNextTiny,
    ConvNextSmall,
    ConvNextBase,
}

pub fn build_trunk(arch: Arch, p: &Params) -> Result<Trunk> {
    match arch {
        Arch::Tiny => build_mb(p, &tiny()),
        Arch::EfficientNet(v) => {
            let (w, d) = match v {
                0 => (1.0, 1.0),
                1 => (1.0, 1.1),
                2 => (1.1, 1.2),
                3 => (1.2, 1.4),
                4 => (1.4, 1.8),
                _ => candle_core::bail!("efficientnet-b{v} is not available"),
            };
            build_mb(p, &efficientnet(w, d))
        }
        Arch::EfficientNetV2S => build_mb(p, &efficientnet_v2(false)),
        Arch::EfficientNetV2M => build_mb(p, &efficientnet_v2(true)),
        Arch::MobileNetV2 => build_mb(p, &mobilenet_v2()),
        Arch::MobileNetV3Large => mobilenet_v3_large(p),
        Arch::MnasNet => build_mb(p, &mnasnet()),
        Arch::ResNet18 => resnet(p, [2, 2, 2, 2], None),
        Arch::ResNet50 => resnet(p, [3, 4, 6, 3], Some((1, 64))),
        Arch::ResNet101 => resnet(p, [3, 4, 23, 3], Some((1, 64))),
        Arch::ResNeXt50 => resnet(p, [3, 4, 6, 3], Some((32, 4))),
        Arch::DenseNet121 => densenet(p, [6, 12, 24, 16]),
        Arch::DenseNet169 => densenet(p, [6, 12, 32, 32]),
        Arch::DenseNet201 => densenet(p, [6, 12, 48, 32]),
        Arch::ConvNextTiny => convnext(p, [3, 3, 9, 3], [96, 192, 384, 768]),
        Arch::ConvNextSmall => convnext(p, [3, 3, 27, 3], [96, 192, 384, 768]),
        Arch::ConvNextBase => convnext(p, [3, 3, 27, 3], [128, 256, 512, 1024]),
    }
}
