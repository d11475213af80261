use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, Var, D};

use super::backbones::{build_trunk, Trunk};
use super::blocks::{IrCfg, InvertedResidual, SeCfg, Seq};
use super::registry::{resolve_backbone, BackboneEntry};
use super::resizer::{FixedResizer, LearnedResizer};
use super::spec::{HeadSpec, ModelSpec, ResizeMode};
use super::transfer::{transfer_weights, WeightTransferReport};
use super::{ModelError, Result};
use crate::nn::{global_avg_pool, Activation, Layer, Linear, Params};
use crate::raster::Raster;
use crate::stats::{Predictor, StatsError, TtaInput};

const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];
const PREDICT_BATCH: usize = 8;

/// Environment variable consulted when `weights_dir` is unset.
pub const WEIGHTS_DIR_ENV: &str = "MAMMOVIEW_WEIGHTS";

#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Directory holding `<backbone>-<1k|21k|22k>.safetensors` trunk weights.
    pub weights_dir: Option<PathBuf>,
    /// Fall back to random initialization when pretrained weights are absent.
    pub allow_random_init: bool,
    pub dtype: DType,
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { weights_dir: std::env::var_os(WEIGHTS_DIR_ENV).map(PathBuf::from), allow_random_init: false, dtype: DType::F32, seed: 0 }
    }
}

impl BuildOptions {
    pub fn random(seed: u64) -> Self {
        Self { weights_dir: None, allow_random_init: true, dtype: DType::F32, seed }
    }
}

/// Where a model's initial weights came from.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightsSource {
    Pretrained(PathBuf),
    RandomInit,
    Transferred,
    Archive(PathBuf),
}

pub enum SingleViewInit<'a> {
    FromPatch(&'a Model),
    FromPretrained,
}

/// Grayscale in, one branch of features out.
struct Branch {
    resizer: Option<LearnedResizer>,
    trunk: Trunk,
    top: Option<Seq>,
}

fn top_blocks(p: &Params, c: usize) -> candle_core::Result<Seq> {
    let mut layers: Vec<Box<dyn Layer>> = Vec::new();
    for i in 0..2 {
        let cfg = IrCfg {
            cin: c,
            cout: c,
            expanded: 6 * c,
            kernel: 3,
            stride: 2,
            act: Activation::Silu,
            se: Some(SeCfg { squeeze: (c / 4).max(1), act: Activation::Silu, gate: Activation::Sigmoid }),
            fused: false,
            bn_eps: 1e-3,
        };
        layers.push(Box::new(InvertedResidual::new(&p.pp(i), cfg)?));
    }
    Ok(Seq(layers))
}

fn adapt(x: &Tensor) -> candle_core::Result<Tensor> {
    let dev = x.device();
    let mean = Tensor::new(&IMAGENET_MEAN, dev)?.to_dtype(x.dtype())?.reshape((1, 3, 1, 1))?;
    let std = Tensor::new(&IMAGENET_STD, dev)?.to_dtype(x.dtype())?.reshape((1, 3, 1, 1))?;
    x.repeat((1, 3, 1, 1))?.broadcast_sub(&mean)?.broadcast_div(&std)
}

impl Branch {
    fn new(p: &Params, entry: &BackboneEntry, spec: &ModelSpec, with_top: bool) -> candle_core::Result<Self> {
        let resizer = match spec.resize_mode {
            ResizeMode::Learned { height, width } => Some(LearnedResizer::new(&p.pp("resizer"), (height, width))?),
            _ => None,
        };
        let trunk = build_trunk(entry.arch, &p.pp("trunk"))?;
        let top = if with_top { Some(top_blocks(&p.pp("top"), trunk.out_channels())?) } else { None };
        Ok(Self { resizer, trunk, top })
    }

    fn forward(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let x = match &self.resizer {
            Some(r) => r.forward_t(x, train)?,
            None => x.clone(),
        };
        let y = self.trunk.forward_t(&adapt(&x)?, train)?;
        match &self.top {
            Some(t) => t.forward_t(&y, train),
            None => Ok(y),
        }
    }
}

enum Net {
    Patch { branch: Branch, fc: Linear },
    Single { branch: Branch, fc: Linear },
    TwoView { cc: Branch, mlo: Branch, joint: InvertedResidual, fc: Linear },
}

/// Batched network input: `(N, 1, H, W)` grayscale tensors in [0, 1].
pub enum ModelInput {
    Single(Tensor),
    Pair(Tensor, Tensor),
}

pub struct Model {
    spec: ModelSpec,
    params: Params,
    net: Net,
    fixed: Option<FixedResizer>,
    pub weights_source: WeightsSource,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model").field("spec", &self.spec).field("weights_source", &self.weights_source).finish()
    }
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.params.trainable()
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    pub fn n_classes(&self) -> usize {
        match self.spec.head {
            HeadSpec::PatchHead { n_classes } => n_classes,
            _ => 1,
        }
    }

    /// Raw logits: `(N, K)` for patch heads, `(N,)` otherwise.
    pub fn forward(&self, input: &ModelInput, train: bool) -> Result<Tensor> {
        let out = match (&self.net, input) {
            (Net::Patch { branch, fc }, ModelInput::Single(x)) => {
                fc.forward_t(&global_avg_pool(&branch.forward(x, train)?)?, train)?
            }
            (Net::Single { branch, fc }, ModelInput::Single(x)) => {
                fc.forward_t(&global_avg_pool(&branch.forward(x, train)?)?, train)?.squeeze(1)?
            }
            (Net::TwoView { cc, mlo, joint, fc }, ModelInput::Pair(a, b)) => {
                let fa = cc.forward(a, train)?;
                let fb = mlo.forward(b, train)?;
                let j = joint.forward_t(&Tensor::cat(&[fa, fb], 1)?, train)?;
                fc.forward_t(&global_avg_pool(&j)?, train)?.squeeze(1)?
            }
            _ => return Err(ModelError::InvalidSpec("input arity does not match the model head".into())),
        };
        Ok(out)
    }

    /// Softmax probabilities for patch heads, sigmoid of the logit otherwise.
    pub fn probabilities(&self, input: &ModelInput) -> Result<Tensor> {
        let logits = self.forward(input, false)?.detach();
        Ok(match self.spec.head {
            HeadSpec::PatchHead { .. } => candle_nn::ops::softmax(&logits, D::Minus1)?,
            _ => candle_nn::ops::sigmoid(&logits)?,
        })
    }

    /// Applies the fixed resizer if configured. Any other input size is
    /// passed through, the networks being fully convolutional.
    pub fn prepare(&self, r: &Raster) -> Result<Raster> {
        match &self.fixed {
            Some(f) => f.apply(r),
            None => Ok(r.clone()),
        }
    }

    pub fn batch(&self, rasters: &[&Raster]) -> Result<Tensor> {
        raster_batch(rasters, self.dtype(), self.device())
    }

    fn probs_vec(&self, input: &ModelInput) -> Result<Vec<f64>> {
        Ok(self.probabilities(input)?.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
    }

    /// Positive-class probability for each image of a single-view model.
    pub fn predict_images(&self, images: &[Raster]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(PREDICT_BATCH) {
            let prepared = chunk.iter().map(|r| self.prepare(r)).collect::<Result<Vec<_>>>()?;
            let x = self.batch(&prepared.iter().collect::<Vec<_>>())?;
            out.extend(self.probs_vec(&ModelInput::Single(x))?);
        }
        Ok(out)
    }

    /// Positive-class probability for each (CC, MLO) pair of a two-view model.
    pub fn predict_pairs(&self, pairs: &[(Raster, Raster)]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(PREDICT_BATCH) {
            let cc = chunk.iter().map(|(a, _)| self.prepare(a)).collect::<Result<Vec<_>>>()?;
            let mlo = chunk.iter().map(|(_, b)| self.prepare(b)).collect::<Result<Vec<_>>>()?;
            let a = self.batch(&cc.iter().collect::<Vec<_>>())?;
            let b = self.batch(&mlo.iter().collect::<Vec<_>>())?;
            out.extend(self.probs_vec(&ModelInput::Pair(a, b))?);
        }
        Ok(out)
    }

    /// Class probabilities for each patch, rows in class-index order.
    pub fn predict_patches(&self, patches: &[Raster]) -> Result<Vec<Vec<f64>>> {
        let k = self.n_classes();
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(PREDICT_BATCH) {
            let prepared = chunk.iter().map(|r| self.prepare(r)).collect::<Result<Vec<_>>>()?;
            let x = self.batch(&prepared.iter().collect::<Vec<_>>())?;
            let flat = self.probs_vec(&ModelInput::Single(x))?;
            out.extend(flat.chunks(k).map(|c| c.to_vec()));
        }
        Ok(out)
    }
}

impl Predictor for Model {
    fn predict(&self, input: &TtaInput) -> std::result::Result<f64, StatsError> {
        Ok(self.predict_many(std::slice::from_ref(input))?[0])
    }

    fn predict_many(&self, inputs: &[TtaInput]) -> std::result::Result<Vec<f64>, StatsError> {
        let err = |e: ModelError| StatsError::Prediction(e.to_string());
        match self.spec.head {
            HeadSpec::WholeImageHead => {
                let imgs = inputs
                    .iter()
                    .map(|i| match i {
                        TtaInput::Single(r) => Ok(r.clone()),
                        TtaInput::Pair(..) => Err(StatsError::InvalidInput("single-view model given a pair".into())),
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                self.predict_images(&imgs).map_err(err)
            }
            HeadSpec::TwoViewHead => {
                let pairs = inputs
                    .iter()
                    .map(|i| match i {
                        TtaInput::Pair(a, b) => Ok((a.clone(), b.clone())),
                        TtaInput::Single(_) => Err(StatsError::InvalidInput("two-view model given one image".into())),
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                self.predict_pairs(&pairs).map_err(err)
            }
            HeadSpec::PatchHead { .. } => Err(StatsError::InvalidInput("patch classifiers have no binary output".into())),
        }
    }
}

/// Stacks rasters of equal size into an `(N, 1, H, W)` tensor.
pub fn raster_batch(rasters: &[&Raster], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = rasters.first().ok_or_else(|| ModelError::InvalidSpec("empty batch".into()))?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(rasters.len() * h * w);
    for r in rasters {
        if r.dims() != (h, w) {
            return Err(ModelError::InvalidSpec(format!("batch mixes {:?} and {:?}", (h, w), r.dims())));
        }
        data.extend_from_slice(r.data());
    }
    Ok(Tensor::from_vec(data, (rasters.len(), 1, h, w), device)?.to_dtype(dtype)?)
}

fn check_tag(spec: &ModelSpec) -> Result<&'static BackboneEntry> {
    let (entry, alias_tag) = resolve_backbone(&spec.backbone)?;
    let tag = alias_tag.unwrap_or(spec.pretrain_tag);
    if !entry.tags.contains(&tag) || (alias_tag.is_some() && alias_tag != Some(spec.pretrain_tag)) {
        return Err(ModelError::UnknownTag { backbone: entry.name.into(), tag: spec.pretrain_tag });
    }
    Ok(entry)
}

/// Builds the network for `spec` with fresh deterministic initialization.
fn construct(spec: &ModelSpec, opts: &BuildOptions) -> Result<Model> {
    spec.validate()?;
    let entry = check_tag(spec)?;
    let params = Params::new(opts.dtype, Device::Cpu, opts.seed);
    let head = params.pp("head").pp("fc");
    let net = match spec.head {
        HeadSpec::PatchHead { n_classes } => {
            let branch = Branch::new(&params, entry, spec, false)?;
            let fc = Linear::new(&head, branch.trunk.out_channels(), n_classes)?;
            Net::Patch { branch, fc }
        }
        HeadSpec::WholeImageHead => {
            let branch = Branch::new(&params, entry, spec, true)?;
            let fc = Linear::new(&head, branch.trunk.out_channels(), 1)?;
            Net::Single { branch, fc }
        }
        HeadSpec::TwoViewHead => {
            let cc = Branch::new(&params.pp("cc"), entry, spec, true)?;
            let mlo = Branch::new(&params.pp("mlo"), entry, spec, true)?;
            let c2 = 2 * cc.trunk.out_channels();
            let cfg = IrCfg {
                cin: c2,
                cout: c2,
                expanded: 6 * c2,
                kernel: 3,
                stride: 1,
                act: Activation::Silu,
                se: Some(SeCfg { squeeze: (c2 / 4).max(1), act: Activation::Silu, gate: Activation::Sigmoid }),
                fused: false,
                bn_eps: 1e-3,
            };
            let joint = InvertedResidual::new(&params.pp("joint"), cfg)?;
            let fc = Linear::new(&head, c2, 1)?;
            Net::TwoView { cc, mlo, joint, fc }
        }
    };
    let fixed = match spec.resize_mode {
        ResizeMode::Fixed { height, width } => Some(FixedResizer { target: (height, width) }),
        _ => None,
    };
    Ok(Model { spec: spec.clone(), params, net, fixed, weights_source: WeightsSource::RandomInit })
}

pub fn weights_path(dir: &Path, spec: &ModelSpec) -> Result<PathBuf> {
    let (entry, _) = resolve_backbone(&spec.backbone)?;
    Ok(dir.join(format!("{}-{}.safetensors", entry.name, spec.pretrain_tag.short())))
}

/// Loads `trunk.*` tensors from the registry weight file into every branch.
fn load_pretrained(model: &mut Model, opts: &BuildOptions) -> Result<()> {
    let path = match &opts.weights_dir {
        Some(d) => weights_path(d, &model.spec)?,
        None => PathBuf::from(format!("<unset {WEIGHTS_DIR_ENV}>")),
    };
    if !path.is_file() {
        if opts.allow_random_init {
            log::warn!("no pretrained weights at {}, using random initialization", path.display());
            model.weights_source = WeightsSource::RandomInit;
            return Ok(());
        }
        return Err(ModelError::WeightsUnavailable {
            backbone: model.spec.backbone.clone(),
            tag: model.spec.pretrain_tag,
            path: path.display().to_string(),
        });
    }
    let file = candle_core::safetensors::load(&path, &Device::Cpu)?;
    let prefixes: &[&str] = match model.spec.head {
        HeadSpec::TwoViewHead => &["cc.", "mlo."],
        _ => &[""],
    };
    for pre in prefixes {
        let renamed: HashMap<String, Tensor> = file
            .iter()
            .filter(|(k, _)| k.starts_with("trunk."))
            .map(|(k, v)| (format!("{pre}{k}"), v.clone()))
            .collect();
        let trunk = model.params.pp(format!("{pre}trunk"));
        let missing = trunk.load(&renamed).map_err(|e| ModelError::Archive {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        if !missing.is_empty() {
            return Err(ModelError::Archive {
                path: path.display().to_string(),
                reason: format!("{} trunk tensors missing, first {}", missing.len(), missing[0]),
            });
        }
    }
    model.weights_source = WeightsSource::Pretrained(path);
    Ok(())
}

/// Trunk of `spec.backbone` with fresh weights, outside of any head.
pub fn build_backbone(name: &str, seed: u64) -> Result<(Trunk, Params)> {
    let (entry, _) = resolve_backbone(name)?;
    let p = Params::new(DType::F32, Device::Cpu, seed);
    let t = build_trunk(entry.arch, &p.pp("trunk"))?;
    Ok((t, p))
}

/// Builds any model family with pretrained trunk weights (or random
/// initialization when allowed).
pub fn build_model(spec: &ModelSpec, opts: &BuildOptions) -> Result<Model> {
    let mut m = construct(spec, opts)?;
    load_pretrained(&mut m, opts)?;
    Ok(m)
}

pub fn build_patch_classifier(spec: &ModelSpec, opts: &BuildOptions) -> Result<Model> {
    if !matches!(spec.head, HeadSpec::PatchHead { .. }) {
        return Err(ModelError::InvalidSpec("patch classifier needs a PATCH_HEAD".into()));
    }
    build_model(spec, opts)
}

pub fn build_single_view(
    spec: &ModelSpec,
    init: SingleViewInit<'_>,
    opts: &BuildOptions,
) -> Result<(Model, Option<WeightTransferReport>)> {
    if spec.head != HeadSpec::WholeImageHead {
        return Err(ModelError::InvalidSpec("single-view model needs a WHOLE_IMAGE_HEAD".into()));
    }
    match init {
        SingleViewInit::FromPretrained => Ok((build_model(spec, opts)?, None)),
        SingleViewInit::FromPatch(src) => {
            same_backbone(src, spec)?;
            let mut m = construct(spec, opts)?;
            let report = transfer_weights(src, &m)?;
            m.weights_source = WeightsSource::Transferred;
            Ok((m, Some(report)))
        }
    }
}

/// Two-view model; both branches start from `single` when given.
pub fn build_two_view(
    spec: &ModelSpec,
    single: Option<&Model>,
    opts: &BuildOptions,
) -> Result<(Model, Option<WeightTransferReport>)> {
    if spec.head != HeadSpec::TwoViewHead {
        return Err(ModelError::InvalidSpec("two-view model needs a TWO_VIEW_HEAD".into()));
    }
    match single {
        None => Ok((build_model(spec, opts)?, None)),
        Some(src) => {
            same_backbone(src, spec)?;
            let mut m = construct(spec, opts)?;
            let report = transfer_weights(src, &m)?;
            m.weights_source = WeightsSource::Transferred;
            Ok((m, Some(report)))
        }
    }
}

fn same_backbone(src: &Model, spec: &ModelSpec) -> Result<()> {
    let (a, _) = resolve_backbone(&src.spec.backbone)?;
    let (b, _) = resolve_backbone(&spec.backbone)?;
    if a.name != b.name {
        return Err(ModelError::InvalidSpec(format!("cannot initialize a {} model from {}", b.name, a.name)));
    }
    Ok(())
}

/// Rebuilds a model and overwrites all of its tensors, as used by archives.
pub(crate) fn restore(spec: &ModelSpec, tensors: &HashMap<String, Tensor>, seed: u64, path: &Path) -> Result<Model> {
    let mut m = construct(spec, &BuildOptions::random(seed))?;
    let missing = m.params.load(tensors).map_err(|e| ModelError::Archive {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    if !missing.is_empty() {
        return Err(ModelError::Archive {
            path: path.display().to_string(),
            reason: format!("{} tensors missing, first {}", missing.len(), missing[0]),
        });
    }
    m.weights_source = WeightsSource::Archive(path.to_path_buf());
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(spec: ModelSpec) -> Model {
        build_model(&spec, &BuildOptions::random(1)).unwrap()
    }

    #[test]
    fn output_shapes() {
        let p = tiny(ModelSpec::patch("tiny-mbconv", 5));
        let x = Tensor::rand(0f32, 1.0, (2, 1, 64, 64), &Device::Cpu).unwrap();
        let probs = p.probabilities(&ModelInput::Single(x.clone())).unwrap();
        assert_eq!(probs.dims(), &[2, 5]);
        let rows = probs.sum(1).unwrap().to_vec1::<f32>().unwrap();
        assert!(rows.iter().all(|s| (s - 1.0).abs() < 1e-5));

        let s = tiny(ModelSpec::whole_image("tiny-mbconv", (128, 96)));
        let x = Tensor::rand(0f32, 1.0, (3, 1, 128, 96), &Device::Cpu).unwrap();
        assert_eq!(s.forward(&ModelInput::Single(x.clone()), false).unwrap().dims(), &[3]);
        assert!(s.forward(&ModelInput::Pair(x.clone(), x.clone()), false).is_err());

        let t = tiny(ModelSpec::two_view("tiny-mbconv", (128, 96)));
        assert_eq!(t.forward(&ModelInput::Pair(x.clone(), x), false).unwrap().dims(), &[3]);
    }

    #[test]
    fn missing_weights_error() {
        let spec = ModelSpec::patch("tiny-mbconv", 4);
        let opts = BuildOptions { weights_dir: Some("/nonexistent".into()), allow_random_init: false, ..BuildOptions::random(0) };
        assert!(matches!(build_model(&spec, &opts), Err(ModelError::WeightsUnavailable { .. })));
    }

    #[test]
    fn alias_tag_must_agree() {
        let spec = ModelSpec::patch("convnext-base-22k", 5);
        assert!(matches!(build_model(&spec, &BuildOptions::random(0)), Err(ModelError::UnknownTag { .. })));
        let spec = ModelSpec::patch("resnet-50", 5).with_tag(super::super::PretrainTag::Imagenet21k);
        assert!(matches!(build_model(&spec, &BuildOptions::random(0)), Err(ModelError::UnknownTag { .. })));
    }

    #[test]
    fn pretrained_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let (_, p) = build_backbone("tiny-mbconv", 77).unwrap();
        let map: HashMap<String, Tensor> = p.tensors().into_iter().collect();
        candle_core::safetensors::save(&map, dir.path().join("tiny-mbconv-1k.safetensors")).unwrap();
        let opts = BuildOptions { weights_dir: Some(dir.path().into()), allow_random_init: false, ..BuildOptions::random(5) };
        let spec = ModelSpec::two_view("tiny-mbconv", (64, 64));
        let m = build_model(&spec, &opts).unwrap();
        assert!(matches!(m.weights_source, WeightsSource::Pretrained(_)));
        let name = p.entries().keys().next().unwrap().clone();
        let want = p.get(&name).unwrap().var.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for pre in ["cc.", "mlo."] {
            let got = m.params().get(&format!("{pre}{name}")).unwrap().var.as_tensor().flatten_all().unwrap();
            assert_eq!(got.to_vec1::<f32>().unwrap(), want);
        }
    }

    #[test]
    fn fixed_resizer_prepare() {
        let spec = ModelSpec::whole_image("tiny-mbconv", (128, 96)).with_resize(ResizeMode::Fixed { height: 64, width: 48 });
        let m = tiny(spec);
        let r = m.prepare(&Raster::filled(128, 96, 0.3)).unwrap();
        assert_eq!(r.dims(), (64, 48));
        assert_eq!(m.predict_images(&[Raster::filled(128, 96, 0.3)]).unwrap().len(), 1);
    }
}
