use serde::Serialize;

use super::backbones::Arch;
use super::spec::PretrainTag;
use super::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Tier {
    Mandatory,
    Optional,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BackboneEntry {
    pub name: &'static str,
    #[serde(skip)]
    pub arch: Arch,
    pub tier: Tier,
    pub tags: &'static [PretrainTag],
    pub out_channels: usize,
}

const K1: &[PretrainTag] = &[PretrainTag::Imagenet1k];
const K1_21: &[PretrainTag] = &[PretrainTag::Imagenet1k, PretrainTag::Imagenet21k];
const K1_22: &[PretrainTag] = &[PretrainTag::Imagenet1k, PretrainTag::Imagenet22k];

macro_rules! entry {
    ($name:literal, $arch:expr, $tier:ident, $tags:expr, $c:literal) => {
        BackboneEntry { name: $name, arch: $arch, tier: Tier::$tier, tags: $tags, out_channels: $c }
    };
}

static REGISTRY: &[BackboneEntry] = &[
    entry!("mobilenet-v2", Arch::MobileNetV2, Mandatory, K1, 1280),
    entry!("resnet-50", Arch::ResNet50, Mandatory, K1, 2048),
    entry!("densenet-169", Arch::DenseNet169, Mandatory, K1, 1664),
    entry!("efficientnetv2-s", Arch::EfficientNetV2S, Mandatory, K1_21, 1280),
    entry!("efficientnet-b3", Arch::EfficientNet(3), Mandatory, K1, 1536),
    entry!("efficientnet-b0", Arch::EfficientNet(0), Mandatory, K1, 1280),
    entry!("convnext-base", Arch::ConvNextBase, Mandatory, K1_22, 1024),
    entry!("mnasnet-1.0", Arch::MnasNet, Optional, K1, 1280),
    entry!("mobilenet-v3-large", Arch::MobileNetV3Large, Optional, K1, 960),
    entry!("efficientnet-b1", Arch::EfficientNet(1), Optional, K1, 1280),
    entry!("efficientnet-b2", Arch::EfficientNet(2), Optional, K1, 1408),
    entry!("efficientnet-b4", Arch::EfficientNet(4), Optional, K1, 1792),
    entry!("efficientnetv2-m", Arch::EfficientNetV2M, Optional, K1, 1280),
    entry!("densenet-121", Arch::DenseNet121, Optional, K1, 1024),
    entry!("densenet-201", Arch::DenseNet201, Optional, K1, 1920),
    entry!("resnet-18", Arch::ResNet18, Optional, K1, 512),
    entry!("resnet-101", Arch::ResNet101, Optional, K1, 2048),
    entry!("resnext-50-32x4d", Arch::ResNeXt50, Optional, K1, 2048),
    entry!("convnext-tiny", Arch::ConvNextTiny, Optional, K1, 768),
    entry!("convnext-small", Arch::ConvNextSmall, Optional, K1, 768),
    entry!("tiny-mbconv", Arch::Tiny, Optional, K1, 96),
];

pub fn registry() -> &'static [BackboneEntry] {
    REGISTRY
}

/// Looks up `name`, accepting a `-21k` / `-22k` suffix that selects the
/// pretraining tag (e.g. `convnext-base-22k`).
pub fn resolve_backbone(name: &str) -> Result<(&'static BackboneEntry, Option<PretrainTag>)> {
    let lower = name.trim().to_ascii_lowercase();
    let (base, tag) = match lower.rsplit_once('-') {
        Some((b, "21k")) => (b, Some(PretrainTag::Imagenet21k)),
        Some((b, "22k")) => (b, Some(PretrainTag::Imagenet22k)),
        Some((b, "1k")) => (b, Some(PretrainTag::Imagenet1k)),
        _ => (lower.as_str(), None),
    };
    let entry = REGISTRY.iter().find(|e| e.name == base).ok_or_else(|| ModelError::UnknownBackbone(name.into()))?;
    if let Some(t) = tag {
        if !entry.tags.contains(&t) {
            return Err(ModelError::UnknownTag { backbone: entry.name.into(), tag: t });
        }
    }
    Ok((entry, tag))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup() {
        let (e, t) = resolve_backbone("convnext-base-22k").unwrap();
        assert_eq!((e.name, t), ("convnext-base", Some(PretrainTag::Imagenet22k)));
        assert!(matches!(resolve_backbone("vit-base"), Err(ModelError::UnknownBackbone(_))));
        assert!(matches!(resolve_backbone("resnet-50-22k"), Err(ModelError::UnknownTag { .. })));
        let mandatory = registry().iter().filter(|e| e.tier == Tier::Mandatory).count();
        assert_eq!(mandatory, 7);
    }
}
