use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PretrainTag {
    #[serde(rename = "IMAGENET1K")]
    Imagenet1k,
    #[serde(rename = "IMAGENET21K")]
    Imagenet21k,
    #[serde(rename = "IMAGENET22K")]
    Imagenet22k,
}

impl PretrainTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PretrainTag::Imagenet1k => "IMAGENET1K",
            PretrainTag::Imagenet21k => "IMAGENET21K",
            PretrainTag::Imagenet22k => "IMAGENET22K",
        }
    }

    /// Short suffix used in weight file names: `1k`, `21k`, `22k`.
    pub fn short(self) -> &'static str {
        match self {
            PretrainTag::Imagenet1k => "1k",
            PretrainTag::Imagenet21k => "21k",
            PretrainTag::Imagenet22k => "22k",
        }
    }
}

impl fmt::Display for PretrainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PretrainTag {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "IMAGENET1K" | "1K" => Ok(PretrainTag::Imagenet1k),
            "IMAGENET21K" | "21K" => Ok(PretrainTag::Imagenet21k),
            "IMAGENET22K" | "22K" => Ok(PretrainTag::Imagenet22k),
            _ => Err(format!("invalid pretrain tag `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HeadSpec {
    PatchHead { n_classes: usize },
    WholeImageHead,
    TwoViewHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResizeMode {
    None,
    Fixed { height: usize, width: usize },
    Learned { height: usize, width: usize },
}

impl ResizeMode {
    pub fn target(self) -> Option<(usize, usize)> {
        match self {
            ResizeMode::None => None,
            ResizeMode::Fixed { height, width } | ResizeMode::Learned { height, width } => Some((height, width)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub backbone: String,
    pub pretrain_tag: PretrainTag,
    pub head: HeadSpec,
    pub resize_mode: ResizeMode,
    /// (height, width) of the images the model is fed.
    pub input_size: (usize, usize),
}

impl ModelSpec {
    pub fn patch(backbone: &str, n_classes: usize) -> Self {
        Self {
            backbone: backbone.into(),
            pretrain_tag: PretrainTag::Imagenet1k,
            head: HeadSpec::PatchHead { n_classes },
            resize_mode: ResizeMode::None,
            input_size: (224, 224),
        }
    }

    pub fn whole_image(backbone: &str, input_size: (usize, usize)) -> Self {
        Self {
            backbone: backbone.into(),
            pretrain_tag: PretrainTag::Imagenet1k,
            head: HeadSpec::WholeImageHead,
            resize_mode: ResizeMode::None,
            input_size,
        }
    }

    pub fn two_view(backbone: &str, input_size: (usize, usize)) -> Self {
        Self { head: HeadSpec::TwoViewHead, ..Self::whole_image(backbone, input_size) }
    }

    pub fn with_resize(mut self, mode: ResizeMode) -> Self {
        self.resize_mode = mode;
        self
    }

    pub fn with_tag(mut self, tag: PretrainTag) -> Self {
        self.pretrain_tag = tag;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let HeadSpec::PatchHead { n_classes } = self.head {
            if !(4..=5).contains(&n_classes) {
                return Err(ModelError::InvalidSpec(format!("patch head needs 4 or 5 classes, got {n_classes}")));
            }
            if self.resize_mode != ResizeMode::None {
                return Err(ModelError::InvalidSpec("patch classifiers take no resizer".into()));
            }
        }
        if let Some(target) = self.resize_mode.target() {
            let input = self.input_size;
            if target.0 > input.0 || target.1 > input.1 || target == input {
                return Err(ModelError::UpscaleRequested { target, input });
            }
        }
        let (h, w) = self.resize_mode.target().unwrap_or(self.input_size);
        if h < 32 || w < 32 {
            return Err(ModelError::InvalidSpec(format!("input {h}x{w} is below the stride-32 minimum")));
        }
        Ok(())
    }
}
