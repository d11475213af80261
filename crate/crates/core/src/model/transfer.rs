use serde::Serialize;

use super::classifier::Model;
use super::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CopiedTensor {
    pub name: String,
    pub source: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReinitReason {
    NotInSource,
    ShapeMismatch { source_shape: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReinitTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub reason: ReinitReason,
}

/// Which destination tensors were copied, reinitialized or frozen.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct WeightTransferReport {
    pub copied: Vec<CopiedTensor>,
    pub reinitialized: Vec<ReinitTensor>,
    pub frozen: Vec<String>,
}

impl WeightTransferReport {
    pub fn n_copied_elements(&self) -> usize {
        self.copied.iter().map(|c| c.shape.iter().product::<usize>()).sum()
    }
}

fn source_candidates(name: &str) -> Vec<String> {
    let mut v = vec![name.to_string()];
    for pre in ["cc.", "mlo."] {
        if let Some(rest) = name.strip_prefix(pre) {
            v.push(rest.to_string());
        }
    }
    v
}

/// Copies every tensor of `src` whose name (with any `cc.`/`mlo.` branch
/// prefix stripped) and shape match a tensor of `dst`; everything else in
/// `dst` gets its default initialization.
pub fn transfer_weights(src: &Model, dst: &Model) -> Result<WeightTransferReport> {
    let mut report = WeightTransferReport::default();
    let seed = dst.params().seed();
    for (name, entry) in dst.params().entries() {
        let shape = entry.var.dims().to_vec();
        let mut mismatch = None;
        let mut hit = None;
        for cand in source_candidates(&name) {
            if let Some(s) = src.params().get(&cand) {
                if s.var.dims() == shape.as_slice() {
                    hit = Some((cand, s));
                    break;
                }
                mismatch.get_or_insert(s.var.dims().to_vec());
            }
        }
        match hit {
            Some((source, s)) => {
                dst.params().set(&name, s.var.as_tensor())?;
                report.copied.push(CopiedTensor { name, source, shape });
            }
            None => {
                dst.params().reinit(&name, seed)?;
                let reason = match mismatch {
                    Some(source_shape) => ReinitReason::ShapeMismatch { source_shape },
                    None => ReinitReason::NotInSource,
                };
                report.reinitialized.push(ReinitTensor { name, shape, reason });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::{build_model, build_single_view, build_two_view, BuildOptions, ModelSpec, SingleViewInit};
    use super::*;

    #[test]
    fn patch_to_single_to_two_view() {
        let patch = build_model(&ModelSpec::patch("tiny-mbconv", 5), &BuildOptions::random(1)).unwrap();
        let spec = ModelSpec::whole_image("tiny-mbconv", (128, 96));
        let (single, rep) = build_single_view(&spec, SingleViewInit::FromPatch(&patch), &BuildOptions::random(2)).unwrap();
        let rep = rep.unwrap();
        assert!(rep.copied.iter().all(|c| c.name.starts_with("trunk.")));
        assert_eq!(rep.copied.len(), patch.params().pp("trunk").entries().len());
        assert!(rep.reinitialized.iter().any(|r| r.name == "head.fc.weight"
            && matches!(r.reason, ReinitReason::ShapeMismatch { ref source_shape } if source_shape == &vec![5, 96])));
        assert!(rep.reinitialized.iter().any(|r| r.name.starts_with("top.") && r.reason == ReinitReason::NotInSource));
        assert!(rep.frozen.is_empty());

        let trunk_name = rep.copied[0].name.clone();
        let a = patch.params().get(&trunk_name).unwrap().var.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = single.params().get(&trunk_name).unwrap().var.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b);

        let (two, rep2) = build_two_view(&ModelSpec::two_view("tiny-mbconv", (128, 96)), Some(&single), &BuildOptions::random(3)).unwrap();
        let rep2 = rep2.unwrap();
        // everything but the head is copied into both branches; the scalar
        // head bias keeps its shape and is copied once
        let n_branch = single.params().entries().len() - 2;
        assert_eq!(rep2.copied.len(), 2 * n_branch + 1);
        assert!(rep2.copied.iter().any(|c| c.name == "head.fc.bias"));
        assert!(rep2.reinitialized.iter().all(|r| r.name.starts_with("joint.") || r.name == "head.fc.weight"));
        let total = rep2.copied.len() + rep2.reinitialized.len();
        assert_eq!(total, two.params().entries().len());
    }

    #[test]
    fn cross_backbone_rejected() {
        let patch = build_model(&ModelSpec::patch("tiny-mbconv", 5), &BuildOptions::random(1)).unwrap();
        let spec = ModelSpec::whole_image("resnet-18", (128, 96));
        assert!(build_single_view(&spec, SingleViewInit::FromPatch(&patch), &BuildOptions::random(2)).is_err());
    }
}
