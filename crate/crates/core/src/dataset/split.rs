use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::Manifest;
use super::types::*;
use super::{DatasetError, Result};

/// Number of validation views the film corpus reserves from its train split.
pub const CBIS_VALIDATION_SIZE: usize = 246;

/// Moves `n_val` TRAIN views to VAL by seeded sampling stratified on
/// (binary label, first lesion kind). A manifest that already has VAL rows is
/// left untouched. Returns the number of records moved.
pub fn carve_validation(manifest: &mut Manifest, n_val: usize, seed: u64) -> Result<usize> {
    if manifest.views.iter().any(|v| v.split == Split::Val) {
        return Ok(0);
    }
    let scheme = manifest.schema.label_scheme();
    let mut kinds: HashMap<ViewKey, LesionKind> = HashMap::new();
    for l in &manifest.lesions {
        kinds.entry(l.owner.clone()).or_insert(l.kind);
    }
    let mut strata: BTreeMap<(u8, Option<LesionKind>), Vec<usize>> = BTreeMap::new();
    for (i, v) in manifest.views.iter().enumerate() {
        if v.split != Split::Train {
            continue;
        }
        let label = map_binary_label(v, scheme)?;
        strata.entry((label, kinds.get(&v.key()).copied())).or_default().push(i);
    }
    let available: usize = strata.values().map(Vec::len).sum();
    if n_val > available {
        return Err(DatasetError::NotEnoughForValidation { requested: n_val, available });
    }
    if n_val == 0 {
        return Ok(0);
    }

    // Largest-remainder allocation so quotas sum to n_val exactly.
    let mut quotas: Vec<(usize, f64)> = strata
        .values()
        .map(|s| {
            let exact = s.len() as f64 * n_val as f64 / available as f64;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut short = n_val - quotas.iter().map(|q| q.0).sum::<usize>();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1).then(a.cmp(&b)));
    for i in order {
        if short == 0 {
            break;
        }
        quotas[i].0 += 1;
        short -= 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (members, (quota, _)) in strata.values().zip(quotas) {
        let mut members = members.clone();
        members.shuffle(&mut rng);
        for &i in &members[..quota] {
            manifest.views[i].split = Split::Val;
        }
    }
    Ok(n_val)
}

/// (normal, abnormal) view counts per split under `scheme`.
pub fn split_counts(views: &[ViewRecord], scheme: LabelScheme) -> Result<BTreeMap<Split, [usize; 2]>> {
    let mut out = BTreeMap::new();
    for v in views {
        let label = map_binary_label(v, scheme)?;
        out.entry(v.split).or_insert([0usize; 2])[label as usize] += 1;
    }
    Ok(out)
}
