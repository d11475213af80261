use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Result, ScoreSet, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AggregateOp {
    Mean,
    Max,
}

impl AggregateOp {
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            AggregateOp::Mean => 0.5 * (a + b),
            AggregateOp::Max => a.max(b),
        }
    }
}

impl std::str::FromStr for AggregateOp {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "MEAN" => Ok(AggregateOp::Mean),
            "MAX" => Ok(AggregateOp::Max),
            _ => Err(format!("unknown aggregation `{s}` (expected MEAN or MAX)")),
        }
    }
}

/// Strips a trailing `|CC` / `|MLO` component from a view id, giving the
/// `exam_id|SIDE` key shared by both views of one breast.
pub fn pair_key(id: &str) -> &str {
    match id.rsplit_once('|') {
        Some((head, "CC")) | Some((head, "MLO")) => head,
        _ => id,
    }
}

/// Combines CC and MLO scores per breast. Ids of both inputs are reduced
/// with [`pair_key`]; output ids are the sorted pair keys.
pub fn aggregate_views(cc: &ScoreSet, mlo: &ScoreSet, op: AggregateOp) -> Result<ScoreSet> {
    let index = |s: &ScoreSet, which: &str| -> Result<BTreeMap<String, (f64, u8)>> {
        let mut m = BTreeMap::new();
        for (id, score, label) in s.iter() {
            if m.insert(pair_key(id).to_string(), (score, label)).is_some() {
                return Err(StatsError::UnpairedViews(format!(
                    "two {which} scores for `{}`",
                    pair_key(id)
                )));
            }
        }
        Ok(m)
    };
    let cc_map = index(cc, "CC")?;
    let mlo_map = index(mlo, "MLO")?;
    if let Some(k) = cc_map.keys().find(|k| !mlo_map.contains_key(*k)) {
        return Err(StatsError::UnpairedViews(format!("`{k}` has no MLO score")));
    }
    if let Some(k) = mlo_map.keys().find(|k| !cc_map.contains_key(*k)) {
        return Err(StatsError::UnpairedViews(format!("`{k}` has no CC score")));
    }
    let (mut ids, mut scores, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (key, &(s_cc, l_cc)) in &cc_map {
        let (s_mlo, l_mlo) = mlo_map[key];
        if l_cc != l_mlo {
            return Err(StatsError::LabelConflict(key.clone()));
        }
        ids.push(key.clone());
        scores.push(op.apply(s_cc, s_mlo));
        labels.push(l_cc);
    }
    ScoreSet::new(ids, scores, labels)
}

/// Splits a per-view score set (ids ending in `|CC` / `|MLO`) and
/// aggregates it per breast.
pub fn aggregate_view_scores(views: &ScoreSet, op: AggregateOp) -> Result<ScoreSet> {
    let mut parts: [(Vec<String>, Vec<f64>, Vec<u8>); 2] = Default::default();
    for (id, s, l) in views.iter() {
        let slot = if id.ends_with("|CC") {
            0
        } else if id.ends_with("|MLO") {
            1
        } else {
            return Err(StatsError::UnpairedViews(format!(
                "id `{id}` does not name a CC or MLO view"
            )));
        };
        parts[slot].0.push(id.to_string());
        parts[slot].1.push(s);
        parts[slot].2.push(l);
    }
    let [cc, mlo] = parts;
    let cc = ScoreSet::new(cc.0, cc.1, cc.2)?;
    let mlo = ScoreSet::new(mlo.0, mlo.1, mlo.2)?;
    aggregate_views(&cc, &mlo, op)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn views(keys: &[&str], view: &str, scores: &[f64], labels: &[u8]) -> ScoreSet {
        ScoreSet::new(
            keys.iter().map(|k| format!("{k}|{view}")).collect(),
            scores.to_vec(),
            labels.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn mean_and_max() {
        let cc = views(&["e1|LEFT"], "CC", &[0.6], &[1]);
        let mlo = views(&["e1|LEFT"], "MLO", &[0.8], &[1]);
        let mean = aggregate_views(&cc, &mlo, AggregateOp::Mean).unwrap();
        assert!((mean.scores()[0] - 0.7).abs() < 1e-15);
        assert_eq!(mean.ids(), ["e1|LEFT"]);
        let max = aggregate_views(&cc, &mlo, AggregateOp::Max).unwrap();
        assert_eq!(max.scores()[0], 0.8);
    }

    #[test]
    fn arity_halves() {
        let keys = ["a|LEFT", "a|RIGHT", "b|LEFT", "b|RIGHT"];
        let cc = views(&keys, "CC", &[0.1, 0.2, 0.3, 0.4], &[0, 1, 0, 1]);
        let mlo = views(&keys, "MLO", &[0.1, 0.3, 0.2, 0.4], &[0, 1, 0, 1]);
        let out = aggregate_views(&cc, &mlo, AggregateOp::Mean).unwrap();
        assert_eq!(out.len(), 4);
        let mut all_ids: Vec<String> = cc.ids().iter().chain(mlo.ids()).cloned().collect();
        all_ids.sort();
        let merged = ScoreSet::new(
            all_ids.clone(),
            all_ids.iter().map(|_| 0.5).collect(),
            all_ids
                .iter()
                .map(|id| if id.contains("RIGHT") { 1 } else { 0 })
                .collect(),
        )
        .unwrap();
        assert_eq!(aggregate_view_scores(&merged, AggregateOp::Max).unwrap().len(), 4);
    }

    #[test]
    fn mean_equals_max_for_equal_scores() {
        let cc = views(&["a|LEFT", "b|LEFT"], "CC", &[0.3, 0.9], &[0, 1]);
        let mlo = views(&["a|LEFT", "b|LEFT"], "MLO", &[0.3, 0.9], &[0, 1]);
        assert_eq!(
            aggregate_views(&cc, &mlo, AggregateOp::Mean).unwrap(),
            aggregate_views(&cc, &mlo, AggregateOp::Max).unwrap()
        );
    }

    #[test]
    fn errors() {
        let cc = views(&["a|LEFT"], "CC", &[0.3], &[0]);
        let mlo = views(&["b|LEFT"], "MLO", &[0.3], &[0]);
        assert!(matches!(
            aggregate_views(&cc, &mlo, AggregateOp::Mean),
            Err(StatsError::UnpairedViews(_))
        ));
        let mlo = views(&["a|LEFT"], "MLO", &[0.3], &[1]);
        assert!(matches!(
            aggregate_views(&cc, &mlo, AggregateOp::Mean),
            Err(StatsError::LabelConflict(_))
        ));
    }
}
