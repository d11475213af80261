//! Paired DeLong comparison of two correlated AUCs, using the midrank
//! formulation of the structural components so the cost is O(n log n).

use serde::{Deserialize, Serialize};

use super::auc::midranks;
use super::normal::upper_tail;
use super::{Result, ScoreSet, StatsError};

/// Structural components of one score vector: `v10[i]` is the placement of
/// positive `i` among the negatives, `v01[j]` that of negative `j` among the
/// positives. Positives and negatives appear in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Placements {
    pub v10: Vec<f64>,
    pub v01: Vec<f64>,
    pub auc: f64,
}

pub fn placements(s: &ScoreSet) -> Result<Placements> {
    let (m, n) = s.require_both_classes()?;
    let pos: Vec<f64> = s.iter().filter(|r| r.2 == 1).map(|r| r.1).collect();
    let neg: Vec<f64> = s.iter().filter(|r| r.2 == 0).map(|r| r.1).collect();
    let tx = midranks(&pos);
    let ty = midranks(&neg);
    let all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    let tz = midranks(&all);
    let v10: Vec<f64> = (0..m).map(|i| (tz[i] - tx[i]) / n as f64).collect();
    let v01: Vec<f64> = (0..n).map(|j| 1.0 - (tz[m + j] - ty[j]) / m as f64).collect();
    let auc = (tz[..m].iter().sum::<f64>() - (m * (m + 1)) as f64 / 2.0) / (m * n) as f64;
    Ok(Placements { v10, v01, auc })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DelongFlag {
    /// The AUC difference has zero variance (e.g. identical classifiers); p
    /// is reported as 0.5 when the AUCs are equal.
    ZeroDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelongResult {
    pub auc1: f64,
    pub auc2: f64,
    pub var1: f64,
    pub var2: f64,
    pub cov: f64,
    pub z: Option<f64>,
    /// One-tailed, H1: auc1 > auc2.
    pub p_one_tailed: f64,
    pub flag: Option<DelongFlag>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_cov(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (a.len() as f64 - 1.0)
}

/// Variance/covariance from two sets of placements over the same cases.
pub(crate) fn delong_from_placements(p1: &Placements, p2: &Placements) -> DelongResult {
    let (m, n) = (p1.v10.len() as f64, p1.v01.len() as f64);
    let var1 = sample_cov(&p1.v10, &p1.v10) / m + sample_cov(&p1.v01, &p1.v01) / n;
    let var2 = sample_cov(&p2.v10, &p2.v10) / m + sample_cov(&p2.v01, &p2.v01) / n;
    let cov = sample_cov(&p1.v10, &p2.v10) / m + sample_cov(&p1.v01, &p2.v01) / n;
    let var_diff = var1 + var2 - 2.0 * cov;
    let diff = p1.auc - p2.auc;
    let (z, p, flag) = if var_diff > 1e-300 {
        let z = diff / var_diff.sqrt();
        (Some(z), upper_tail(z), None)
    } else {
        let p = if diff == 0.0 {
            0.5
        } else if diff > 0.0 {
            0.0
        } else {
            1.0
        };
        (None, p, Some(DelongFlag::ZeroDifference))
    };
    DelongResult {
        auc1: p1.auc,
        auc2: p2.auc,
        var1,
        var2,
        cov,
        z,
        p_one_tailed: p,
        flag,
    }
}

/// One-tailed paired DeLong test (H1: `s1` has the larger AUC). Both sets
/// must cover the same ids with the same labels; order may differ.
pub fn delong_test(s1: &ScoreSet, s2: &ScoreSet) -> Result<DelongResult> {
    if s1.len() != s2.len() {
        return Err(StatsError::UnpairedScoreSets(format!(
            "{} vs {} cases",
            s1.len(),
            s2.len()
        )));
    }
    let a = s1.sorted_by_id();
    let b = s2.sorted_by_id();
    for ((ia, _, la), (ib, _, lb)) in a.iter().zip(b.iter()) {
        if ia != ib {
            return Err(StatsError::UnpairedScoreSets(format!(
                "id `{ia}` has no partner (found `{ib}`)"
            )));
        }
        if la != lb {
            return Err(StatsError::UnpairedScoreSets(format!(
                "label of `{ia}` differs between sets"
            )));
        }
    }
    let (m, n) = a.require_both_classes()?;
    if m < 2 || n < 2 {
        return Err(StatsError::DegenerateLabels { n_pos: m, n_neg: n });
    }
    let pa = placements(&a)?;
    let pb = placements(&b)?;
    Ok(delong_from_placements(&pa, &pb))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Direct pairwise structural components, O(m·n).
    fn naive_placements(s: &ScoreSet) -> Placements {
        let pos: Vec<f64> = s.iter().filter(|r| r.2 == 1).map(|r| r.1).collect();
        let neg: Vec<f64> = s.iter().filter(|r| r.2 == 0).map(|r| r.1).collect();
        let psi = |x: f64, y: f64| {
            if x > y {
                1.0
            } else if x == y {
                0.5
            } else {
                0.0
            }
        };
        let v10: Vec<f64> = pos
            .iter()
            .map(|&x| neg.iter().map(|&y| psi(x, y)).sum::<f64>() / neg.len() as f64)
            .collect();
        let v01: Vec<f64> = neg
            .iter()
            .map(|&y| pos.iter().map(|&x| psi(x, y)).sum::<f64>() / pos.len() as f64)
            .collect();
        let auc = v10.iter().sum::<f64>() / v10.len() as f64;
        Placements { v10, v01, auc }
    }

    fn set(scores: &[f64], labels: &[u8]) -> ScoreSet {
        ScoreSet::from_scores(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn eight_case_oracle() {
        let labels = [1, 0, 1, 1, 0, 0, 1, 0];
        let s1 = set(&[0.9, 0.3, 0.7, 0.7, 0.4, 0.1, 0.6, 0.7], &labels);
        let s2 = set(&[0.8, 0.5, 0.4, 0.9, 0.5, 0.2, 0.3, 0.6], &labels);
        let fast = delong_test(&s1, &s2).unwrap();
        let naive = delong_from_placements(&naive_placements(&s1), &naive_placements(&s2));
        assert!((fast.auc1 - naive.auc1).abs() < 1e-12);
        assert!((fast.var1 - naive.var1).abs() < 1e-12);
        assert!((fast.var2 - naive.var2).abs() < 1e-12);
        assert!((fast.cov - naive.cov).abs() < 1e-12);
        assert!((fast.p_one_tailed - naive.p_one_tailed).abs() < 1e-12);
    }

    #[test]
    fn identical_sets_flag_zero_difference() {
        let s = set(&[0.9, 0.2, 0.6, 0.4, 0.3], &[1, 0, 1, 0, 1]);
        let r = delong_test(&s, &s).unwrap();
        assert_eq!(r.p_one_tailed, 0.5);
        assert_eq!(r.flag, Some(DelongFlag::ZeroDifference));
        assert!(r.z.is_none());
    }

    #[test]
    fn unpaired_sets_are_rejected() {
        let a = ScoreSet::new(vec!["a".into(), "b".into()], vec![0.1, 0.9], vec![0, 1]).unwrap();
        let b = ScoreSet::new(vec!["a".into(), "c".into()], vec![0.1, 0.9], vec![0, 1]).unwrap();
        assert!(matches!(delong_test(&a, &b), Err(StatsError::UnpairedScoreSets(_))));
        let c = ScoreSet::new(vec!["a".into(), "b".into()], vec![0.1, 0.9], vec![1, 0]).unwrap();
        assert!(matches!(delong_test(&a, &c), Err(StatsError::UnpairedScoreSets(_))));
    }

    #[test]
    fn order_of_rows_does_not_matter() {
        let a = ScoreSet::new(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec![0.2, 0.9, 0.4, 0.7],
            vec![0, 1, 0, 1],
        )
        .unwrap();
        let b = ScoreSet::new(
            vec!["d".into(), "c".into(), "b".into(), "a".into()],
            vec![0.3, 0.5, 0.8, 0.1],
            vec![1, 0, 1, 0],
        )
        .unwrap();
        let r1 = delong_test(&a, &b).unwrap();
        let r2 = delong_test(&a, &b.sorted_by_id()).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn swapping_arguments_mirrors_p() {
        let labels = [1, 0, 1, 1, 0, 0, 1, 0, 0, 1];
        let s1 = set(&[0.9, 0.3, 0.7, 0.8, 0.4, 0.1, 0.6, 0.2, 0.5, 0.45], &labels);
        let s2 = set(&[0.8, 0.5, 0.4, 0.9, 0.5, 0.2, 0.3, 0.6, 0.1, 0.35], &labels);
        let r12 = delong_test(&s1, &s2).unwrap();
        let r21 = delong_test(&s2, &s1).unwrap();
        assert!((r12.p_one_tailed + r21.p_one_tailed - 1.0).abs() < 1e-12);
    }
}
