use serde::{Deserialize, Serialize};

use super::{Result, ScoreSet};

/// 1-based midranks: tied values share the mean of the ranks they span.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j averaged
        let mid = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = mid;
        }
        i = j;
    }
    ranks
}

/// Mann–Whitney AUC with half credit for ties.
pub fn auc(s: &ScoreSet) -> Result<f64> {
    let (n_pos, n_neg) = s.require_both_classes()?;
    let ranks = midranks(s.scores());
    let rank_sum: f64 = ranks
        .iter()
        .zip(s.labels())
        .filter(|(_, &l)| l == 1)
        .map(|(r, _)| r)
        .sum();
    let p = n_pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n_neg as f64))
}

/// Hanley & McNeil (1982) standard error of an AUC estimate.
pub fn hanley_mcneil_se(a: f64, n_pos: usize, n_neg: usize) -> f64 {
    let q1 = a / (2.0 - a);
    let q2 = 2.0 * a * a / (1.0 + a);
    let num = a * (1.0 - a)
        + (n_pos as f64 - 1.0) * (q1 - a * a)
        + (n_neg as f64 - 1.0) * (q2 - a * a);
    (num.max(0.0) / (n_pos as f64 * n_neg as f64)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub auc: f64,
    pub se: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

pub fn auc_report(s: &ScoreSet) -> Result<AucReport> {
    let a = auc(s)?;
    let (n_pos, n_neg) = (s.n_pos(), s.n_neg());
    Ok(AucReport {
        auc: a,
        se: hanley_mcneil_se(a, n_pos, n_neg),
        n_pos,
        n_neg,
    })
}

#[cfg(test)]
mod tests {
    use super::super::StatsError;
    use super::*;
    use proptest::prelude::*;

    fn set(scores: &[f64], labels: &[u8]) -> ScoreSet {
        ScoreSet::from_scores(scores.to_vec(), labels.to_vec()).unwrap()
    }

    fn brute_force(scores: &[f64], labels: &[u8]) -> f64 {
        let mut credit = 0.0;
        let (mut p, mut n) = (0usize, 0usize);
        for (i, &li) in labels.iter().enumerate() {
            if li == 1 {
                p += 1;
            } else {
                n += 1;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    if scores[i] > scores[j] {
                        credit += 1.0;
                    } else if scores[i] == scores[j] {
                        credit += 0.5;
                    }
                }
            }
        }
        credit / (p as f64 * n as f64)
    }

    #[test]
    fn examples() {
        assert_eq!(auc(&set(&[0.9, 0.8, 0.3, 0.1], &[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(auc(&set(&[0.5; 4], &[1, 1, 0, 0])).unwrap(), 0.5);
        // pairs (0.9,0.4) (0.9,0.2) (0.6,0.4) (0.6,0.2) all concordant
        let s = [0.9, 0.4, 0.6, 0.2];
        let l = [1, 0, 1, 0];
        assert_eq!(brute_force(&s, &l), 1.0);
        assert_eq!(auc(&set(&s, &l)).unwrap(), 1.0);
        let s = [0.9, 0.7, 0.6, 0.2];
        let l = [1, 0, 1, 0];
        assert_eq!(auc(&set(&s, &l)).unwrap(), 0.75);
    }

    #[test]
    fn single_class_is_degenerate() {
        assert!(matches!(
            auc(&set(&[0.1, 0.2], &[1, 1])),
            Err(StatsError::DegenerateLabels { n_pos: 2, n_neg: 0 })
        ));
    }

    #[test]
    fn midranks_with_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn hanley_mcneil_values() {
        let q = 1.0 / 3.0;
        let hand = ((0.25 + 9.0 * (q - 0.25) * 2.0) / 100.0f64).sqrt();
        assert!((hanley_mcneil_se(0.5, 10, 10) - hand).abs() < 1e-15);
        assert!((hanley_mcneil_se(0.5, 10, 10) - 0.132288).abs() < 1e-6);
        assert_eq!(hanley_mcneil_se(1.0, 30, 70), 0.0);
    }

    #[test]
    fn hanley_mcneil_is_not_symmetric_in_counts() {
        // Q1 and Q2 differ for A != 0.5, so swapping n_pos/n_neg changes SE.
        let a = hanley_mcneil_se(0.8, 20, 200);
        let b = hanley_mcneil_se(0.8, 200, 20);
        assert!((a - b).abs() > 1e-4);
        let q1 = 0.8 / 1.2;
        let q2 = 2.0 * 0.64 / 1.8;
        let want = ((0.16 + 19.0 * (q1 - 0.64) + 199.0 * (q2 - 0.64)) / 4000.0f64).sqrt();
        assert!((a - want).abs() < 1e-15);
    }

    fn score_sets() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..100).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..20).prop_map(|v| v as f64 / 19.0), n),
                prop::collection::vec(0u8..2, n),
            )
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force((scores, labels) in score_sets()) {
            let s = set(&scores, &labels);
            prop_assume!(s.n_pos() > 0 && s.n_neg() > 0);
            prop_assert_eq!(auc(&s).unwrap(), brute_force(&scores, &labels));
        }

        #[test]
        fn complement_symmetry((scores, labels) in score_sets()) {
            let s = set(&scores, &labels);
            prop_assume!(s.n_pos() > 0 && s.n_neg() > 0);
            let flipped = set(
                &scores.iter().map(|x| 1.0 - x).collect::<Vec<_>>(),
                &labels.iter().map(|l| 1 - l).collect::<Vec<_>>(),
            );
            prop_assert!((auc(&s).unwrap() - auc(&flipped).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn invariant_under_monotone_transform((scores, labels) in score_sets()) {
            let s = set(&scores, &labels);
            prop_assume!(s.n_pos() > 0 && s.n_neg() > 0);
            let t = set(&scores.iter().map(|x| x.powi(3)).collect::<Vec<_>>(), &labels);
            prop_assert_eq!(auc(&s).unwrap(), auc(&t).unwrap());
        }
    }
}
