use serde::{Deserialize, Serialize};

use super::normal::upper_tail;
use super::{Result, StatsError};

/// Correlation assumed between two AUCs measured on the same test set.
pub const DEFAULT_CORRELATION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTestResult {
    pub z: f64,
    pub se_diff: f64,
    /// One-tailed, H1: auc1 > auc2.
    pub p_one_tailed: f64,
}

/// z-test on two AUCs given their standard errors and an assumed
/// correlation `r` between the estimates.
pub fn z_test_correlated(auc1: f64, se1: f64, auc2: f64, se2: f64, r: f64) -> Result<ZTestResult> {
    if !(se1 > 0.0 && se2 > 0.0) {
        return Err(StatsError::ZeroVariance("standard errors must be positive"));
    }
    if !(-1.0..=1.0).contains(&r) {
        return Err(StatsError::InvalidInput(format!("correlation {r} outside [-1, 1]")));
    }
    let var = se1 * se1 + se2 * se2 - 2.0 * r * se1 * se2;
    if var <= 0.0 {
        return Err(StatsError::ZeroVariance("difference of AUCs has zero variance"));
    }
    let se_diff = var.sqrt();
    let z = (auc1 - auc2) / se_diff;
    Ok(ZTestResult {
        z,
        se_diff,
        p_one_tailed: upper_tail(z),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reported_p_values() {
        let r = z_test_correlated(0.8325, 0.0171, 0.8313, 0.0172, 0.5).unwrap();
        assert!((r.p_one_tailed - 0.4721).abs() < 5e-4, "{}", r.p_one_tailed);
        let r = z_test_correlated(0.8325, 0.0171, 0.8033, 0.0183, 0.5).unwrap();
        assert!((r.p_one_tailed - 0.0499).abs() < 5e-4, "{}", r.p_one_tailed);
    }

    #[test]
    fn equal_aucs_give_half() {
        let r = z_test_correlated(0.8, 0.02, 0.8, 0.03, 0.5).unwrap();
        assert_eq!(r.z, 0.0);
        assert_eq!(r.p_one_tailed, 0.5);
    }

    #[test]
    fn independent_case_and_swap() {
        let r = z_test_correlated(0.85, 0.02, 0.80, 0.03, 0.0).unwrap();
        let z_ind = 0.05 / (0.02f64.powi(2) + 0.03f64.powi(2)).sqrt();
        assert!((r.z - z_ind).abs() < 1e-12);
        let s = z_test_correlated(0.80, 0.03, 0.85, 0.02, 0.0).unwrap();
        assert!((s.z + r.z).abs() < 1e-12);
        assert!((s.p_one_tailed - (1.0 - r.p_one_tailed)).abs() < 1e-12);
    }

    #[test]
    fn zero_variance() {
        assert!(matches!(
            z_test_correlated(0.9, 0.0, 0.8, 0.1, 0.5),
            Err(StatsError::ZeroVariance(_))
        ));
        // perfectly correlated, equal SE
        assert!(matches!(
            z_test_correlated(0.9, 0.1, 0.8, 0.1, 1.0),
            Err(StatsError::ZeroVariance(_))
        ));
    }
}
