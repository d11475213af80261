use libm::erfc;

/// Standard normal CDF, evaluated through `erfc` so both tails keep full
/// relative precision.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `1 - Φ(z)`, the one-tailed p-value for H1: statistic > 0.
pub fn upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_quantiles() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-12);
        assert!((upper_tail(1.6448536269514722) - 0.05).abs() < 1e-12);
        assert!((normal_cdf(-3.0) - 0.0013498980316301).abs() < 1e-13);
    }

    #[test]
    fn tails_sum_to_one() {
        for i in -80..=80 {
            let z = i as f64 / 10.0;
            assert!((normal_cdf(z) + upper_tail(z) - 1.0).abs() < 1e-15);
        }
    }
}
