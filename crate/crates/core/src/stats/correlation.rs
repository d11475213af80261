use super::{Result, StatsError};

/// Sample Pearson correlation coefficient.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(StatsError::InvalidInput(format!(
            "need two equal-length series of at least 2 values, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance("series is constant"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Fraction of exact matches between predicted and true classes.
pub fn patch_accuracy<T: PartialEq>(preds: &[T], labels: &[T]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(StatsError::InvalidInput(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(StatsError::InvalidInput("no predictions".into()));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_dependence() {
        let xs = [0.1, 0.5, 0.2, 0.9, 0.7];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson_r(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -3.0 * x).collect();
        assert!((pearson_r(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_value() {
        // xs (1,2,3), ys (1,3,2): sxy = 1, sxx = syy = 2 → r = 0.5
        assert!((pearson_r(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_variance() {
        assert!(matches!(
            pearson_r(&[1.0, 1.0], &[0.0, 2.0]),
            Err(StatsError::ZeroVariance(_))
        ));
    }

    #[test]
    fn accuracy() {
        assert_eq!(patch_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(patch_accuracy(&[1, 2, 3, 4], &[1, 0, 3, 0]).unwrap(), 0.5);
    }
}
