use crate::error::{Error, Result};
use statrs::distribution::{ContinuousCDF, Normal};

/// Sup distance between the empirical CDF of `sample` and `N(0, target_variance)`.
pub fn ks_distance(sample: &[f64], target_variance: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::InvalidParameter("KS distance of an empty sample".into()));
    }
    if !(target_variance > 0.0 && target_variance.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "target variance must be positive, got {target_variance}"
        )));
    }
    if let Some(bad) = sample.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite sample value {bad}")));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let normal = Normal::new(0.0, target_variance.sqrt()).expect("positive scale");
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        // ties form a single jump of the empirical CDF
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let cdf = normal.cdf(sorted[i]);
        d = d.max(cdf - i as f64 / n).max((j + 1) as f64 / n - cdf);
        i = j + 1;
    }
    Ok(d)
}

/// Asymptotic one-sample KS critical value at level `alpha` for `n` points.
pub fn ks_threshold(n: usize, alpha: f64) -> f64 {
    (-(0.5 * alpha).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return f64::NAN;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_stderr = if x.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    LineFit {
        slope,
        intercept,
        slope_stderr,
    }
}

/// `P(|N(0, var)| > x)`.
pub fn gaussian_two_sided_tail(x: f64, var: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    2.0 * normal.sf(x.abs() / var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fit_recovers_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v - 1.0).collect();
        let f = fit_line(&x, &y);
        assert!((f.slope - 0.5).abs() < 1e-15 && (f.intercept + 1.0).abs() < 1e-15);
    }

    #[test]
    fn threshold_at_one_percent() {
        assert!((ks_threshold(1, 0.01) - 1.62762).abs() < 1e-5);
    }

    #[test]
    fn variance_is_unbiased() {
        assert_eq!(variance(&[1.0, 3.0]), 2.0);
        assert!(variance(&[1.0]).is_nan());
    }
}
