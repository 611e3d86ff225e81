//! Asymptotic covariance `M_f(t)` of the occupation functional, computed
//! either from the Poisson solution or from simulated autocorrelations, and
//! the quadratic rate function built on it.

mod autocorrelation;
mod gradient;
mod rate;

pub use autocorrelation::{mf_autocorrelation_form, AutocorrelationOptions, AUTOCORRELATION_STAGE};
pub use gradient::{mf_gradient_form, TAIL_TOLERANCE};
pub use rate::{optimal_control, rate_function, OptimalControl, RatePath, MIN_EIGENVALUE};

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CovarianceRoute {
    GradientForm,
    AutocorrelationForm,
}

impl std::fmt::Display for CovarianceRoute {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::GradientForm => "GRADIENT_FORM",
            Self::AutocorrelationForm => "AUTOCORRELATION_FORM",
        })
    }
}

/// `M_f(t)` on a list of times. Matrices are stored row-major as nested vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceCurve {
    pub times: Vec<f64>,
    pub matrices: Vec<Vec<Vec<f64>>>,
    pub route: CovarianceRoute,
    /// Per-entry standard errors (autocorrelation route only).
    pub stderr: Option<Vec<Vec<Vec<f64>>>>,
    /// Stationary start approximated by burn-in rather than drawn from `π`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub lower_confidence: bool,
}

pub(crate) fn to_nested(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub(crate) fn from_nested(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

impl CovarianceCurve {
    /// A curve whose entries are symmetrised on construction.
    pub fn new(times: Vec<f64>, matrices: Vec<DMatrix<f64>>, route: CovarianceRoute) -> Result<Self> {
        if times.is_empty() || times.len() != matrices.len() {
            return Err(Error::InvalidParameter(format!(
                "covariance curve needs one matrix per time, got {} times and {} matrices",
                times.len(),
                matrices.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("covariance times must be strictly increasing".into()));
        }
        let n = matrices[0].nrows();
        let mut nested = Vec::with_capacity(matrices.len());
        for m in &matrices {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Dimension(format!(
                    "covariance matrices must all be {n}×{n}, got {}×{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            nested.push(to_nested(&((m + m.transpose()) * 0.5)));
        }
        Ok(Self {
            times,
            matrices: nested,
            route,
            stderr: None,
            lower_confidence: false,
        })
    }

    /// A curve holding one constant scalar value.
    pub fn constant_scalar(value: f64, route: CovarianceRoute) -> Self {
        Self {
            times: vec![0.0],
            matrices: vec![vec![vec![value]]],
            route,
            stderr: None,
            lower_confidence: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].len()
    }

    pub fn matrix(&self, k: usize) -> DMatrix<f64> {
        from_nested(&self.matrices[k])
    }

    /// Entrywise linear interpolation in `t`, constant beyond the end times.
    pub fn matrix_at(&self, t: f64) -> DMatrix<f64> {
        let ts = &self.times;
        if ts.len() == 1 || t <= ts[0] {
            return self.matrix(0);
        }
        if t >= ts[ts.len() - 1] {
            return self.matrix(ts.len() - 1);
        }
        let k = ts.partition_point(|&s| s <= t) - 1;
        let w = (t - ts[k]) / (ts[k + 1] - ts[k]);
        self.matrix(k) * (1.0 - w) + self.matrix(k + 1) * w
    }

    /// The value for a scalar functional at the first time.
    pub fn scalar(&self) -> f64 {
        self.matrices[0][0][0]
    }

    pub fn scalar_stderr(&self) -> Option<f64> {
        self.stderr.as_ref().map(|s| s[0][0][0])
    }

    /// Multiplies every matrix (and standard error) by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let scale = |v: &Vec<Vec<Vec<f64>>>, c: f64| -> Vec<Vec<Vec<f64>>> {
            v.iter()
                .map(|m| m.iter().map(|r| r.iter().map(|x| x * c).collect()).collect())
                .collect()
        };
        Self {
            matrices: scale(&self.matrices, c),
            stderr: self.stderr.as_ref().map(|s| scale(s, c.abs())),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_and_json_round_trip() {
        let c = CovarianceCurve::new(
            vec![0.0, 1.0],
            vec![DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 4.0)],
            CovarianceRoute::GradientForm,
        )
        .unwrap();
        assert_eq!(c.matrix_at(0.25)[(0, 0)], 2.5);
        assert_eq!(c.matrix_at(7.0)[(0, 0)], 4.0);
        let json = c.to_json().unwrap();
        assert!(json.contains("\"route\": \"GRADIENT_FORM\""));
        assert!(json.contains("\"stderr\": null"));
        assert_eq!(CovarianceCurve::from_json(&json).unwrap(), c);
    }

    #[test]
    fn construction_symmetrises() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.4, 1.0]);
        let c = CovarianceCurve::new(vec![0.0], vec![m], CovarianceRoute::GradientForm).unwrap();
        assert_eq!(c.matrices[0][0][1], c.matrices[0][1][0]);
        assert!((c.matrices[0][0][1] - 0.3).abs() < 1e-15);
        assert!(CovarianceCurve::new(vec![1.0, 0.5], vec![DMatrix::zeros(1, 1); 2], CovarianceRoute::GradientForm).is_err());
    }
}
