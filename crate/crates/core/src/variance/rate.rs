use super::{min_eigenvalue, CovarianceCurve};
use crate::error::{Error, Result};
use crate::model::{InvariantDensity1D, SdeModel};
use crate::poisson1d::PoissonSolution;
use crate::quadrature::{integrate, simpson, QuadratureConfig};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Covariances with a smaller eigenvalue are treated as singular.
pub const MIN_EIGENVALUE: f64 = 1e-10;

/// Piecewise-linear path `ξ` through its knots, starting at `(0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePath {
    knots: Vec<(f64, Vec<f64>)>,
}

impl RatePath {
    pub fn new(knots: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        let Some((t0, x0)) = knots.first() else {
            return Err(Error::InvalidParameter("a path needs at least one knot".into()));
        };
        if *t0 != 0.0 || x0.iter().any(|v| *v != 0.0) {
            return Err(Error::InvalidParameter(format!(
                "paths start at (0, 0), first knot is ({t0}, {x0:?})"
            )));
        }
        let n = x0.len();
        if n == 0 {
            return Err(Error::Dimension("path values must have at least one component".into()));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) || !w[1].0.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "knot times must increase strictly, got {} after {}",
                    w[1].0, w[0].0
                )));
            }
            if w[1].1.len() != n || w[1].1.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "knot at t = {} must hold {n} finite values",
                    w[1].0
                )));
            }
        }
        Ok(Self { knots })
    }

    /// `ξ(t) = v t` on `[0, horizon]`.
    pub fn linear(slope: Vec<f64>, horizon: f64) -> Result<Self> {
        let end = slope.iter().map(|v| v * horizon).collect();
        Self::new(vec![(0.0, vec![0.0; slope.len()]), (horizon, end)])
    }

    pub fn knots(&self) -> &[(f64, Vec<f64>)] {
        &self.knots
    }

    pub fn dim(&self) -> usize {
        self.knots[0].1.len()
    }

    pub fn horizon(&self) -> f64 {
        self.knots[self.knots.len() - 1].0
    }

    /// `(t_start, t_end, slope)` for each linear piece.
    pub fn segments(&self) -> Vec<(f64, f64, Vec<f64>)> {
        self.knots
            .windows(2)
            .map(|w| {
                let dt = w[1].0 - w[0].0;
                let v = w[1].1.iter().zip(&w[0].1).map(|(b, a)| (b - a) / dt).collect();
                (w[0].0, w[1].0, v)
            })
            .collect()
    }

    /// `ξ̇(s)`, right-continuous, with the last slope used at the horizon.
    pub fn slope_at(&self, s: f64) -> Vec<f64> {
        let segs = self.segments();
        segs.iter()
            .find(|(a, b, _)| s >= *a && s < *b)
            .or(segs.last())
            .map(|(_, _, v)| v.clone())
            .unwrap_or_else(|| vec![0.0; self.dim()])
    }

    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let k = &self.knots;
        if t <= 0.0 || k.len() == 1 {
            return k[0].1.clone();
        }
        if t >= self.horizon() {
            return k[k.len() - 1].1.clone();
        }
        let i = k.partition_point(|(s, _)| *s <= t) - 1;
        let w = (t - k[i].0) / (k[i + 1].0 - k[i].0);
        k[i].1.iter().zip(&k[i + 1].1).map(|(a, b)| a + w * (b - a)).collect()
    }

    /// Reads knots from CSV with header `t,xi_1,…,xi_n`.
    pub fn from_csv<R: std::io::Read>(source: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("t") || headers.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "knot file header must be t,xi_1,...,xi_n, got '{}'",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut knots = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| Error::InvalidParameter(format!("knot row {}: {e}", line + 1)))?;
            if vals.len() != headers.len() {
                return Err(Error::InvalidParameter(format!("knot row {} has {} fields", line + 1, vals.len())));
            }
            knots.push((vals[0], vals[1..].to_vec()));
        }
        Self::new(knots)
    }
}

fn quadratic_form(m: &DMatrix<f64>, v: &DVector<f64>) -> Result<f64> {
    if m.nrows() == 1 {
        return Ok(v[0] * v[0] / m[(0, 0)]);
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or(Error::DegenerateCovariance {
            min_eigenvalue: min_eigenvalue(m),
        })?;
    Ok(v.dot(&chol.solve(v)))
}

fn check_invertible(m: &DMatrix<f64>) -> Result<()> {
    let lam = min_eigenvalue(m);
    if !(lam > MIN_EIGENVALUE) {
        return Err(Error::DegenerateCovariance { min_eigenvalue: lam });
    }
    Ok(())
}

/// Splits `[a, b]` at the curve times inside it.
fn pieces(curve: &CovarianceCurve, a: f64, b: f64) -> Vec<(f64, f64)> {
    let mut cuts = vec![a];
    cuts.extend(curve.times.iter().copied().filter(|&t| t > a && t < b));
    cuts.push(b);
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

/// `½ ∫_0^T ξ̇ᵀ M_f(s)⁻¹ ξ̇ ds` for a piecewise-linear path.
///
/// Paths built from knots are absolutely continuous, so the infinite value of
/// the rate function never arises here.
pub fn rate_function(path: &RatePath, curve: &CovarianceCurve) -> Result<f64> {
    if path.dim() != curve.dim() {
        return Err(Error::Dimension(format!(
            "path has {} components, covariance is {}×{}",
            path.dim(),
            curve.dim(),
            curve.dim()
        )));
    }
    let quad = QuadratureConfig::default().with_rel_tol(1e-13);
    let mut total = 0.0;
    for (a, b, slope) in path.segments() {
        if slope.iter().all(|v| *v == 0.0) {
            continue;
        }
        let v = DVector::from_vec(slope);
        for (s0, s1) in pieces(curve, a, b) {
            let (m0, m1) = (curve.matrix_at(s0), curve.matrix_at(s1));
            // λ_min is concave along a segment, so the end points bound it
            check_invertible(&m0)?;
            check_invertible(&m1)?;
            if m0 == m1 {
                total += (s1 - s0) * quadratic_form(&m0, &v)?;
            } else {
                total += simpson(
                    |s| quadratic_form(&curve.matrix_at(s), &v).unwrap_or(f64::NAN),
                    s0,
                    s1,
                    &quad,
                )
                .value;
            }
        }
    }
    Ok(0.5 * total)
}

/// Feedback `φ(x, s) = σ(x)ᵀ u′(s, x)ᵀ M_f(s)⁻¹ ξ̇(s)` attaining the rate.
pub struct OptimalControl {
    path: RatePath,
    curve: CovarianceCurve,
    sols: Vec<PoissonSolution>,
    model: SdeModel,
    rate: f64,
}

/// Builds the optimal feedback for `path`; fails where the rate is undefined.
pub fn optimal_control(
    path: &RatePath,
    sols: &[PoissonSolution],
    curve: &CovarianceCurve,
    model: &SdeModel,
) -> Result<OptimalControl> {
    if model.dim_state != 1 {
        return Err(Error::Dimension("optimal control needs a scalar-state model".into()));
    }
    if sols.is_empty() || sols.iter().any(|s| s.dim_out() != curve.dim()) {
        return Err(Error::Dimension("Poisson solutions must match the covariance dimension".into()));
    }
    if sols.windows(2).any(|w| w[1].time_parameter <= w[0].time_parameter) {
        return Err(Error::InvalidParameter("Poisson solutions must be ordered by time".into()));
    }
    let rate = rate_function(path, curve)?;
    Ok(OptimalControl {
        path: path.clone(),
        curve: curve.clone(),
        sols: sols.to_vec(),
        model: model.clone(),
        rate,
    })
}

impl OptimalControl {
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn dim_noise(&self) -> usize {
        self.model.dim_noise
    }

    /// `u′_l(s, x)`, linear in `s` between solution times.
    fn gradient(&self, l: usize, s: f64, x: f64) -> f64 {
        let sols = &self.sols;
        if sols.len() == 1 || s <= sols[0].time_parameter {
            return sols[0].interpolate_u_prime(l, x);
        }
        let last = sols.len() - 1;
        if s >= sols[last].time_parameter {
            return sols[last].interpolate_u_prime(l, x);
        }
        let k = sols.partition_point(|sol| sol.time_parameter <= s) - 1;
        let (t0, t1) = (sols[k].time_parameter, sols[k + 1].time_parameter);
        let w = (s - t0) / (t1 - t0);
        (1.0 - w) * sols[k].interpolate_u_prime(l, x) + w * sols[k + 1].interpolate_u_prime(l, x)
    }

    fn weights(&self, s: f64) -> DVector<f64> {
        let v = DVector::from_vec(self.path.slope_at(s));
        if v.iter().all(|x| *x == 0.0) {
            return v;
        }
        let m = self.curve.matrix_at(s);
        m.cholesky().map(|c| c.solve(&v)).unwrap_or_else(|| v.map(|_| f64::NAN))
    }

    fn apply(&self, w: &DVector<f64>, x: f64, s: f64, out: &mut [f64]) {
        let c: f64 = w.iter().enumerate().map(|(l, wl)| self.gradient(l, s, x) * wl).sum();
        let row = self.model.diffusion_row_1d(x);
        for (o, sj) in out.iter_mut().zip(row) {
            *o = sj * c;
        }
    }

    /// Writes `φ(x, s)` (length `m`) into `out`.
    pub fn phi_into(&self, x: f64, s: f64, out: &mut [f64]) {
        let w = self.weights(s);
        self.apply(&w, x, s, out);
    }

    pub fn phi(&self, x: f64, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.model.dim_noise];
        self.phi_into(x, s, &mut out);
        out
    }

    /// `∫_0^T ∫ ‖φ(x, s)‖² π(dx) ds` by direct quadrature.
    pub fn l2_cost(&self, pi: &InvariantDensity1D, quad: &QuadratureConfig) -> f64 {
        let space = |s: f64| {
            let w = self.weights(s);
            if w.iter().all(|v| *v == 0.0) {
                return 0.0;
            }
            let m = self.model.dim_noise;
            integrate(
                |x| {
                    let p = pi.density(x);
                    if p == 0.0 {
                        return 0.0;
                    }
                    let mut local = vec![0.0; m];
                    self.apply(&w, x, s, &mut local);
                    local.iter().map(|v| v * v).sum::<f64>() * p
                },
                pi.support(),
                pi.anchor(),
                quad,
            )
            .value
        };
        let homogeneous = self.sols.len() == 1;
        let outer = quad.with_rel_tol(1e-9);
        let mut total = 0.0;
        for (a, b, _) in self.path.segments() {
            for (s0, s1) in pieces(&self.curve, a, b) {
                if homogeneous && self.curve.matrix_at(s0) == self.curve.matrix_at(s1) {
                    total += (s1 - s0) * space(0.5 * (s0 + s1));
                } else {
                    total += simpson(space, s0, s1, &outer).value;
                }
            }
        }
        total
    }
}
