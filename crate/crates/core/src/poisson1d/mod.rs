//! One-dimensional Poisson equation `(a/2)u″ + b u′ = −f` for a centred `f`.
//!
//! `u′` is evaluated in the scaled form
//! `u′(x) = (2/a(x)) ∫_x^∞ f(y) π(y)/π(x) dy` to the right of the density
//! mode and `u′(x) = −(2/a(x)) ∫_{lo}^x f(y) π(y)/π(x) dy` to its left, so
//! every integral only sees density ratios below one.

mod exponents;

pub use exponents::{
    audit_mdp_exponents, audit_mdp_exponents_with_slack, fit_tail_exponents, general_growth_exponents,
    ExponentAudit, InequalityCheck, MdpExponents, TailExponents, EXPONENT_FLOOR, FITTED_SLACK,
    MIN_TAIL_POINTS,
};

use crate::error::{Error, Result};
use crate::model::{FunctionalSpec, InvariantDensity1D, SdeModel};
use crate::quadrature::{integrate_from_neg_infinity, integrate_to_infinity, simpson, Interval, QuadratureConfig};
use log::warn;
use std::path::Path;

/// Grid points where `a·π` falls below this are dropped.
const UNDERFLOW_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone)]
pub struct PoissonSolution {
    pub grid: Vec<f64>,
    /// `u[l][k]` is component `l` at `grid[k]`.
    pub u: Vec<Vec<f64>>,
    pub u_prime: Vec<Vec<f64>>,
    pub u_double_prime: Vec<Vec<f64>>,
    pub fitted_exponents: Option<TailExponents>,
    /// Tail exponent of `|b/a|`, when enough grid points allow a fit.
    pub drift_ratio_exponent: Option<f64>,
    pub time_parameter: f64,
    pub anchor: f64,
    pub support: Interval,
    pub dropped: Vec<f64>,
}

impl PoissonSolution {
    pub fn dim_out(&self) -> usize {
        self.u.len()
    }

    fn cell(&self, x: f64) -> usize {
        let k = self.grid.partition_point(|&g| g <= x);
        k.clamp(1, self.grid.len() - 1) - 1
    }

    /// `u′(x)` by cubic Hermite interpolation of the nodal `u′` and `u″`;
    /// constant extension outside the grid.
    pub fn interpolate_u_prime(&self, l: usize, x: f64) -> f64 {
        let g = &self.grid;
        if x <= g[0] {
            return self.u_prime[l][0];
        }
        if x >= g[g.len() - 1] {
            return self.u_prime[l][g.len() - 1];
        }
        let k = self.cell(x);
        let h = g[k + 1] - g[k];
        let s = (x - g[k]) / h;
        let (y0, y1) = (self.u_prime[l][k], self.u_prime[l][k + 1]);
        let (d0, d1) = (self.u_double_prime[l][k], self.u_double_prime[l][k + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * h * d0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * h * d1
    }

    /// Max over grid points of `|(a/2)u″ + b u′ + f|` with the stored `u″`.
    pub fn identity_residual(&self, model: &SdeModel, f: &FunctionalSpec) -> f64 {
        let mut worst: f64 = 0.0;
        for (k, &x) in self.grid.iter().enumerate() {
            let fx = f.eval(self.time_parameter, &[x]);
            for l in 0..self.dim_out() {
                let r = 0.5 * model.a_1d(x) * self.u_double_prime[l][k]
                    + model.drift_1d(x) * self.u_prime[l][k]
                    + fx[l];
                worst = worst.max(r.abs());
            }
        }
        worst
    }

    /// CSV with columns `x, u_1, u_prime_1, u_dprime_1, …`.
    pub fn write_csv<W: std::io::Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["x".to_string()];
        for l in 1..=self.dim_out() {
            header.push(format!("u_{l}"));
            header.push(format!("u_prime_{l}"));
            header.push(format!("u_dprime_{l}"));
        }
        w.write_record(&header)?;
        for (k, x) in self.grid.iter().enumerate() {
            let mut row = vec![x.to_string()];
            for l in 0..self.dim_out() {
                row.push(self.u[l][k].to_string());
                row.push(self.u_prime[l][k].to_string());
                row.push(self.u_double_prime[l][k].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Pointwise access to the two integral forms of `u′`, independent of any grid.
pub struct PoissonProblem<'a> {
    pub model: &'a SdeModel,
    pub pi: &'a InvariantDensity1D,
    pub f: &'a FunctionalSpec,
    pub t: f64,
    pub quad: QuadratureConfig,
}

impl<'a> PoissonProblem<'a> {
    pub fn new(model: &'a SdeModel, pi: &'a InvariantDensity1D, f: &'a FunctionalSpec, t: f64) -> Self {
        let mut quad = *pi.quadrature();
        if quad.rel_tol == 0.0 {
            quad = quad.with_rel_tol(1e-12);
        }
        Self {
            model,
            pi,
            f,
            t,
            quad,
        }
    }

    fn f_at(&self, l: usize, y: f64) -> f64 {
        self.f.eval(self.t, &[y])[l]
    }

    /// `∫_x^{x'} f_l(y) π(y)/π(x) dy`.
    fn weighted(&self, l: usize, x: f64, from: f64, to: f64) -> f64 {
        simpson(|y| self.ratio_term(l, x, y), from, to, &self.quad).value
    }

    fn ratio_term(&self, l: usize, x: f64, y: f64) -> f64 {
        let w = self.pi.log_ratio(x, y).exp();
        if w == 0.0 || !w.is_finite() {
            return 0.0;
        }
        self.f_at(l, y) * w
    }

    /// `∫_x^{hi} f_l(y) π(y)/π(x) dy`.
    fn right_tail(&self, l: usize, x: f64) -> f64 {
        let hi = self.pi.support().hi;
        if hi == f64::INFINITY {
            integrate_to_infinity(|y| self.ratio_term(l, x, y), x, &self.quad).value
        } else {
            self.weighted(l, x, x, hi)
        }
    }

    /// `∫_{lo}^x f_l(y) π(y)/π(x) dy`.
    fn left_tail(&self, l: usize, x: f64) -> f64 {
        let lo = self.pi.support().lo;
        if lo == f64::NEG_INFINITY {
            integrate_from_neg_infinity(|y| self.ratio_term(l, x, y), x, &self.quad).value
        } else {
            self.weighted(l, x, lo, x)
        }
    }

    /// `u′` from the right-tail integral.
    pub fn u_prime_right(&self, l: usize, x: f64) -> f64 {
        2.0 / self.model.a_1d(x) * self.right_tail(l, x)
    }

    /// `u′` from the left-tail integral.
    pub fn u_prime_left(&self, l: usize, x: f64) -> f64 {
        -2.0 / self.model.a_1d(x) * self.left_tail(l, x)
    }

    /// `u′` from whichever form is stable at `x`.
    pub fn u_prime_at(&self, l: usize, x: f64) -> f64 {
        if x >= self.pi.anchor() {
            self.u_prime_right(l, x)
        } else {
            self.u_prime_left(l, x)
        }
    }

    /// `(a/2)u″ + b u′ + f` at `x`, with `u″` from a five-point central
    /// difference of the pointwise `u′` and `u′(x)` supplied by the caller.
    pub fn residual_at(&self, l: usize, x: f64, u_prime: f64) -> f64 {
        let h = 1e-2 * x.abs().max(1.0);
        let d = |s: f64| self.u_prime_at(l, x + s * h);
        let u2 = (-d(2.0) + 8.0 * d(1.0) - 8.0 * d(-1.0) + d(-2.0)) / (12.0 * h);
        0.5 * self.model.a_1d(x) * u2 + self.model.drift_1d(x) * u_prime + self.f_at(l, x)
    }
}

/// Solves the Poisson equation for `f(t, ·)` on `grid`, normalised by
/// `u(anchor) = 0` with the anchor at the density mode.
pub fn solve_poisson_1d(
    model: &SdeModel,
    pi: &InvariantDensity1D,
    f: &FunctionalSpec,
    t: f64,
    grid: &[f64],
) -> Result<PoissonSolution> {
    if model.dim_state != 1 {
        return Err(Error::Dimension(format!(
            "Poisson solver needs a scalar state, model has dimension {}",
            model.dim_state
        )));
    }
    if !f.centralized {
        return Err(Error::Precondition(format!(
            "functional '{}' must be centralized before solving",
            f.label
        )));
    }
    let support = pi.support();
    let mut points: Vec<f64> = Vec::with_capacity(grid.len());
    for &x in grid {
        if !x.is_finite() || !support.contains_interior(x) {
            return Err(Error::InvalidParameter(format!(
                "grid point {x} is outside the support interior ({}, {})",
                support.lo, support.hi
            )));
        }
        points.push(x);
    }
    points.sort_by(|a, b| a.total_cmp(b));
    points.dedup();

    let mut kept = Vec::with_capacity(points.len());
    let mut dropped = Vec::new();
    for x in points {
        let ap = model.a_1d(x) * pi.density(x);
        if ap.is_finite() && ap >= UNDERFLOW_FLOOR {
            kept.push(x);
        } else {
            warn!("dropping grid point {x}: a·π = {ap:e} underflows");
            dropped.push(x);
        }
    }
    if kept.len() < 3 {
        return Err(Error::GridTooSmall(kept.len()));
    }

    let problem = PoissonProblem::new(model, pi, f, t);
    let anchor = pi.anchor();
    let mut nodes = kept.clone();
    let anchor_inserted = match nodes.binary_search_by(|g| g.total_cmp(&anchor)) {
        Ok(_) => false,
        Err(pos) => {
            nodes.insert(pos, anchor);
            true
        }
    };
    let ia = nodes.binary_search_by(|g| g.total_cmp(&anchor)).unwrap();
    let n_nodes = nodes.len();
    let dim = f.dim_out;
    let a: Vec<f64> = nodes.iter().map(|&x| model.a_1d(x)).collect();
    let b: Vec<f64> = nodes.iter().map(|&x| model.drift_1d(x)).collect();
    // density ratio between neighbouring nodes, ln π(x_{k+1}) − ln π(x_k)
    let step_log: Vec<f64> = nodes.windows(2).map(|w| pi.log_ratio(w[0], w[1])).collect();

    let mut u_prime = vec![vec![0.0; n_nodes]; dim];
    let mut u_dd = vec![vec![0.0; n_nodes]; dim];
    let mut u = vec![vec![0.0; n_nodes]; dim];
    for l in 0..dim {
        // right of the anchor: R_k = ∫_{x_k}^{x_{k+1}} + (π_{k+1}/π_k) R_{k+1}
        let mut r = problem.right_tail(l, nodes[n_nodes - 1]);
        u_prime[l][n_nodes - 1] = 2.0 / a[n_nodes - 1] * r;
        for k in (ia..n_nodes - 1).rev() {
            r = problem.weighted(l, nodes[k], nodes[k], nodes[k + 1]) + step_log[k].exp() * r;
            u_prime[l][k] = 2.0 / a[k] * r;
        }
        // left of the anchor: L_{k+1} = (π_k/π_{k+1}) L_k + ∫_{x_k}^{x_{k+1}}
        let mut lt = problem.left_tail(l, nodes[0]);
        if ia > 0 {
            u_prime[l][0] = -2.0 / a[0] * lt;
        }
        for k in 0..ia {
            lt = (-step_log[k]).exp() * lt + problem.weighted(l, nodes[k + 1], nodes[k], nodes[k + 1]);
            if k + 1 < ia {
                u_prime[l][k + 1] = -2.0 / a[k + 1] * lt;
            } else {
                // both forms exist at the anchor; they agree when π(f) = 0
                u_prime[l][ia] = 0.5 * (u_prime[l][ia] + (-2.0 / a[ia] * lt));
            }
        }
        for k in 0..n_nodes {
            let fx = problem.f_at(l, nodes[k]);
            u_dd[l][k] = -2.0 * (fx + b[k] * u_prime[l][k]) / a[k];
        }
        // corrected trapezoid: ∫u′ ≈ h/2 (u′_k + u′_{k+1}) + h²/12 (u″_k − u″_{k+1})
        let incr = |k: usize| {
            let h = nodes[k + 1] - nodes[k];
            0.5 * h * (u_prime[l][k] + u_prime[l][k + 1]) + h * h / 12.0 * (u_dd[l][k] - u_dd[l][k + 1])
        };
        let mut col = vec![0.0; n_nodes];
        for k in ia..n_nodes - 1 {
            col[k + 1] = col[k] + incr(k);
        }
        for k in (0..ia).rev() {
            col[k] = col[k + 1] - incr(k);
        }
        u[l] = col;
    }

    if anchor_inserted {
        for v in u.iter_mut().chain(u_prime.iter_mut()).chain(u_dd.iter_mut()) {
            v.remove(ia);
        }
        nodes.remove(ia);
    }

    let mut sol = PoissonSolution {
        grid: nodes,
        u,
        u_prime,
        u_double_prime: u_dd,
        fitted_exponents: None,
        drift_ratio_exponent: None,
        time_parameter: t,
        anchor,
        support,
        dropped,
    };
    sol.fitted_exponents = fit_tail_exponents(&sol, 0.25).ok();
    sol.drift_ratio_exponent = drift_ratio_exponent(model, &sol);
    if let Some(theta) = sol.drift_ratio_exponent {
        if theta <= -1.0 {
            warn!("fitted tail exponent of |b/a| is {theta:.3} <= -1; growth bounds for u may not apply");
        }
    }
    Ok(sol)
}

/// Tail exponent `θ` in `|b/a| ~ |x|^θ`, fitted like the solution exponents.
fn drift_ratio_exponent(model: &SdeModel, sol: &PoissonSolution) -> Option<f64> {
    let ratio: Vec<f64> = sol
        .grid
        .iter()
        .map(|&x| (model.drift_1d(x) / model.a_1d(x)).abs())
        .collect();
    let probe = PoissonSolution {
        u: vec![ratio.clone()],
        u_prime: vec![ratio.clone()],
        u_double_prime: vec![ratio],
        fitted_exponents: None,
        drift_ratio_exponent: None,
        dropped: Vec::new(),
        ..sol.clone()
    };
    fit_tail_exponents(&probe, 0.25).ok().map(|e| e.p2)
}

/// Uniform grid of `n` points on `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, centralize, invariant_density_1d, BuiltinFamily, ModelParams};

    fn ou_setup() -> (SdeModel, InvariantDensity1D) {
        let m = builtin_model(BuiltinFamily::Ou, ModelParams::new(1.0, 0.0, 2f64.sqrt())).unwrap();
        let pi = invariant_density_1d(&m, m.support, &QuadratureConfig::default()).unwrap();
        (m, pi)
    }

    #[test]
    fn ou_identity_has_unit_derivative() {
        let (m, pi) = ou_setup();
        let f = FunctionalSpec::scalar("x", |x| x).assume_centralized();
        let sol = solve_poisson_1d(&m, &pi, &f, 0.0, &uniform_grid(-4.0, 4.0, 161)).unwrap();
        for k in 0..sol.grid.len() {
            assert!((sol.u_prime[0][k] - 1.0).abs() < 1e-6);
            assert!((sol.u[0][k] - sol.grid[k]).abs() < 1e-6);
            assert!(sol.u_double_prime[0][k].abs() < 1e-5);
        }
    }

    #[test]
    fn cir_centred_identity_has_unit_derivative() {
        let m = builtin_model(BuiltinFamily::Cir, ModelParams::new(1.0, 1.0, 1.0)).unwrap();
        let pi = invariant_density_1d(&m, m.support, &QuadratureConfig::default()).unwrap();
        let f = centralize(&FunctionalSpec::scalar("x", |x| x), &pi, &QuadratureConfig::default()).unwrap();
        let sol = solve_poisson_1d(&m, &pi, &f, 0.0, &uniform_grid(0.05, 8.0, 160)).unwrap();
        let err = sol.u_prime[0].iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "sup error {err}");
    }

    #[test]
    fn zero_functional_gives_constant() {
        let (m, pi) = ou_setup();
        let sol = solve_poisson_1d(&m, &pi, &FunctionalSpec::zero(1), 0.0, &uniform_grid(-3.0, 3.0, 201)).unwrap();
        assert!(sol.u[0].iter().all(|v| *v == 0.0));
        assert!(sol.u_prime[0].iter().all(|v| *v == 0.0));
        let e = sol.fitted_exponents.unwrap();
        assert_eq!(e.p1, f64::NEG_INFINITY);
    }

    #[test]
    fn far_tail_points_are_dropped() {
        let (m, pi) = ou_setup();
        let f = FunctionalSpec::scalar("x", |x| x).assume_centralized();
        let sol = solve_poisson_1d(&m, &pi, &f, 0.0, &[-40.0, -1.0, 0.5, 1.0, 40.0]).unwrap();
        assert_eq!(sol.dropped, vec![-40.0, 40.0]);
        assert_eq!(sol.grid, vec![-1.0, 0.5, 1.0]);
        let err = solve_poisson_1d(&m, &pi, &f, 0.0, &[-40.0, 0.0, 40.0]).unwrap_err();
        assert!(matches!(err, Error::GridTooSmall(1)));
    }

    #[test]
    fn hermite_interpolation_is_exact_for_cubic_derivative() {
        let (m, pi) = ou_setup();
        let f = FunctionalSpec::scalar("H4", |x| x.powi(4) - 6.0 * x * x + 3.0).assume_centralized();
        let sol = solve_poisson_1d(&m, &pi, &f, 0.0, &uniform_grid(-3.0, 3.0, 13)).unwrap();
        for x in [-2.7, -0.1, 0.33, 1.9] {
            let exact = x * x * x - 3.0 * x;
            assert!((sol.interpolate_u_prime(0, x) - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn csv_layout() {
        let (m, pi) = ou_setup();
        let f = FunctionalSpec::scalar("x", |x| x).assume_centralized();
        let sol = solve_poisson_1d(&m, &pi, &f, 0.0, &[-1.0, 0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "x,u_1,u_prime_1,u_dprime_1");
        assert_eq!(lines.count(), 3);
    }
}
