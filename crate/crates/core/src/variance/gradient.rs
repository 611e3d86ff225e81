use super::{CovarianceCurve, CovarianceRoute};
use crate::error::{Error, Result};
use crate::model::{InvariantDensity1D, SdeModel};
use crate::poisson1d::PoissonSolution;
use crate::quadrature::{integrate_from_neg_infinity, integrate_to_infinity, simpson, QuadratureConfig};
use nalgebra::DMatrix;

/// Largest admissible ratio of the extrapolated tail mass to the grid integral.
pub const TAIL_TOLERANCE: f64 = 0.01;

/// `M_f(t) = ∫ u′ a u′ᵀ dπ` for each solution, integrating the Hermite
/// interpolant of `u′` over the grid and a power-law envelope beyond it.
pub fn mf_gradient_form(
    sols: &[PoissonSolution],
    model: &SdeModel,
    pi: &InvariantDensity1D,
    quad: &QuadratureConfig,
) -> Result<CovarianceCurve> {
    if sols.is_empty() {
        return Err(Error::InvalidParameter("no Poisson solutions supplied".into()));
    }
    if model.dim_state != 1 {
        return Err(Error::Dimension("gradient form needs a scalar-state model".into()));
    }
    let mut times = Vec::with_capacity(sols.len());
    let mut mats = Vec::with_capacity(sols.len());
    for sol in sols {
        times.push(sol.time_parameter);
        mats.push(covariance_at(sol, model, pi, quad)?);
    }
    CovarianceCurve::new(times, mats, CovarianceRoute::GradientForm)
}

fn covariance_at(
    sol: &PoissonSolution,
    model: &SdeModel,
    pi: &InvariantDensity1D,
    quad: &QuadratureConfig,
) -> Result<DMatrix<f64>> {
    let n = sol.dim_out();
    let g = &sol.grid;
    let weight = |x: f64| model.a_1d(x) * pi.density(x);
    let mut bulk = DMatrix::zeros(n, n);
    let mut tail = DMatrix::zeros(n, n);
    let mut tail_abs = 0.0;

    let growth = sol
        .fitted_exponents
        .map(|e| if e.p2.is_finite() { e.p2.max(0.0) } else { 0.0 })
        .unwrap_or(0.0);
    let (x_lo, x_hi) = (g[0], g[g.len() - 1]);
    let support = pi.support();
    let envelope = |x: f64, edge: f64| ((1.0 + x.abs()) / (1.0 + edge.abs())).powf(2.0 * growth) * weight(x);
    let right_mass = if support.hi == f64::INFINITY {
        integrate_to_infinity(|x| envelope(x, x_hi), x_hi, quad).value
    } else {
        simpson(|x| envelope(x, x_hi), x_hi, support.hi, quad).value
    };
    let left_mass = if support.lo == f64::NEG_INFINITY {
        integrate_from_neg_infinity(|x| envelope(x, x_lo), x_lo, quad).value
    } else {
        simpson(|x| envelope(x, x_lo), support.lo, x_lo, quad).value
    };

    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for k in 0..g.len() - 1 {
                acc += simpson(
                    |x| sol.interpolate_u_prime(i, x) * sol.interpolate_u_prime(j, x) * weight(x),
                    g[k],
                    g[k + 1],
                    quad,
                )
                .value;
            }
            bulk[(i, j)] = acc;
            bulk[(j, i)] = acc;
            let last = g.len() - 1;
            let t = sol.u_prime[i][last] * sol.u_prime[j][last] * right_mass
                + sol.u_prime[i][0] * sol.u_prime[j][0] * left_mass;
            tail[(i, j)] = t;
            tail[(j, i)] = t;
            if i == j {
                tail_abs += t.abs();
            }
        }
    }
    let bulk_scale = bulk.trace().abs();
    if tail_abs > TAIL_TOLERANCE * bulk_scale {
        return Err(Error::GridTooNarrow {
            tail: tail_abs,
            bulk: bulk_scale,
        });
    }
    Ok(bulk + tail)
}
