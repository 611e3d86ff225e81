//! Invariant density of a scalar diffusion,
//! `π(z) = 𝓑 / a(z) · exp(2 ∫_anchor^z b/a dy)`, computed by quadrature.

use super::SdeModel;
use crate::error::{Error, Result};
use crate::quadrature::{integrate, simpson, Interval, QuadratureConfig};

/// Log-density gap at which the sampling table is truncated (`e^-37 ≈ 1e-16`).
const TABLE_LOG_CUTOFF: f64 = 37.0;

#[derive(Clone, Debug)]
pub struct InvariantDensity1D {
    model: SdeModel,
    support: Interval,
    anchor: f64,
    log_anchor_a: f64,
    normalizer: f64,
    quad: QuadratureConfig,
}

impl InvariantDensity1D {
    pub fn support(&self) -> Interval {
        self.support
    }

    /// Reference point of the cumulative log-density integral (the density mode).
    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    /// The constant 𝓑 with `π = 𝓑 · exp(log_unnormalized)`.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn quadrature(&self) -> &QuadratureConfig {
        &self.quad
    }

    pub fn model(&self) -> &SdeModel {
        &self.model
    }

    /// `ln(1/a(z)) + 2∫_anchor^z b/a dy`, shifted so the value at the anchor is 0.
    pub fn log_unnormalized(&self, z: f64) -> f64 {
        if !self.support.contains_interior(z) {
            return f64::NEG_INFINITY;
        }
        self.log_anchor_a + self.log_ratio(self.anchor, z)
    }

    /// `ln π(y) − ln π(x)`, integrated directly between the two points.
    pub fn log_ratio(&self, x: f64, y: f64) -> f64 {
        if x == y {
            return 0.0;
        }
        let m = &self.model;
        let drift_term = simpson(
            |s| 2.0 * m.drift_1d(s) / m.a_1d(s),
            x,
            y,
            &self.quad,
        )
        .value;
        drift_term - (m.a_1d(y) / m.a_1d(x)).ln()
    }

    pub fn log_density(&self, z: f64) -> f64 {
        self.log_unnormalized(z) + self.normalizer.ln()
    }

    pub fn density(&self, z: f64) -> f64 {
        let v = self.log_density(z).exp();
        if v.is_finite() {
            v
        } else {
            0.0
        }
    }

    /// `∫ g dπ`.
    pub fn expectation<G: Fn(f64) -> f64>(&self, g: G) -> crate::quadrature::Estimate {
        integrate(
            |z| {
                let p = self.density(z);
                if p == 0.0 {
                    0.0
                } else {
                    g(z) * p
                }
            },
            self.support,
            self.anchor,
            &self.quad,
        )
    }

    /// Finite window outside which the density is below `e^-37` of its peak.
    pub fn effective_range(&self) -> (f64, f64) {
        let step0 = 1e-3 * self.anchor.abs().max(1.0);
        let walk = |dir: f64, bound: f64| {
            let mut step = step0;
            let mut x = self.anchor;
            loop {
                let next = x + dir * step;
                if (dir < 0.0 && next <= bound) || (dir > 0.0 && next >= bound) {
                    return bound;
                }
                x = next;
                if self.log_unnormalized(x) < -TABLE_LOG_CUTOFF {
                    return x;
                }
                step *= 1.25;
            }
        };
        (walk(-1.0, self.support.lo), walk(1.0, self.support.hi))
    }
}

fn a_prime(model: &SdeModel, x: f64) -> f64 {
    let h = 1e-6 * x.abs().max(1.0);
    (model.a_1d(x + h) - model.a_1d(x - h)) / (2.0 * h)
}

/// Stationary point of `ln π`, i.e. a root of `2b − a'`, found by scanning
/// outward from a start point and bisecting the first `+ → −` sign change.
fn locate_mode(model: &SdeModel, support: Interval) -> Option<f64> {
    let g = |x: f64| 2.0 * model.drift_1d(x) - a_prime(model, x);
    let candidates: Vec<f64> = if support.lo.is_finite() {
        let lo = support.lo;
        let top = if support.hi.is_finite() { support.hi - lo } else { 1e12 };
        let mut v: Vec<f64> = (-40..=40)
            .map(|k| lo + 2f64.powi(k))
            .filter(|&x| x - lo < top)
            .collect();
        v.dedup();
        v
    } else {
        let mut v: Vec<f64> = (0..=40).rev().map(|k| -(2f64.powi(k - 10))).collect();
        v.push(0.0);
        v.extend((0..=40).map(|k| 2f64.powi(k - 10)));
        v
    };
    let mut prev: Option<(f64, f64)> = None;
    for x in candidates {
        let gx = g(x);
        if !gx.is_finite() {
            continue;
        }
        if gx == 0.0 {
            return Some(x);
        }
        if let Some((px, pg)) = prev {
            if pg > 0.0 && gx < 0.0 {
                let (mut lo, mut hi) = (px, x);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid == lo || mid == hi {
                        break;
                    }
                    if g(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return Some(0.5 * (lo + hi));
            }
        }
        prev = Some((x, gx));
    }
    None
}

/// Builds `π` for a scalar model on `support`.
///
/// The anchor of the cumulative integral is the density mode (it coincides
/// with the origin for the centred full-line families).
pub fn invariant_density_1d(
    model: &SdeModel,
    support: Interval,
    quad: &QuadratureConfig,
) -> Result<InvariantDensity1D> {
    if model.dim_state != 1 {
        return Err(Error::Dimension(format!(
            "invariant density needs a scalar state, model has dimension {}",
            model.dim_state
        )));
    }
    let anchor = match locate_mode(model, support) {
        Some(m) => m,
        None if support.is_full_line() => 0.0,
        None => return Err(Error::NotPositiveRecurrent),
    };
    let a0 = model.a_1d(anchor);
    if !(a0 > 0.0 && a0.is_finite()) {
        return Err(Error::Precondition(format!(
            "a(z) must be positive on the support interior, a({anchor}) = {a0}"
        )));
    }
    let mut pi = InvariantDensity1D {
        model: model.clone(),
        support,
        anchor,
        log_anchor_a: -a0.ln(),
        normalizer: 1.0,
        quad: *quad,
    };
    let total = integrate(
        |z| {
            let v = pi.log_unnormalized(z).exp();
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        },
        support,
        anchor,
        quad,
    );
    if !total.value.is_finite() || total.value <= 0.0 || total.value > 1e250 || total.error > 1e-3 * total.value
    {
        return Err(Error::NotPositiveRecurrent);
    }
    pi.normalizer = 1.0 / total.value;
    Ok(pi)
}

/// Piecewise-linear inverse CDF of a density on a fine uniform table, used to
/// draw stationary starting points.
#[derive(Debug, Clone)]
pub struct InverseCdfTable {
    nodes: Vec<f64>,
    cdf: Vec<f64>,
}

impl InverseCdfTable {
    pub fn build(pi: &InvariantDensity1D, cells: usize) -> Self {
        let cells = cells.max(16);
        let (lo, hi) = pi.effective_range();
        let h = (hi - lo) / cells as f64;
        let nodes: Vec<f64> = (0..=cells).map(|k| lo + h * k as f64).collect();
        let dens: Vec<f64> = nodes.iter().map(|&x| pi.density(x)).collect();
        let mut cdf = Vec::with_capacity(cells + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for k in 0..cells {
            let mid = pi.density(nodes[k] + 0.5 * h);
            acc += h / 6.0 * (dens[k] + 4.0 * mid + dens[k + 1]);
            cdf.push(acc);
        }
        for c in cdf.iter_mut() {
            *c /= acc;
        }
        Self { nodes, cdf }
    }

    /// Quantile at level `u ∈ [0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let w = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.nodes[k - 1] + w.clamp(0.0, 1.0) * (self.nodes[k] - self.nodes[k - 1])
    }
}
