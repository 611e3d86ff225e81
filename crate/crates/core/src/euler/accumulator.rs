use crate::error::{Error, Result};
use crate::quadrature::{simpson, QuadratureConfig};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Online values of `Ξ_ε(f)` (trapezoid along grid endpoints) and `Ξ^R_ε(f)`
/// (left-endpoint sum).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalAccumulator {
    pub xi_continuous: Vec<f64>,
    pub xi_riemann: Vec<f64>,
    pub sup_norm_seen: f64,
    pub t_current: f64,
    pub steps: u64,
}

impl FunctionalAccumulator {
    pub fn new(dim_out: usize) -> Self {
        Self {
            xi_continuous: vec![0.0; dim_out],
            xi_riemann: vec![0.0; dim_out],
            sup_norm_seen: 0.0,
            t_current: 0.0,
            steps: 0,
        }
    }

    /// Adds one grid cell given `f` at its left and right endpoints.
    #[inline]
    pub fn push_step(&mut self, f_left: &[f64], f_right: &[f64], delta: f64) {
        let half = 0.5 * delta;
        let norm = if self.xi_continuous.len() == 1 {
            self.xi_continuous[0] += half * (f_left[0] + f_right[0]);
            self.xi_riemann[0] += f_left[0] * delta;
            self.xi_continuous[0].abs()
        } else {
            let mut sq = 0.0;
            for l in 0..self.xi_continuous.len() {
                self.xi_continuous[l] += half * (f_left[l] + f_right[l]);
                self.xi_riemann[l] += f_left[l] * delta;
                sq += self.xi_continuous[l] * self.xi_continuous[l];
            }
            sq.sqrt()
        };
        if norm > self.sup_norm_seen {
            self.sup_norm_seen = norm;
        }
        self.steps += 1;
        self.t_current = self.steps as f64 * delta;
    }

    pub fn continuous_norm(&self) -> f64 {
        self.xi_continuous.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub type ControlFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

/// Deterministic control `ψ : [0, T] → ℝ^m` with `∫₀^T ‖ψ‖² ≤ M`.
#[derive(Clone)]
pub struct ControlFunction {
    psi: ControlFn,
    pub dim: usize,
    pub horizon: f64,
    pub l2_bound: f64,
    pub l2_norm_sq: f64,
}

impl fmt::Debug for ControlFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlFunction")
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("l2_bound", &self.l2_bound)
            .field("l2_norm_sq", &self.l2_norm_sq)
            .finish()
    }
}

impl ControlFunction {
    /// Fails with [`Error::ControlBound`] when the integrated `‖ψ‖²` exceeds `l2_bound`.
    pub fn new(dim: usize, psi: ControlFn, horizon: f64, l2_bound: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("control horizon must be positive, got {horizon}")));
        }
        let norm = simpson(
            |s| {
                let mut buf = vec![0.0; dim];
                psi(s, &mut buf);
                buf.iter().map(|v| v * v).sum()
            },
            0.0,
            horizon,
            &QuadratureConfig::default().with_rel_tol(1e-10),
        );
        if !norm.value.is_finite() || norm.value > l2_bound + 1e-8 * (1.0 + l2_bound) {
            return Err(Error::ControlBound {
                norm: norm.value,
                bound: l2_bound,
            });
        }
        Ok(Self {
            psi,
            dim,
            horizon,
            l2_bound,
            l2_norm_sq: norm.value,
        })
    }

    pub fn constant(value: Vec<f64>, horizon: f64, l2_bound: f64) -> Result<Self> {
        let dim = value.len();
        Self::new(dim, Arc::new(move |_, out| out.copy_from_slice(&value)), horizon, l2_bound)
    }

    pub fn zero(dim: usize, horizon: f64) -> Self {
        Self::new(dim, Arc::new(|_, out| out.fill(0.0)), horizon, 0.0).expect("zero control")
    }

    #[inline]
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        (self.psi)(t, out)
    }
}
