//! Diffusion models `dX = b(X)dt + σ(X)dW`, their structural-condition audits,
//! one-dimensional invariant densities and test functionals.

mod builtin;
mod conditions;
mod density;
mod functional;
mod poly;

pub use builtin::{builtin_model, BuiltinFamily, ModelParams};
pub use conditions::{default_probe_grid, validate_conditions, ConditionCheck, ConditionKind, ConditionReport};
pub use density::{invariant_density_1d, InverseCdfTable, InvariantDensity1D};
pub use functional::{centralize, FunctionalSpec, GrowthFit};
pub use poly::Polynomial;

use crate::error::{Error, Result};
use crate::quadrature::Interval;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

/// Writes `b(x)` (length `d`) or `σ(x)` (row-major `d × m`) into the output slice.
pub type CoefficientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A diffusion with the regularity metadata the error laws depend on.
///
/// For models flagged with a log transform (Gompertz) the coefficients
/// describe the process in its natural coordinates while simulation runs the
/// induced process in `y = ln x`; see [`SdeModel::simulation_model`].
#[derive(Clone)]
pub struct SdeModel {
    pub label: String,
    pub dim_state: usize,
    pub dim_noise: usize,
    drift: CoefficientFn,
    diffusion: CoefficientFn,
    pub recurrence_alpha: f64,
    pub recurrence_gamma: f64,
    pub recurrence_radius: f64,
    /// Declared `(λ₁, λ₂)`; `None` when the diffusion degenerates on the boundary.
    pub ellipticity_bounds: Option<(f64, f64)>,
    pub holder_nu: f64,
    pub drift_growth_alpha_bar: f64,
    pub initial_state: Vec<f64>,
    /// State space of a one-dimensional model.
    pub support: Interval,
    /// Family parameters echoed into reports.
    pub params: BTreeMap<String, f64>,
    /// Constant diffusion coefficient (enables the relaxed second-derivative audit).
    pub constant_diffusion: bool,
    log_space: Option<Arc<SdeModel>>,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("label", &self.label)
            .field("dim_state", &self.dim_state)
            .field("dim_noise", &self.dim_noise)
            .field("alpha", &self.recurrence_alpha)
            .field("gamma", &self.recurrence_gamma)
            .field("radius", &self.recurrence_radius)
            .field("nu", &self.holder_nu)
            .field("log_transformed", &self.log_space.is_some())
            .finish()
    }
}

impl SdeModel {
    /// A model with neutral metadata (`α = 1`, `γ = 1`, `B = 0`, `ν = 1`, `ᾱ = 1`),
    /// started at the origin on the full space.
    pub fn new(
        label: impl Into<String>,
        dim_state: usize,
        dim_noise: usize,
        drift: CoefficientFn,
        diffusion: CoefficientFn,
    ) -> Self {
        Self {
            label: label.into(),
            dim_state,
            dim_noise,
            drift,
            diffusion,
            recurrence_alpha: 1.0,
            recurrence_gamma: 1.0,
            recurrence_radius: 0.0,
            ellipticity_bounds: None,
            holder_nu: 1.0,
            drift_growth_alpha_bar: 1.0,
            initial_state: vec![0.0; dim_state],
            support: Interval::REAL_LINE,
            params: BTreeMap::new(),
            constant_diffusion: false,
            log_space: None,
        }
    }

    /// Scalar model from plain closures `b(x)` and `σ(x)`.
    pub fn scalar<B, S>(label: impl Into<String>, drift: B, diffusion: S) -> Self
    where
        B: Fn(f64) -> f64 + Send + Sync + 'static,
        S: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(
            label,
            1,
            1,
            Arc::new(move |x, out| out[0] = drift(x[0])),
            Arc::new(move |x, out| out[0] = diffusion(x[0])),
        )
    }

    /// Scalar model whose coefficients are polynomials in `x`.
    pub fn polynomial(drift: Polynomial, diffusion: Polynomial) -> Self {
        let label = format!("custom(b = {drift}, sigma = {diffusion})");
        let constant = diffusion.degree().unwrap_or(0) == 0;
        let mut m = Self::scalar(label, move |x| drift.eval(x), move |x| diffusion.eval(x));
        m.constant_diffusion = constant;
        m
    }

    pub fn with_recurrence(mut self, alpha: f64, gamma: f64, radius: f64) -> Self {
        self.recurrence_alpha = alpha;
        self.recurrence_gamma = gamma;
        self.recurrence_radius = radius;
        self
    }

    pub fn with_ellipticity(mut self, lower: f64, upper: f64) -> Self {
        self.ellipticity_bounds = Some((lower, upper));
        self
    }

    pub fn with_holder(mut self, nu: f64) -> Self {
        self.holder_nu = nu;
        self
    }

    pub fn with_alpha_bar(mut self, alpha_bar: f64) -> Self {
        self.drift_growth_alpha_bar = alpha_bar;
        self
    }

    pub fn with_initial_state(mut self, x0: Vec<f64>) -> Self {
        self.initial_state = x0;
        self
    }

    pub fn with_support(mut self, support: Interval) -> Self {
        self.support = support;
        self
    }

    pub fn with_constant_diffusion(mut self, constant: bool) -> Self {
        self.constant_diffusion = constant;
        self
    }

    /// Simulate this model through `x = exp(y)` with `inner` the dynamics of `y`.
    pub fn with_log_transform(mut self, inner: SdeModel) -> Self {
        self.log_space = Some(Arc::new(inner));
        self
    }

    /// Checks the metadata ranges the schedule conditions rely on.
    pub fn check_metadata(&self) -> Result<()> {
        if self.dim_state == 0 || self.dim_noise == 0 {
            return Err(Error::InvalidParameter("dimensions must be positive".into()));
        }
        if self.initial_state.len() != self.dim_state {
            return Err(Error::Dimension(format!(
                "initial state has length {}, model dimension is {}",
                self.initial_state.len(),
                self.dim_state
            )));
        }
        if !(self.holder_nu > 0.0 && self.holder_nu <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "Hölder exponent nu must lie in (0, 1], got {}",
                self.holder_nu
            )));
        }
        if !(self.recurrence_alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "recurrence exponent alpha must be >= 0, got {}",
                self.recurrence_alpha
            )));
        }
        if !(self.recurrence_gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "recurrence constant gamma must be > 0, got {}",
                self.recurrence_gamma
            )));
        }
        if !(self.recurrence_radius >= 0.0) {
            return Err(Error::InvalidParameter("recurrence radius B must be >= 0".into()));
        }
        let cap = self.recurrence_alpha.min(1.0);
        if self.drift_growth_alpha_bar > cap + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "drift growth exponent alpha_bar = {} exceeds min(alpha, 1) = {cap}",
                self.drift_growth_alpha_bar
            )));
        }
        if let Some((l1, l2)) = self.ellipticity_bounds {
            if !(l1 > 0.0 && l1 <= l2) {
                return Err(Error::InvalidParameter(format!(
                    "ellipticity bounds need 0 < lambda1 <= lambda2, got ({l1}, {l2})"
                )));
            }
        }
        Ok(())
    }

    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn diffusion_into(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }

    pub fn drift_fn(&self) -> &CoefficientFn {
        &self.drift
    }

    pub fn diffusion_fn(&self) -> &CoefficientFn {
        &self.diffusion
    }

    /// `b(x)` for a scalar model.
    pub fn drift_1d(&self, x: f64) -> f64 {
        let mut out = [0.0];
        (self.drift)(&[x], &mut out);
        out[0]
    }

    /// Row `σ(x)` (length `m`) for a scalar-state model.
    pub fn diffusion_row_1d(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_noise];
        (self.diffusion)(&[x], &mut out);
        out
    }

    /// `a(x) = σ(x)σ(x)ᵀ` for a scalar-state model.
    pub fn a_1d(&self, x: f64) -> f64 {
        if self.dim_noise == 1 {
            let mut out = [0.0];
            (self.diffusion)(&[x], &mut out);
            out[0] * out[0]
        } else {
            self.diffusion_row_1d(x).iter().map(|s| s * s).sum()
        }
    }

    pub fn is_log_transformed(&self) -> bool {
        self.log_space.is_some()
    }

    /// The dynamics the Euler scheme actually integrates.
    pub fn simulation_model(&self) -> &SdeModel {
        self.log_space.as_deref().unwrap_or(self)
    }

    /// Maps a natural-coordinate state into simulation coordinates.
    pub fn to_simulation_state(&self, x: &[f64]) -> Vec<f64> {
        if self.log_space.is_some() {
            x.iter().map(|v| v.ln()).collect()
        } else {
            x.to_vec()
        }
    }

    /// Maps a simulation-coordinate state back to natural coordinates.
    pub fn from_simulation_state(&self, z: &[f64], out: &mut [f64]) {
        if self.log_space.is_some() {
            for (o, v) in out.iter_mut().zip(z) {
                *o = v.exp();
            }
        } else {
            out.copy_from_slice(z);
        }
    }
}
