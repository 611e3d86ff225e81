use super::{InvariantDensity1D, Polynomial};
use crate::error::{Error, Result};
use crate::quadrature::QuadratureConfig;
use std::fmt;
use std::sync::Arc;

pub type SpatialFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type ModulationFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A test function `f(t, x) = m(t) · (g(x) − c)` with values in `ℝⁿ`.
///
/// `m` is an optional scalar time modulation (absent for homogeneous
/// functionals) and `c` the centring offset subtracted by [`centralize`].
#[derive(Clone)]
pub struct FunctionalSpec {
    pub label: String,
    pub dim_out: usize,
    spatial: SpatialFn,
    modulation: Option<ModulationFn>,
    offset: Vec<f64>,
    pub growth_p0: f64,
    pub modulus_q0: f64,
    pub centralized: bool,
}

impl fmt::Debug for FunctionalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionalSpec")
            .field("label", &self.label)
            .field("dim_out", &self.dim_out)
            .field("offset", &self.offset)
            .field("time_homogeneous", &self.time_homogeneous())
            .field("centralized", &self.centralized)
            .finish()
    }
}

/// Result of the sampled growth check `sup_t |f(t,x)| ≤ C (1 + |x|)^p0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthFit {
    pub least_squares_constant: f64,
    pub required_constant: f64,
    pub median_ratio: f64,
    pub passed: bool,
}

impl FunctionalSpec {
    pub fn new(label: impl Into<String>, dim_out: usize, spatial: SpatialFn) -> Self {
        Self {
            label: label.into(),
            dim_out,
            spatial,
            modulation: None,
            offset: vec![0.0; dim_out],
            growth_p0: 0.0,
            modulus_q0: 0.0,
            centralized: false,
        }
    }

    /// Homogeneous scalar functional of a scalar state.
    pub fn scalar<G>(label: impl Into<String>, g: G) -> Self
    where
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(label, 1, Arc::new(move |x, out| out[0] = g(x[0])))
    }

    pub fn polynomial(p: Polynomial) -> Self {
        let p0 = p.degree().unwrap_or(0) as f64;
        Self::scalar(format!("f(x) = {p}"), move |x| p.eval(x)).with_growth(p0, 0.0)
    }

    pub fn zero(dim_out: usize) -> Self {
        let mut f = Self::new("f = 0", dim_out, Arc::new(|_, out| out.fill(0.0)));
        f.centralized = true;
        f
    }

    /// Marks the functional as centred without integrating, for cases where
    /// `π(f) = 0` is known analytically.
    pub fn assume_centralized(mut self) -> Self {
        self.centralized = true;
        self
    }

    pub fn with_growth(mut self, p0: f64, q0: f64) -> Self {
        self.growth_p0 = p0;
        self.modulus_q0 = q0;
        self
    }

    pub fn with_modulation<M>(mut self, m: M) -> Self
    where
        M: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.modulation = Some(Arc::new(m));
        self
    }

    /// Multiplies the functional by a constant.
    pub fn scaled(&self, c: f64) -> Self {
        let inner = self.spatial.clone();
        let mut out = self.clone();
        out.spatial = Arc::new(move |x, o| {
            inner(x, o);
            for v in o.iter_mut() {
                *v *= c;
            }
        });
        out.offset = self.offset.iter().map(|v| v * c).collect();
        out.label = format!("{c} * ({})", self.label);
        out
    }

    /// Fixes the time argument, yielding a homogeneous functional.
    pub fn at_time(&self, t: f64) -> Self {
        let factor = self.modulation_at(t);
        let mut out = self.scaled(factor);
        out.modulation = None;
        out.label = format!("{} @ t={t}", self.label);
        out
    }

    pub fn time_homogeneous(&self) -> bool {
        self.modulation.is_none()
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    #[inline]
    pub fn modulation_at(&self, t: f64) -> f64 {
        self.modulation.as_ref().map_or(1.0, |m| m(t))
    }

    /// Writes `f(t, x)` into `out`.
    #[inline]
    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.spatial)(x, out);
        let m = self.modulation_at(t);
        for (o, c) in out.iter_mut().zip(&self.offset) {
            *o = m * (*o - c);
        }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_out];
        self.eval_into(t, x, &mut out);
        out
    }

    /// Component `l` of `f(t, ·)` at a scalar state.
    pub fn eval_scalar(&self, t: f64, x: f64, l: usize) -> f64 {
        self.eval(t, &[x])[l]
    }

    /// Sampled check of `sup_{t≤T} |f(t,x)| ≤ C (1+|x|)^p0` over `probes`
    /// and a uniform set of probe times; the constant is fitted.
    pub fn growth_check(&self, probes: &[Vec<f64>], horizon: f64) -> GrowthFit {
        let times: Vec<f64> = if self.time_homogeneous() {
            vec![0.0]
        } else {
            (0..=16).map(|k| horizon * k as f64 / 16.0).collect()
        };
        let mut ratios = Vec::with_capacity(probes.len());
        let (mut num, mut den) = (0.0, 0.0);
        for x in probes {
            let sup = times
                .iter()
                .map(|&t| self.eval(t, x).iter().map(|v| v * v).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let w = (1.0 + r).powf(self.growth_p0);
            num += sup * w;
            den += w * w;
            ratios.push(sup / w);
        }
        let required = ratios.iter().cloned().fold(0.0, f64::max);
        ratios.sort_by(|a, b| a.total_cmp(b));
        let median_ratio = ratios.get(ratios.len() / 2).copied().unwrap_or(0.0);
        GrowthFit {
            least_squares_constant: if den > 0.0 { num / den } else { 0.0 },
            required_constant: required,
            median_ratio,
            passed: required.is_finite() && (required == 0.0 || required <= 10.0 * median_ratio),
        }
    }

    /// `π(f(t,·))` per component.
    pub fn pi_mean(&self, pi: &InvariantDensity1D, t: f64, quad: &QuadratureConfig) -> Result<Vec<f64>> {
        let m = self.modulation_at(t);
        let spatial = self.spatial_means(pi, quad)?;
        Ok(spatial
            .iter()
            .zip(&self.offset)
            .map(|(g, c)| m * (g - c))
            .collect())
    }

    fn spatial_means(&self, pi: &InvariantDensity1D, quad: &QuadratureConfig) -> Result<Vec<f64>> {
        (0..self.dim_out)
            .map(|l| {
                let est = crate::quadrature::integrate(
                    |z| {
                        let p = pi.density(z);
                        if p == 0.0 {
                            return 0.0;
                        }
                        let mut out = vec![0.0; self.dim_out];
                        (self.spatial)(&[z], &mut out);
                        out[l] * p
                    },
                    pi.support(),
                    pi.anchor(),
                    quad,
                );
                if !est.value.is_finite() || est.error > 1e-6 * (1.0 + est.value.abs()) {
                    Err(Error::NotIntegrable)
                } else {
                    Ok(est.value)
                }
            })
            .collect()
    }
}

/// Subtracts `π(f)` so the returned functional is centred under `pi`.
///
/// For a modulated functional `m(t)g(x)` the offset is `π(g)`, which centres
/// every time slice at once.
pub fn centralize(
    f: &FunctionalSpec,
    pi: &InvariantDensity1D,
    quad: &QuadratureConfig,
) -> Result<FunctionalSpec> {
    let means = f.spatial_means(pi, quad)?;
    let mut out = f.clone();
    out.offset = means;
    out.centralized = true;
    Ok(out)
}
