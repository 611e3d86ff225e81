use super::SdeModel;
use crate::error::{Error, Result};
use crate::quadrature::Interval;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BuiltinFamily {
    /// `dX = κ(μ − X)dt + σ dW`
    Ou,
    /// `dX = κ(μ − X)dt + σ√X dW`
    Cir,
    /// `dX = κ(μ − ln X)X dt + σX dW`, simulated through `Y = ln X`
    Gompertz,
    /// `dX = −κ sign(X)|X|^α dt + σ dW`
    PowerDrift,
}

impl FromStr for BuiltinFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "OU" | "ORNSTEIN_UHLENBECK" => Ok(Self::Ou),
            "CIR" => Ok(Self::Cir),
            "GOMPERTZ" => Ok(Self::Gompertz),
            "POWER_DRIFT" => Ok(Self::PowerDrift),
            other => Err(Error::InvalidParameter(format!("unknown model family '{other}'"))),
        }
    }
}

impl std::fmt::Display for BuiltinFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Ou => "OU",
            Self::Cir => "CIR",
            Self::Gompertz => "GOMPERTZ",
            Self::PowerDrift => "POWER_DRIFT",
        };
        f.write_str(s)
    }
}

/// Family parameters. `alpha` is read by `POWER_DRIFT` only; `x0` defaults to
/// the long-run level of the family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub kappa: f64,
    pub mu: f64,
    pub sigma: f64,
    pub alpha: Option<f64>,
    pub x0: Option<f64>,
}

impl ModelParams {
    pub fn new(kappa: f64, mu: f64, sigma: f64) -> Self {
        Self {
            kappa,
            mu,
            sigma,
            alpha: None,
            x0: None,
        }
    }

    pub fn power(kappa: f64, sigma: f64, alpha: f64) -> Self {
        Self {
            kappa,
            mu: 0.0,
            sigma,
            alpha: Some(alpha),
            x0: None,
        }
    }

    pub fn with_x0(mut self, x0: f64) -> Self {
        self.x0 = Some(x0);
        self
    }
}

pub fn builtin_model(family: BuiltinFamily, params: ModelParams) -> Result<SdeModel> {
    let ModelParams {
        kappa,
        mu,
        sigma,
        alpha,
        x0,
    } = params;
    for (name, v) in [("kappa", kappa), ("sigma", sigma)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    if !mu.is_finite() {
        return Err(Error::InvalidParameter(format!("mu must be finite, got {mu}")));
    }
    let mut model = match family {
        BuiltinFamily::Ou => ou(kappa, mu, sigma, x0.unwrap_or(mu)),
        BuiltinFamily::Cir => {
            let half_sigma_sq = 0.5 * sigma * sigma;
            if kappa * mu < half_sigma_sq {
                return Err(Error::FellerViolated {
                    kappa_mu: kappa * mu,
                    half_sigma_sq,
                });
            }
            let start = x0.unwrap_or(mu);
            if !(start > 0.0) {
                return Err(Error::InvalidParameter("CIR requires x0 > 0".into()));
            }
            SdeModel::scalar(
                format!("CIR(kappa={kappa}, mu={mu}, sigma={sigma})"),
                move |x| kappa * (mu - x),
                move |x| sigma * x.max(0.0).sqrt(),
            )
            .with_recurrence(1.0, 0.5 * kappa, 2.0 * mu)
            .with_holder(0.5)
            .with_alpha_bar(1.0)
            .with_support(Interval::positive_half_line())
            .with_initial_state(vec![start])
        }
        BuiltinFamily::Gompertz => {
            let log_mean = mu - sigma * sigma / (2.0 * kappa);
            let start = x0.unwrap_or(log_mean.exp());
            if !(start > 0.0) {
                return Err(Error::InvalidParameter("GOMPERTZ requires x0 > 0".into()));
            }
            let inner = ou(kappa, log_mean, sigma, start.ln());
            SdeModel::scalar(
                format!("GOMPERTZ(kappa={kappa}, mu={mu}, sigma={sigma})"),
                move |x| kappa * (mu - x.ln()) * x,
                move |x| sigma * x,
            )
            .with_recurrence(inner.recurrence_alpha, inner.recurrence_gamma, inner.recurrence_radius)
            .with_holder(1.0)
            .with_alpha_bar(1.0)
            .with_support(Interval::positive_half_line())
            .with_initial_state(vec![start])
            .with_log_transform(inner)
        }
        BuiltinFamily::PowerDrift => {
            let a = alpha.ok_or_else(|| {
                Error::InvalidParameter("POWER_DRIFT requires the exponent alpha".into())
            })?;
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidParameter(format!("alpha must be positive, got {a}")));
            }
            SdeModel::scalar(
                format!("POWER_DRIFT(kappa={kappa}, sigma={sigma}, alpha={a})"),
                move |x| -kappa * x.signum() * x.abs().powf(a),
                move |_| sigma,
            )
            .with_recurrence(a, kappa, 0.0)
            .with_ellipticity(sigma * sigma, sigma * sigma)
            .with_holder(a.min(1.0))
            .with_alpha_bar(a.min(1.0))
            .with_constant_diffusion(true)
            .with_initial_state(vec![x0.unwrap_or(0.0)])
        }
    };
    model.params.insert("kappa".into(), kappa);
    model.params.insert("mu".into(), mu);
    model.params.insert("sigma".into(), sigma);
    if let Some(a) = alpha {
        model.params.insert("alpha".into(), a);
    }
    model.check_metadata()?;
    Ok(model)
}

fn ou(kappa: f64, mu: f64, sigma: f64, x0: f64) -> SdeModel {
    // ⟨x, b(x)⟩ ≤ −γ|x|² beyond B: γ = κ with B = 0 when centred at the origin,
    // otherwise γ = κ/2 with B = 2|μ|.
    let (gamma, radius) = if mu == 0.0 {
        (kappa, 0.0)
    } else {
        (0.5 * kappa, 2.0 * mu.abs())
    };
    SdeModel::scalar(
        format!("OU(kappa={kappa}, mu={mu}, sigma={sigma})"),
        move |x| kappa * (mu - x),
        move |_| sigma,
    )
    .with_recurrence(1.0, gamma, radius)
    .with_ellipticity(sigma * sigma, sigma * sigma)
    .with_holder(1.0)
    .with_alpha_bar(1.0)
    .with_constant_diffusion(true)
    .with_initial_state(vec![x0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ou_metadata() {
        let m = builtin_model(BuiltinFamily::Ou, ModelParams::new(1.0, 0.0, 2f64.sqrt())).unwrap();
        assert_eq!(m.recurrence_alpha, 1.0);
        assert_eq!(m.holder_nu, 1.0);
        assert_eq!(m.drift_growth_alpha_bar, 1.0);
        assert_eq!(m.drift_1d(2.0), -2.0);
        assert!((m.a_1d(0.3) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cir_feller_violation() {
        let err = builtin_model(BuiltinFamily::Cir, ModelParams::new(1.0, 0.25, 1.0)).unwrap_err();
        assert!(err.to_string().contains("Feller condition violated"));
        assert!(builtin_model(BuiltinFamily::Cir, ModelParams::new(1.0, 0.5, 1.0)).is_ok());
    }

    #[test]
    fn power_drift_shape() {
        let m = builtin_model(BuiltinFamily::PowerDrift, ModelParams::power(1.0, 1.0, 2.0)).unwrap();
        for x in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let b = m.drift_1d(x);
            assert_eq!(b, -x.signum() * x * x);
            // ⟨x, b(x)⟩ = −|x|³
            assert!((x * b + x.abs().powi(3)).abs() < 1e-12);
        }
        assert!(builtin_model(BuiltinFamily::PowerDrift, ModelParams::new(1.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn gompertz_simulates_in_log_space() {
        let m = builtin_model(BuiltinFamily::Gompertz, ModelParams::new(1.0, 1.0, 1.0)).unwrap();
        assert!(m.is_log_transformed());
        let inner = m.simulation_model();
        // induced OU has mean μ − σ²/2κ = 0.5
        assert!((inner.drift_1d(0.5)).abs() < 1e-15);
        let z = m.to_simulation_state(&[2.0]);
        let mut x = [0.0];
        m.from_simulation_state(&z, &mut x);
        assert!((x[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn family_parsing() {
        assert_eq!("ou".parse::<BuiltinFamily>().unwrap(), BuiltinFamily::Ou);
        assert_eq!("POWER_DRIFT".parse::<BuiltinFamily>().unwrap(), BuiltinFamily::PowerDrift);
        assert!("heston".parse::<BuiltinFamily>().is_err());
    }
}
