use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Regime {
    Lln,
    Clt,
    Mdp,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Lln => "LLN",
            Regime::Clt => "CLT",
            Regime::Mdp => "MDP",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LLN" => Ok(Regime::Lln),
            "CLT" => Ok(Regime::Clt),
            "MDP" => Ok(Regime::Mdp),
            other => Err(Error::InvalidParameter(format!("unknown regime '{other}'"))),
        }
    }
}

/// Power-law coupling `Δ(ε) = c_Δ ε^θ`, `δ(ε) = ε^γ_δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPolicy {
    pub theta_step: f64,
    pub c_step: f64,
    pub gamma_mdp: Option<f64>,
}

impl StepPolicy {
    pub fn new(theta_step: f64) -> Self {
        Self {
            theta_step,
            c_step: 1.0,
            gamma_mdp: None,
        }
    }

    pub fn with_c_step(mut self, c: f64) -> Self {
        self.c_step = c;
        self
    }

    pub fn with_gamma_mdp(mut self, gamma: f64) -> Self {
        self.gamma_mdp = Some(gamma);
        self
    }
}

/// Checks the step-size inequality required by `regime` for Hölder exponent `nu`.
pub fn validate_regime(regime: Regime, policy: &StepPolicy, nu: f64) -> Result<()> {
    let theta = policy.theta_step;
    if !(policy.c_step > 0.0 && policy.c_step.is_finite()) {
        return Err(Error::InvalidSchedule(format!(
            "c_step must be positive, got {:?}",
            policy.c_step
        )));
    }
    if !theta.is_finite() {
        return Err(Error::InvalidSchedule(format!("theta must be finite, got {theta:?}")));
    }
    match regime {
        Regime::Lln => {
            if theta <= 1.0 {
                return Err(Error::InvalidSchedule(format!("LLN requires theta > 1, got {theta:?}")));
            }
        }
        Regime::Clt | Regime::Mdp => {
            if !(nu > 0.0 && nu <= 1.0) {
                return Err(Error::InvalidSchedule(format!("nu must lie in (0, 1], got {nu:?}")));
            }
            let bound = 1.0 + 1.0 / nu;
            if theta <= bound {
                return Err(Error::InvalidSchedule(format!(
                    "{regime} requires theta > 1 + 1/nu = {bound:?}, got {theta:?}"
                )));
            }
        }
    }
    if regime == Regime::Mdp {
        match policy.gamma_mdp {
            None => return Err(Error::InvalidSchedule("MDP requires gamma_delta".into())),
            Some(g) if !(g > 0.0 && g < 0.5) => {
                return Err(Error::InvalidSchedule(format!(
                    "MDP requires 0 < gamma_delta < 1/2, got {g:?}"
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

/// One `(ε, Δ(ε), δ(ε))` triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub epsilon: f64,
    pub delta_step: f64,
    pub mdp_scale: f64,
    pub regime: Regime,
    pub policy: StepPolicy,
    /// `false` for schedules built deliberately outside their regime.
    pub checked: bool,
}

impl StepSchedule {
    /// Builds the schedule at `epsilon`, rejecting policies that violate the
    /// regime's step-size condition for Hölder exponent `nu`.
    pub fn new(regime: Regime, policy: StepPolicy, epsilon: f64, nu: f64) -> Result<Self> {
        validate_regime(regime, &policy, nu)?;
        let mut s = Self::unchecked(regime, policy, epsilon)?;
        s.checked = true;
        Ok(s)
    }

    /// Same as [`StepSchedule::new`] without the regime inequality; used to
    /// demonstrate what happens when it fails.
    pub fn unchecked(regime: Regime, policy: StepPolicy, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidSchedule(format!(
                "epsilon must be positive, got {epsilon:?}"
            )));
        }
        let delta_step = policy.c_step * epsilon.powf(policy.theta_step);
        if !(delta_step > 0.0 && delta_step.is_finite()) {
            return Err(Error::InvalidSchedule(format!(
                "step Δ = {delta_step:e} is not a positive number"
            )));
        }
        let mdp_scale = policy.gamma_mdp.map_or(1.0, |g| epsilon.powf(g));
        Ok(Self {
            epsilon,
            delta_step,
            mdp_scale,
            regime,
            policy,
            checked: false,
        })
    }

    /// Schedule with an explicit step, bypassing the power law.
    pub fn with_step(epsilon: f64, delta_step: f64, mdp_scale: f64, regime: Regime) -> Result<Self> {
        if !(epsilon > 0.0 && delta_step > 0.0 && mdp_scale > 0.0 && mdp_scale <= 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "need epsilon > 0, delta > 0 and mdp scale in (0, 1], got ({epsilon:?}, {delta_step:?}, {mdp_scale:?})"
            )));
        }
        Ok(Self {
            epsilon,
            delta_step,
            mdp_scale,
            regime,
            policy: StepPolicy::new((delta_step.ln() / epsilon.ln()).max(0.0)),
            checked: false,
        })
    }

    /// Rescaled step `h = Δ/ε`.
    pub fn rescaled_step(&self) -> f64 {
        self.delta_step / self.epsilon
    }

    /// MDP speed `β(ε) = ε/δ²(ε)`.
    pub fn beta(&self) -> f64 {
        self.epsilon / (self.mdp_scale * self.mdp_scale)
    }

    /// Number of whole steps fitting in `horizon`.
    pub fn step_count(&self, horizon: f64) -> Result<u64> {
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be >= 0, got {horizon}")));
        }
        let ratio = horizon / self.delta_step;
        if ratio >= 2f64.powi(53) {
            return Err(Error::InvalidSchedule(format!(
                "T/Δ = {ratio:e} steps does not fit the step counter"
            )));
        }
        Ok((ratio + 1e-9).floor() as u64)
    }
}

/// Left grid point `ϱ(t) = kΔ` with `kΔ ≤ t < (k+1)Δ`; grid points map to themselves.
pub fn grid_floor(t: f64, delta: f64) -> f64 {
    let r = t / delta;
    let k = r.round();
    if (r - k).abs() <= 1e-9 * k.max(1.0) {
        return if k == 0.0 { 0.0 } else { t };
    }
    r.floor() * delta
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_floor_examples() {
        assert!((grid_floor(0.35, 0.1) - 0.3).abs() < 1e-15);
        assert_eq!(grid_floor(0.3, 0.1), 0.3);
        assert_eq!(grid_floor(1e-9, 0.1), 0.0);
        assert_eq!(grid_floor(0.0, 0.1), 0.0);
        assert!((grid_floor(0.0999, 0.1)).abs() < 1e-15);
    }

    #[test]
    fn clt_theta_message() {
        let err = validate_regime(Regime::Clt, &StepPolicy::new(1.5), 1.0).unwrap_err();
        assert!(err
            .to_string()
            .contains("CLT requires theta > 1 + 1/nu = 2.0, got 1.5"));
        let err = validate_regime(Regime::Clt, &StepPolicy::new(1.2), 1.0).unwrap_err();
        assert!(err.to_string().contains("1 + 1/nu = 2.0"));
        assert!(validate_regime(Regime::Clt, &StepPolicy::new(2.5), 1.0).is_ok());
        let err = validate_regime(Regime::Clt, &StepPolicy::new(2.5), 0.5).unwrap_err();
        assert!(err.to_string().contains("= 3.0"));
    }

    #[test]
    fn lln_and_mdp_rules() {
        assert!(validate_regime(Regime::Lln, &StepPolicy::new(1.0), 1.0).is_err());
        assert!(validate_regime(Regime::Lln, &StepPolicy::new(1.5), 1.0).is_ok());
        let p = StepPolicy::new(2.5);
        assert!(validate_regime(Regime::Mdp, &p, 1.0).is_err());
        assert!(validate_regime(Regime::Mdp, &p.with_gamma_mdp(0.5), 1.0).is_err());
        assert!(validate_regime(Regime::Mdp, &p.with_gamma_mdp(0.35), 1.0).is_ok());
    }

    #[test]
    fn schedule_quantities() {
        let p = StepPolicy::new(2.5).with_gamma_mdp(0.35);
        let s = StepSchedule::new(Regime::Mdp, p, 0.04, 1.0).unwrap();
        assert!((s.delta_step - 0.04f64.powf(2.5)).abs() < 1e-18);
        assert!((s.beta() - 0.04f64.powf(0.3)).abs() < 1e-12);
        assert_eq!(s.step_count(1.0).unwrap(), 3125);
        assert!(StepSchedule::new(Regime::Lln, StepPolicy::new(1.5), -0.1, 1.0).is_err());
    }

    #[test]
    fn exact_partition_counts() {
        let s = StepSchedule::with_step(0.1, 0.01, 1.0, Regime::Lln).unwrap();
        assert_eq!(s.step_count(1.0).unwrap(), 100);
        assert_eq!(s.step_count(0.015).unwrap(), 1);
    }
}
