//! Scaled Euler–Maruyama simulation of the fast process with online
//! accumulation of the occupation functionals.

mod accumulator;
mod schedule;

pub use accumulator::{ControlFn, ControlFunction, FunctionalAccumulator};
pub use schedule::{grid_floor, validate_regime, Regime, StepPolicy, StepSchedule};

use crate::error::{Error, Result};
use crate::model::{FunctionalSpec, SdeModel};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::Path;

pub const DEFAULT_BLOW_UP_BOUND: f64 = 1e8;

/// Per-replicate stream: the seed is derived from `(master_seed, stage)` and
/// the ChaCha stream number is the replicate index.
pub fn replicate_rng(master_seed: u64, stage: u64, replicate: u64) -> ChaCha8Rng {
    let mixed = master_seed ^ stage.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    rng.set_stream(replicate);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    pub blow_up_bound: f64,
    /// Record `(t, x, Ξ)` every this many steps (and at the final step).
    pub snapshot_stride: Option<u64>,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            blow_up_bound: DEFAULT_BLOW_UP_BOUND,
            snapshot_stride: None,
        }
    }
}

/// Sparse path record with rows `t, z_1..z_d, xi_1..xi_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSnapshot {
    pub dim_state: usize,
    pub dim_out: usize,
    pub rows: Vec<Vec<f64>>,
}

impl PathSnapshot {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((1..=self.dim_state).map(|i| format!("z_{i}")));
        h.extend((1..=self.dim_out).map(|i| format!("xi_{i}")));
        h
    }

    pub fn write_csv<W: std::io::Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(self.header())?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub accumulator: FunctionalAccumulator,
    /// Terminal state in the model's natural coordinates.
    pub terminal_state: Vec<f64>,
    /// Horizon actually covered, `T` snapped down to the grid.
    pub horizon_used: f64,
    pub snapshot: Option<PathSnapshot>,
}

fn check_functional(f: &FunctionalSpec) -> Result<()> {
    if !f.centralized {
        return Err(Error::Precondition(format!(
            "functional '{}' must be centralized before simulation",
            f.label
        )));
    }
    Ok(())
}

fn check_schedule(model: &SdeModel, schedule: &StepSchedule) -> Result<()> {
    if schedule.checked {
        validate_regime(schedule.regime, &schedule.policy, model.holder_nu)?;
    }
    Ok(())
}

/// Euler approximation `Z^ε` on the grid `t_k = kΔ`:
/// `Z_{k+1} = Z_k + b(Z_k)Δ/ε + σ(Z_k)√(Δ/ε) ξ_k`.
pub fn simulate_euler<R: Rng + ?Sized>(
    model: &SdeModel,
    schedule: &StepSchedule,
    f: &FunctionalSpec,
    horizon: f64,
    rng: &mut R,
    opts: &SimulationOptions,
) -> Result<SimulationOutput> {
    check_functional(f)?;
    check_schedule(model, schedule)?;
    run(model, schedule.epsilon, schedule.delta_step, f, horizon, rng, opts, None)
}

/// Proxy for the exact fast process: Euler with `Δ_ref = Δ(ε)/fine_factor`.
pub fn simulate_reference<R: Rng + ?Sized>(
    model: &SdeModel,
    schedule: &StepSchedule,
    fine_factor: u32,
    f: &FunctionalSpec,
    horizon: f64,
    rng: &mut R,
    opts: &SimulationOptions,
) -> Result<SimulationOutput> {
    if fine_factor < 10 {
        return Err(Error::Precondition(format!(
            "fine_factor must be >= 10, got {fine_factor}"
        )));
    }
    check_functional(f)?;
    let delta_ref = schedule.delta_step / fine_factor as f64;
    run(model, schedule.epsilon, delta_ref, f, horizon, rng, opts, None)
}

/// Euler scheme with the added drift `(δ/ε) σ(Z_k) ψ(t_k) Δ`.
pub fn simulate_controlled<R: Rng + ?Sized>(
    model: &SdeModel,
    schedule: &StepSchedule,
    psi: &ControlFunction,
    f: &FunctionalSpec,
    horizon: f64,
    rng: &mut R,
    opts: &SimulationOptions,
) -> Result<SimulationOutput> {
    if schedule.regime != Regime::Mdp {
        return Err(Error::Precondition("controlled simulation needs an MDP schedule".into()));
    }
    if psi.dim != model.simulation_model().dim_noise {
        return Err(Error::Dimension(format!(
            "control has dimension {}, noise has dimension {}",
            psi.dim,
            model.simulation_model().dim_noise
        )));
    }
    if horizon > psi.horizon * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!(
            "control defined on [0, {}] but horizon is {horizon}",
            psi.horizon
        )));
    }
    check_functional(f)?;
    check_schedule(model, schedule)?;
    run(
        model,
        schedule.epsilon,
        schedule.delta_step,
        f,
        horizon,
        rng,
        opts,
        Some((psi, schedule.mdp_scale)),
    )
}

#[allow(clippy::too_many_arguments)]
fn run<R: Rng + ?Sized>(
    model: &SdeModel,
    epsilon: f64,
    delta: f64,
    f: &FunctionalSpec,
    horizon: f64,
    rng: &mut R,
    opts: &SimulationOptions,
    control: Option<(&ControlFunction, f64)>,
) -> Result<SimulationOutput> {
    let sim = model.simulation_model();
    let (d, m, n) = (sim.dim_state, sim.dim_noise, f.dim_out);
    let ratio = horizon / delta;
    if !(horizon >= 0.0) || !ratio.is_finite() || ratio >= 2f64.powi(53) {
        return Err(Error::InvalidSchedule(format!(
            "T/Δ = {ratio:e} steps does not fit the step counter"
        )));
    }
    let steps = (ratio + 1e-9).floor() as u64;
    let h = delta / epsilon;
    let sqrt_h = h.sqrt();
    let bound_sq = opts.blow_up_bound * opts.blow_up_bound;

    let mut z = model.to_simulation_state(&model.initial_state);
    let mut x = model.initial_state.clone();
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * m];
    let mut xi = vec![0.0; m];
    let mut psi = vec![0.0; m];
    let mut f_left = vec![0.0; n];
    let mut f_right = vec![0.0; n];
    let mut acc = FunctionalAccumulator::new(n);
    f.eval_into(0.0, &x, &mut f_left);

    let mut snapshot = opts.snapshot_stride.map(|_| PathSnapshot {
        dim_state: d,
        dim_out: n,
        rows: Vec::new(),
    });
    let record = |snap: &mut Option<PathSnapshot>, t: f64, x: &[f64], acc: &FunctionalAccumulator| {
        if let Some(sn) = snap.as_mut() {
            let mut row = Vec::with_capacity(1 + d + n);
            row.push(t);
            row.extend_from_slice(x);
            row.extend_from_slice(&acc.xi_continuous);
            sn.rows.push(row);
        }
    };
    record(&mut snapshot, 0.0, &x, &acc);

    for k in 0..steps {
        sim.drift_into(&z, &mut b);
        sim.diffusion_into(&z, &mut s);
        for v in xi.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        if let Some((c, _)) = control {
            c.eval_into(k as f64 * delta, &mut psi);
        }
        let mut sq = 0.0;
        for i in 0..d {
            let row = &s[i * m..(i + 1) * m];
            let mut noise = 0.0;
            for j in 0..m {
                noise += row[j] * xi[j];
            }
            z[i] = z[i] + b[i] * h + sqrt_h * noise;
            if let Some((_, dscale)) = control {
                let mut push = 0.0;
                for j in 0..m {
                    push += row[j] * psi[j];
                }
                let term = dscale * h * push;
                if term != 0.0 {
                    z[i] += term;
                }
            }
            sq += z[i] * z[i];
        }
        if !(sq <= bound_sq) {
            return Err(Error::TrajectoryExploded {
                step: k + 1,
                norm: sq.sqrt(),
            });
        }
        let t_next = (k + 1) as f64 * delta;
        model.from_simulation_state(&z, &mut x);
        f.eval_into(t_next, &x, &mut f_right);
        acc.push_step(&f_left, &f_right, delta);
        std::mem::swap(&mut f_left, &mut f_right);
        if let Some(stride) = opts.snapshot_stride {
            if (k + 1) % stride.max(1) == 0 || k + 1 == steps {
                record(&mut snapshot, t_next, &x, &acc);
            }
        }
    }

    Ok(SimulationOutput {
        accumulator: acc,
        terminal_state: x,
        horizon_used: steps as f64 * delta,
        snapshot,
    })
}

/// A single Euler step with caller-supplied standard normal increments, for
/// coupling schemes of different resolutions on one Brownian path.
pub struct EulerStepper<'a> {
    model: &'a SdeModel,
    h: f64,
    b: Vec<f64>,
    s: Vec<f64>,
}

impl<'a> EulerStepper<'a> {
    /// `h` is the rescaled step `Δ/ε`; the model is used in simulation coordinates.
    pub fn new(model: &'a SdeModel, h: f64) -> Self {
        let sim = model.simulation_model();
        Self {
            model: sim,
            h,
            b: vec![0.0; sim.dim_state],
            s: vec![0.0; sim.dim_state * sim.dim_noise],
        }
    }

    /// Advances `z` by one step driven by the Brownian increment `dw`
    /// (already scaled to variance `h`).
    pub fn step(&mut self, z: &mut [f64], dw: &[f64]) {
        let m = self.model.dim_noise;
        self.model.drift_into(z, &mut self.b);
        self.model.diffusion_into(z, &mut self.s);
        for i in 0..z.len() {
            let noise: f64 = (0..m).map(|j| self.s[i * m + j] * dw[j]).sum();
            z[i] += self.b[i] * self.h + noise;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, BuiltinFamily, ModelParams};

    fn lln(eps: f64, delta: f64) -> StepSchedule {
        StepSchedule::with_step(eps, delta, 1.0, Regime::Lln).unwrap()
    }

    fn identity() -> FunctionalSpec {
        FunctionalSpec::scalar("x", |x| x).assume_centralized()
    }

    #[test]
    fn noiseless_single_step() {
        let m = SdeModel::scalar("decay", |x| -x, |_| 0.0).with_initial_state(vec![1.0]);
        let s = lln(1.0, 0.1);
        let mut rng = replicate_rng(1, 0, 0);
        let out = simulate_euler(&m, &s, &identity(), 0.1, &mut rng, &Default::default()).unwrap();
        assert_eq!(out.accumulator.steps, 1);
        assert!((out.terminal_state[0] - 0.9).abs() < 1e-15);
        assert!((out.accumulator.xi_riemann[0] - 0.1).abs() < 1e-15);
        assert!((out.accumulator.xi_continuous[0] - 0.095).abs() < 1e-15);
    }

    #[test]
    fn zero_functional_gives_zero() {
        let m = SdeModel::scalar("bm", |_| 0.0, |_| 1.0);
        let s = lln(0.1, 0.01);
        for seed in 0..5 {
            let mut rng = replicate_rng(seed, 0, 0);
            let out = simulate_euler(&m, &s, &FunctionalSpec::zero(1), 1.0, &mut rng, &Default::default())
                .unwrap();
            assert_eq!(out.accumulator.xi_continuous, vec![0.0]);
            assert_eq!(out.accumulator.xi_riemann, vec![0.0]);
        }
    }

    #[test]
    fn horizon_snaps_to_grid() {
        let m = SdeModel::scalar("bm", |_| 0.0, |_| 1.0);
        let s = lln(0.1, 0.03);
        let mut rng = replicate_rng(1, 0, 0);
        let out = simulate_euler(&m, &s, &identity(), 0.1, &mut rng, &Default::default()).unwrap();
        assert_eq!(out.accumulator.steps, 3);
        assert!((out.horizon_used - 0.09).abs() < 1e-15);
    }

    #[test]
    fn superlinear_drift_explodes() {
        let m = builtin_model(BuiltinFamily::PowerDrift, ModelParams::power(1.0, 1.0, 3.0))
            .unwrap()
            .with_initial_state(vec![10.0]);
        let s = lln(0.1, 0.1);
        let mut rng = replicate_rng(1, 0, 0);
        let err = simulate_euler(&m, &s, &identity(), 10.0, &mut rng, &Default::default()).unwrap_err();
        assert!(err.to_string().contains("trajectory exploded at step"));
    }

    #[test]
    fn uncentred_functional_rejected() {
        let m = SdeModel::scalar("bm", |_| 0.0, |_| 1.0);
        let f = FunctionalSpec::scalar("x", |x| x);
        let mut rng = replicate_rng(1, 0, 0);
        assert!(simulate_euler(&m, &lln(0.1, 0.01), &f, 1.0, &mut rng, &Default::default()).is_err());
    }

    #[test]
    fn checked_schedule_is_revalidated_against_model() {
        let m = builtin_model(BuiltinFamily::Cir, ModelParams::new(1.0, 1.0, 1.0)).unwrap();
        // valid for ν = 1, not for the CIR exponent ν = 1/2
        let s = StepSchedule::new(Regime::Clt, StepPolicy::new(2.5), 0.1, 1.0).unwrap();
        let mut rng = replicate_rng(1, 0, 0);
        let err = simulate_euler(&m, &s, &FunctionalSpec::zero(1), 1.0, &mut rng, &Default::default())
            .unwrap_err();
        assert!(err.to_string().contains("1 + 1/nu = 3.0"));
    }

    #[test]
    fn deterministic_reference_matches_exponential_decay() {
        let m = SdeModel::scalar("decay", |x| -x, |_| 0.0).with_initial_state(vec![1.0]);
        let eps = 0.1;
        let s = lln(eps, 1e-3);
        for factor in [10u32, 100] {
            let mut rng = replicate_rng(1, 0, 0);
            let out = simulate_reference(&m, &s, factor, &identity(), 0.2, &mut rng, &Default::default())
                .unwrap();
            let h = 1e-3 / factor as f64 / eps;
            let exact = (-0.2f64 / eps).exp();
            assert!((out.terminal_state[0] - exact).abs() < 2.0 * h, "factor {factor}");
        }
        let mut rng = replicate_rng(1, 0, 0);
        assert!(simulate_reference(&m, &s, 5, &identity(), 0.2, &mut rng, &Default::default()).is_err());
    }

    #[test]
    fn zero_control_is_bitwise_identical() {
        let m = builtin_model(BuiltinFamily::Ou, ModelParams::new(1.0, 0.0, 2f64.sqrt())).unwrap();
        let s = StepSchedule::new(Regime::Mdp, StepPolicy::new(2.5).with_gamma_mdp(0.35), 0.1, 1.0).unwrap();
        let psi = ControlFunction::zero(1, 1.0);
        let opts = SimulationOptions::default();
        for seed in 0..4 {
            let a = simulate_euler(&m, &s, &identity(), 1.0, &mut replicate_rng(seed, 0, 0), &opts).unwrap();
            let b = simulate_controlled(&m, &s, &psi, &identity(), 1.0, &mut replicate_rng(seed, 0, 0), &opts)
                .unwrap();
            assert_eq!(a.accumulator.xi_continuous[0].to_bits(), b.accumulator.xi_continuous[0].to_bits());
            assert_eq!(a.accumulator.xi_riemann[0].to_bits(), b.accumulator.xi_riemann[0].to_bits());
            assert_eq!(a.terminal_state[0].to_bits(), b.terminal_state[0].to_bits());
        }
    }

    #[test]
    fn snapshot_rows_and_csv() {
        let m = SdeModel::scalar("bm", |_| 0.0, |_| 1.0);
        let s = lln(0.1, 0.01);
        let opts = SimulationOptions {
            snapshot_stride: Some(25),
            ..Default::default()
        };
        let out = simulate_euler(&m, &s, &identity(), 1.0, &mut replicate_rng(3, 0, 0), &opts).unwrap();
        let snap = out.snapshot.unwrap();
        assert_eq!(snap.rows.len(), 5);
        assert_eq!(snap.rows[4][2], out.accumulator.xi_continuous[0]);
        let mut buf = Vec::new();
        snap.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,z_1,xi_1\n"));
    }

    #[test]
    fn gompertz_paths_stay_positive() {
        let m = builtin_model(BuiltinFamily::Gompertz, ModelParams::new(1.0, 1.0, 1.0)).unwrap();
        let s = lln(0.1, 1e-3);
        let f = FunctionalSpec::scalar("x", |x| x).assume_centralized();
        let out = simulate_euler(&m, &s, &f, 1.0, &mut replicate_rng(9, 0, 0), &Default::default()).unwrap();
        assert!(out.terminal_state[0] > 0.0);
    }

    #[test]
    fn streams_are_distinct() {
        let a: f64 = replicate_rng(1, 0, 0).sample(StandardNormal);
        let b: f64 = replicate_rng(1, 0, 1).sample(StandardNormal);
        let c: f64 = replicate_rng(1, 1, 0).sample(StandardNormal);
        let a2: f64 = replicate_rng(1, 0, 0).sample(StandardNormal);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, a2);
    }
}
