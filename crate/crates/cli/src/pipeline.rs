use crate::config::{build_model, experiment_spec, functional_label, RunConfig};
use anyhow::{anyhow, bail, Context, Result};
use ergodiff::euler::{replicate_rng, simulate_euler, SimulationOptions, StepSchedule};
use ergodiff::harness::{run_experiment, ExperimentKind, ExperimentReport, ExperimentTargets, Timestamps};
use ergodiff::model::{
    centralize, default_probe_grid, invariant_density_1d, validate_conditions, ConditionReport, FunctionalSpec,
    InvariantDensity1D, Polynomial, SdeModel,
};
use ergodiff::poisson1d::{solve_poisson_1d, uniform_grid, PoissonSolution};
use ergodiff::quadrature::QuadratureConfig;
use ergodiff::variance::{
    mf_autocorrelation_form, mf_gradient_form, rate_function, AutocorrelationOptions, CovarianceCurve, RatePath,
};
use log::info;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Poisson solutions per unit horizon for time-modulated functionals.
const TIME_SLICES: usize = 10;
/// Stream stage for recorded sample paths, clear of the experiment stages.
const SNAPSHOT_STAGE: u64 = 0x5A;

/// Model, invariant density and centred functional shared by every subcommand.
pub struct Prepared {
    pub model: SdeModel,
    pub pi: InvariantDensity1D,
    pub f: FunctionalSpec,
    pub quad: QuadratureConfig,
}

pub fn raw_functional(cfg: &RunConfig) -> FunctionalSpec {
    let mut f = FunctionalSpec::polynomial(Polynomial::new(cfg.functional.coefficients.clone()));
    f.label = functional_label(&cfg.functional);
    if let Some(m) = &cfg.functional.modulation {
        let m = Polynomial::new(m.clone());
        f = f.with_modulation(move |t| m.eval(t));
    }
    f
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let quad = QuadratureConfig::default();
    let model = build_model(&cfg.model).context("model: building the diffusion")?;
    info!("model {}", model.label);
    let pi = invariant_density_1d(&model, model.support, &quad).context("model: invariant density")?;
    let raw = raw_functional(cfg);
    let f = if cfg.functional.centralize {
        centralize(&raw, &pi, &quad).context("model: centralizing the functional")?
    } else {
        raw.assume_centralized()
    };
    info!("functional {} (offset {:?})", f.label, f.offset());
    Ok(Prepared { model, pi, f, quad })
}

/// Configured grid, or the effective range of `π` pulled in from finite ends.
pub fn poisson_grid(cfg: &RunConfig, pi: &InvariantDensity1D) -> Vec<f64> {
    let (lo, hi) = pi.effective_range();
    let support = pi.support();
    let pad = 1e-4 * (hi - lo);
    let lo = if lo <= support.lo { support.lo + pad } else { lo };
    let hi = if hi >= support.hi { support.hi - pad } else { hi };
    uniform_grid(
        cfg.poisson.grid_lo.unwrap_or(lo),
        cfg.poisson.grid_hi.unwrap_or(hi),
        cfg.poisson.grid_points,
    )
}

/// Time parameters at which the Poisson equation is solved over `[0, horizon]`.
pub fn solve_times(f: &FunctionalSpec, horizon: f64) -> Vec<f64> {
    if f.time_homogeneous() {
        return vec![0.0];
    }
    let n = ((horizon * TIME_SLICES as f64).ceil() as usize).max(1);
    (0..=n).map(|k| horizon * k as f64 / n as f64).collect()
}

pub fn solve_poisson(cfg: &RunConfig, p: &Prepared, times: &[f64]) -> Result<Vec<PoissonSolution>> {
    let grid = poisson_grid(cfg, &p.pi);
    info!(
        "solving the Poisson equation on [{:.4}, {:.4}] with {} points at {} time(s)",
        grid[0],
        grid[grid.len() - 1],
        grid.len(),
        times.len()
    );
    times
        .iter()
        .map(|&t| solve_poisson_1d(&p.model, &p.pi, &p.f, t, &grid).with_context(|| format!("poisson1d: t = {t}")))
        .collect()
}

pub fn gradient_curve(p: &Prepared, sols: &[PoissonSolution]) -> Result<CovarianceCurve> {
    mf_gradient_form(sols, &p.model, &p.pi, &p.quad).context("variance: gradient form")
}

/// `validate`: writes the condition table and returns whether every check passed.
pub fn cmd_validate(cfg: &RunConfig, out: &mut dyn Write) -> Result<bool> {
    let model = build_model(&cfg.model).context("model: building the diffusion")?;
    let report = validate_conditions(&model, &default_probe_grid(&model)).context("model: condition audit")?;
    write_condition_table(&report, out)?;
    Ok(report.all_passed())
}

fn write_condition_table(report: &ConditionReport, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "model: {}", report.model)?;
    if report.log_coordinates {
        writeln!(out, "(checked in log coordinates)")?;
    }
    writeln!(out, "probes: {}", report.probes)?;
    for c in &report.checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{status}  {:<13} {}", format!("{:?}", c.kind).to_lowercase(), c.kind.describe())?;
        writeln!(out, "      margin {:.4e}, violations {}; {}", c.margin, c.violations, c.detail)?;
        if !c.passed {
            writeln!(out, "      worst probe {:?}", c.worst_probe)?;
        }
    }
    writeln!(out, "{}", if report.all_passed() { "PASS" } else { "FAIL" })?;
    Ok(())
}

/// `poisson`: solves at `t = 0` and writes `poisson_solution.csv` into `dir`.
pub fn cmd_poisson(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<PathBuf> {
    let p = prepare(cfg)?;
    let sol = solve_poisson(cfg, &p, &[0.0])?.remove(0);
    let path = dir.join("poisson_solution.csv");
    sol.save_csv(&path).context("poisson1d: writing the solution")?;
    writeln!(out, "grid points kept: {} (dropped {})", sol.grid.len(), sol.dropped.len())?;
    writeln!(out, "identity residual: {:.3e}", sol.identity_residual(&p.model, &p.f))?;
    if let Some(e) = &sol.fitted_exponents {
        writeln!(out, "tail exponents: p1 = {:.3}, p2 = {:.3}, p3 = {:.3}", e.p1, e.p2, e.p3)?;
    }
    writeln!(out, "wrote {}", path.display())?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfComparison {
    pub gradient: f64,
    pub autocorrelation: f64,
    pub stderr: f64,
    pub tolerance: f64,
    pub lower_confidence: bool,
}

impl MfComparison {
    pub fn passed(&self) -> bool {
        (self.gradient - self.autocorrelation).abs() <= self.tolerance
    }
}

/// `mf`: both covariance routes at `t = 0`, agreeing within `max(5%, 3 SE)`.
pub fn cmd_mf(cfg: &RunConfig, out: &mut dyn Write) -> Result<MfComparison> {
    let p = prepare(cfg)?;
    let sol = solve_poisson(cfg, &p, &[0.0])?;
    let grad = gradient_curve(&p, &sol)?;
    let opts = AutocorrelationOptions {
        horizon_s: cfg.mf.horizon_s,
        n_paths: cfg.mf.paths,
        fine_step: cfg.mf.fine_step,
        groups: cfg.mf.groups,
        seed: cfg.seed,
    };
    info!("autocorrelation route: {} paths, S = {}", opts.n_paths, opts.horizon_s);
    let auto = mf_autocorrelation_form(&p.model, &p.f, 0.0, &opts).context("variance: autocorrelation form")?;
    let (g, a) = (grad.scalar(), auto.scalar());
    let se = auto.scalar_stderr().unwrap_or(0.0);
    let cmp = MfComparison {
        gradient: g,
        autocorrelation: a,
        stderr: se,
        tolerance: (0.05 * g.abs()).max(3.0 * se),
        lower_confidence: auto.lower_confidence,
    };
    writeln!(out, "GRADIENT_FORM        {g:.6}")?;
    writeln!(out, "AUTOCORRELATION_FORM {a:.6} ± {se:.6}")?;
    if cmp.lower_confidence {
        writeln!(out, "(autocorrelation paths started after burn-in; lower confidence)")?;
    }
    writeln!(
        out,
        "{}  |difference| = {:.6}, tolerance {:.6}",
        if cmp.passed() { "PASS" } else { "FAIL" },
        (g - a).abs(),
        cmp.tolerance
    )?;
    Ok(cmp)
}

/// `rate`: `I_f` of the knot path under the gradient-form covariance.
pub fn cmd_rate(cfg: &RunConfig, knots: &Path, out: &mut dyn Write) -> Result<f64> {
    let file = fs::File::open(knots).with_context(|| format!("variance: opening {}", knots.display()))?;
    let path = RatePath::from_csv(file).context("variance: reading knots")?;
    let p = prepare(cfg)?;
    let sols = solve_poisson(cfg, &p, &solve_times(&p.f, path.horizon()))?;
    let curve = gradient_curve(&p, &sols)?;
    let rate = rate_function(&path, &curve).context("variance: rate function")?;
    writeln!(out, "I_f = {rate}")?;
    Ok(rate)
}

/// `experiment`: the full harness run, with artifacts written into `dir`.
pub fn cmd_experiment(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<ExperimentReport> {
    let exp = cfg
        .experiment
        .as_ref()
        .ok_or_else(|| anyhow!("config: the experiment subcommand needs an [experiment] section"))?;
    let started = timestamp();
    let p = prepare(cfg)?;
    let spec = experiment_spec(cfg, &p.model);
    spec.validate(p.model.holder_nu).context("harness: experiment spec")?;

    let needs_curve = !matches!(
        exp.kind,
        ExperimentKind::LlnRate | ExperimentKind::RiemannVsContinuous
    ) && !(exp.kind == ExperimentKind::MdpTail && exp.rates.is_some());
    let mut covariance = None;
    if needs_curve || cfg.output.poisson_csv {
        let sols = solve_poisson(cfg, &p, &solve_times(&p.f, exp.horizon))?;
        if cfg.output.poisson_csv {
            sols[0]
                .save_csv(&dir.join("poisson_solution.csv"))
                .context("poisson1d: writing the solution")?;
        }
        if needs_curve {
            let curve = gradient_curve(&p, &sols)?;
            info!("M_f(0) = {:.6}", curve.scalar());
            covariance = Some(curve);
        }
    }
    let targets = ExperimentTargets {
        covariance,
        rates: exp.rates.clone(),
    };

    info!("running {} over ε = {:?}", exp.kind, exp.epsilons);
    let mut report = run_experiment(&spec, &p.model, &p.f, &targets).context("harness")?;
    report.provenance.config = Some(serde_json::to_value(cfg)?);
    if cfg.output.snapshots > 0 {
        write_snapshots(cfg, &p, dir)?;
    }
    report.timestamps = Some(Timestamps {
        started,
        finished: timestamp(),
    });
    if cfg.output.json {
        report.save_json(&dir.join("report.json")).context("harness: writing report.json")?;
    }
    if cfg.output.csv {
        report.save_csv(&dir.join("summary.csv")).context("harness: writing summary.csv")?;
    }
    write_verdict_table(&report, out)?;
    Ok(report)
}

fn write_snapshots(cfg: &RunConfig, p: &Prepared, dir: &Path) -> Result<()> {
    let exp = cfg.experiment.as_ref().expect("experiment section");
    let eps = *exp.epsilons.last().expect("validated epsilon list");
    let schedule = StepSchedule::new(cfg.schedule.regime, cfg.schedule.policy(), eps, p.model.holder_nu)
        .context("euler: snapshot schedule")?;
    let opts = SimulationOptions {
        snapshot_stride: Some(cfg.output.snapshot_stride),
        ..SimulationOptions::default()
    };
    for r in 0..cfg.output.snapshots as u64 {
        let mut rng = replicate_rng(cfg.seed, SNAPSHOT_STAGE, r);
        let run = simulate_euler(&p.model, &schedule, &p.f, exp.horizon, &mut rng, &opts)
            .with_context(|| format!("euler: snapshot path {r}"))?;
        if let Some(snap) = run.snapshot {
            snap.save(&dir.join(format!("path_{r:03}.csv")))
                .context("euler: writing a snapshot")?;
        }
    }
    Ok(())
}

pub fn write_verdict_table(report: &ExperimentReport, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "{} ({} / {})", report.kind, report.spec.model, report.spec.functional)?;
    for row in &report.rows {
        writeln!(
            out,
            "  eps {:<8} {:<8} n {:<6} failed {:<4} mean {:+.4e} var {:.4e}",
            row.epsilon,
            row.schedule,
            row.n,
            row.failed,
            row.mean.first().copied().unwrap_or(f64::NAN),
            row.var.first().copied().unwrap_or(f64::NAN)
        )?;
    }
    for fit in &report.fits {
        writeln!(out, "  fit {}: slope {:.4} ± {:.4}", fit.quantity, fit.slope, fit.slope_stderr)?;
    }
    for v in &report.verdicts {
        let status = match (v.passed, v.informative) {
            (true, _) => "PASS",
            (false, true) => "INFO",
            (false, false) => "FAIL",
        };
        writeln!(out, "{status}  {:<28} {:.6} ({}) {}", v.name, v.value, v.tolerance, v.detail)?;
    }
    for flag in &report.flags {
        writeln!(out, "note: {flag}")?;
    }
    writeln!(out, "{}", if report.passed { "PASS" } else { "FAIL" })?;
    Ok(())
}

fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Creates `<base>/run-<UTC time>-seed<seed>`, adding a counter on collision.
pub fn create_run_dir(base: &Path, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(base).with_context(|| format!("cannot create {}", base.display()))?;
    let stem = format!("run-{}-seed{seed}", chrono::Utc::now().format("%Y%m%dT%H%M%S"));
    for k in 0..1000 {
        let name = if k == 0 { stem.clone() } else { format!("{stem}-{k}") };
        let dir = base.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("cannot create {}", dir.display())),
        }
    }
    bail!("too many run directories named {stem}")
}

/// Marks a run directory whose pipeline stopped with an error.
pub fn mark_failed(dir: &Path, err: &anyhow::Error) {
    let _ = fs::write(dir.join("FAILED"), format!("{err:#}\n"));
}
