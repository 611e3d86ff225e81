//! Run configuration: a sectioned `key = value` file.
//!
//! ```text
//! seed = 7
//! threads = "auto"          # or a positive integer
//!
//! [model]
//! family = "OU"             # OU, CIR, GOMPERTZ, POWER_DRIFT or CUSTOM
//! kappa = 1.0
//! mu = 0.0
//! sigma = 1.4142135623730951
//!
//! [functional]
//! coefficients = [0.0, 1.0] # f(x) = 0 + 1·x
//!
//! [schedule]
//! theta = 2.5
//!
//! [experiment]
//! kind = "CLT_NORMALITY"
//! epsilons = [0.01, 0.005]
//! ```
//!
//! Every section and key is listed in [`KNOWN_KEYS`]; anything else is an error.

use ergodiff::euler::{validate_regime, Regime, StepPolicy};
use ergodiff::harness::{ExperimentKind, ExperimentSpec};
use ergodiff::model::{builtin_model, BuiltinFamily, ModelParams, Polynomial, SdeModel};
use ergodiff::quadrature::Interval;
use serde::Serialize;
use std::fmt;
use std::path::{Path, PathBuf};
use toml::{Table, Value};

pub const KNOWN_KEYS: &[(&str, &[&str])] = &[
    ("", &["seed", "threads"]),
    (
        "model",
        &[
            "family",
            "kappa",
            "mu",
            "sigma",
            "alpha",
            "x0",
            "drift",
            "diffusion",
            "support",
            "nu",
            "recurrence_alpha",
            "recurrence_gamma",
            "recurrence_radius",
            "alpha_bar",
            "ellipticity",
        ],
    ),
    ("functional", &["coefficients", "modulation", "centralize"]),
    ("schedule", &["regime", "theta", "c_step", "gamma_delta", "invalid_theta"]),
    ("experiment", &["kind", "epsilons", "horizon", "replicates", "levels", "rates"]),
    ("poisson", &["grid_lo", "grid_hi", "grid_points"]),
    ("mf", &["paths", "horizon_s", "fine_step", "groups"]),
    ("output", &["directory", "formats", "snapshots", "snapshot_stride", "poisson_csv"]),
];

pub const DEFAULT_REPLICATES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Threads {
    Auto,
    #[serde(untagged)]
    Count(usize),
}

impl Threads {
    pub fn count(self) -> Option<usize> {
        match self {
            Threads::Auto => None,
            Threads::Count(n) => Some(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelConfig {
    /// `None` for a custom polynomial model.
    pub family: Option<BuiltinFamily>,
    pub kappa: f64,
    pub mu: f64,
    pub sigma: f64,
    pub alpha: Option<f64>,
    pub x0: Option<f64>,
    pub drift: Vec<f64>,
    pub diffusion: Vec<f64>,
    pub support: Option<[f64; 2]>,
    pub nu: f64,
    pub recurrence: [f64; 3],
    pub alpha_bar: f64,
    pub ellipticity: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalConfig {
    pub coefficients: Vec<f64>,
    /// Polynomial `m(t)` multiplying the spatial part.
    pub modulation: Option<Vec<f64>>,
    pub centralize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleConfig {
    pub regime: Regime,
    pub theta: f64,
    pub c_step: f64,
    pub gamma_delta: Option<f64>,
    pub invalid_theta: Option<f64>,
}

impl ScheduleConfig {
    pub fn policy(&self) -> StepPolicy {
        let p = StepPolicy::new(self.theta).with_c_step(self.c_step);
        match self.gamma_delta {
            Some(g) => p.with_gamma_mdp(g),
            None => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub epsilons: Vec<f64>,
    pub horizon: f64,
    pub replicates: usize,
    pub levels: Vec<f64>,
    pub rates: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoissonConfig {
    pub grid_lo: Option<f64>,
    pub grid_hi: Option<f64>,
    pub grid_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MfConfig {
    pub paths: usize,
    pub horizon_s: f64,
    pub fine_step: f64,
    pub groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub json: bool,
    pub csv: bool,
    /// Number of sample paths recorded at the smallest ε.
    pub snapshots: usize,
    pub snapshot_stride: u64,
    pub poisson_csv: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub functional: FunctionalConfig,
    pub schedule: ScheduleConfig,
    pub experiment: Option<ExperimentConfig>,
    pub poisson: PoissonConfig,
    pub mf: MfConfig,
    #[serde(skip)]
    pub output: OutputConfig,
    pub seed: u64,
    #[serde(skip)]
    pub threads: Threads,
}

/// All problems found in a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub errors: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} configuration error(s):", self.errors.len())?;
        for e in &self.errors {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

fn where_(section: &str, key: &str) -> String {
    if section.is_empty() {
        format!("'{key}'")
    } else {
        format!("'{key}' in [{section}]")
    }
}

/// Typed access to one section that records every failure.
struct Section<'a> {
    name: &'a str,
    table: Option<&'a Table>,
    errors: &'a mut Vec<String>,
}

impl<'a> Section<'a> {
    fn raw(&self, key: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn has(&self, key: &str) -> bool {
        self.raw(key).is_some()
    }

    fn fail(&mut self, key: &str, msg: impl fmt::Display) {
        let loc = where_(self.name, key);
        self.errors.push(format!("{loc}: {msg}"));
    }

    fn number(&mut self, key: &str) -> Option<f64> {
        match self.raw(key)? {
            Value::Float(v) => Some(*v),
            Value::Integer(v) => Some(*v as f64),
            other => {
                self.fail(key, format!("expected a number, got {}", other.type_str()));
                None
            }
        }
    }

    fn number_or(&mut self, key: &str, default: f64) -> f64 {
        self.number(key).unwrap_or(default)
    }

    fn positive(&mut self, key: &str, default: f64) -> f64 {
        let v = self.number_or(key, default);
        if !(v > 0.0 && v.is_finite()) {
            self.fail(key, format!("must be positive, got {v}"));
        }
        v
    }

    fn count(&mut self, key: &str, default: usize) -> usize {
        match self.raw(key) {
            None => default,
            Some(Value::Integer(v)) if *v > 0 => *v as usize,
            // integer-valued floats such as 1e5
            Some(Value::Float(v)) if *v > 0.0 && v.fract() == 0.0 && *v < 1e15 => *v as usize,
            Some(other) => {
                self.fail(key, format!("expected a positive integer, got {other}"));
                default
            }
        }
    }

    fn boolean(&mut self, key: &str, default: bool) -> bool {
        match self.raw(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(other) => {
                self.fail(key, format!("expected true or false, got {other}"));
                default
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.raw(key)? {
            Value::String(s) => Some(s.clone()),
            other => {
                self.fail(key, format!("expected a string, got {other}"));
                None
            }
        }
    }

    fn numbers(&mut self, key: &str) -> Option<Vec<f64>> {
        let Value::Array(items) = self.raw(key)? else {
            self.fail(key, "expected an array of numbers");
            return None;
        };
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            match item {
                Value::Float(v) => out.push(*v),
                Value::Integer(v) => out.push(*v as f64),
                other => {
                    self.fail(key, format!("array entries must be numbers, got {other}"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn pair(&mut self, key: &str) -> Option<[f64; 2]> {
        let v = self.numbers(key)?;
        if v.len() != 2 {
            self.fail(key, format!("expected two numbers, got {}", v.len()));
            return None;
        }
        Some([v[0], v[1]])
    }
}

/// Parses and validates a configuration file.
pub fn parse_config_file(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        errors: vec![format!("cannot read {}: {e}", path.display())],
    })?;
    parse_config(&text)
}

/// Parses and validates configuration text, reporting every problem found.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| ConfigError {
        errors: vec![format!("syntax error: {}", e.message().trim())],
    })?;
    let mut errors = Vec::new();

    for (key, value) in &root {
        match (KNOWN_KEYS.iter().find(|(s, _)| s == key), value) {
            (Some(_), Value::Table(table)) => {
                let known = KNOWN_KEYS.iter().find(|(s, _)| s == key).map(|(_, k)| *k).unwrap_or(&[]);
                for sub in table.keys() {
                    if !known.contains(&sub.as_str()) {
                        errors.push(format!("unknown key '{sub}' in section [{key}]"));
                    }
                }
            }
            (Some(_), _) => errors.push(format!("'{key}' must be a section")),
            (None, Value::Table(_)) => errors.push(format!("unknown section [{key}]")),
            (None, _) if KNOWN_KEYS[0].1.contains(&key.as_str()) => {}
            (None, _) => errors.push(format!("unknown key '{key}' at top level")),
        }
    }

    let table = |name: &str| root.get(name).and_then(Value::as_table);

    let mut top = Section {
        name: "",
        table: Some(&root),
        errors: &mut errors,
    };
    let seed = match top.raw("seed") {
        None => 1,
        Some(Value::Integer(v)) if *v >= 0 => *v as u64,
        Some(other) => {
            top.fail("seed", format!("expected a non-negative integer, got {other}"));
            1
        }
    };
    let threads = match top.raw("threads") {
        None => Threads::Auto,
        Some(Value::String(s)) if s == "auto" => Threads::Auto,
        Some(Value::Integer(n)) if *n > 0 => Threads::Count(*n as usize),
        Some(other) => {
            top.fail("threads", format!("expected \"auto\" or a positive integer, got {other}"));
            Threads::Auto
        }
    };

    let model = parse_model(table("model"), &mut errors);
    let functional = parse_functional(table("functional"), &mut errors);
    let experiment = parse_experiment(table("experiment"), &mut errors);
    let schedule = parse_schedule(table("schedule"), experiment.as_ref(), &mut errors);
    let poisson = parse_poisson(table("poisson"), &mut errors);
    let mf = parse_mf(table("mf"), &mut errors);
    let output = parse_output(table("output"), &mut errors);

    let mut cfg = RunConfig {
        model,
        functional,
        schedule,
        experiment,
        poisson,
        mf,
        output,
        seed,
        threads,
    };

    // cross-field checks need the model's Hölder exponent
    if errors.is_empty() {
        match build_model(&cfg.model) {
            Ok(model) => cross_check(&mut cfg, &model, root.contains_key("schedule"), &mut errors),
            Err(e) => errors.push(format!("[model]: {e}")),
        }
    }
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError { errors })
    }
}

fn parse_model(t: Option<&Table>, errors: &mut Vec<String>) -> ModelConfig {
    let mut s = Section {
        name: "model",
        table: t,
        errors,
    };
    if t.is_none() {
        s.errors.push("missing section [model]".into());
    }
    let family = match s.string("family").as_deref() {
        None => {
            if t.is_some() {
                s.fail("family", "is required");
            }
            None
        }
        Some(f) if f.eq_ignore_ascii_case("custom") => None,
        Some(f) => match f.parse::<BuiltinFamily>() {
            Ok(b) => Some(b),
            Err(_) => {
                s.fail("family", format!("unknown family '{f}' (OU, CIR, GOMPERTZ, POWER_DRIFT, CUSTOM)"));
                None
            }
        },
    };
    let custom = t.is_some() && family.is_none() && s.raw("family").and_then(Value::as_str).is_some_and(|f| f.eq_ignore_ascii_case("custom"));
    let drift = s.numbers("drift").unwrap_or_default();
    let diffusion = s.numbers("diffusion").unwrap_or_default();
    if custom {
        if drift.is_empty() {
            s.fail("drift", "custom models need drift coefficients");
        }
        if diffusion.is_empty() {
            s.fail("diffusion", "custom models need diffusion coefficients");
        }
    } else if family.is_some() {
        for key in ["drift", "diffusion", "support", "nu", "recurrence_alpha", "recurrence_gamma", "recurrence_radius", "alpha_bar", "ellipticity"] {
            if s.has(key) {
                s.fail(key, "only applies to family = \"CUSTOM\"");
            }
        }
        for key in ["kappa", "sigma"] {
            if !s.has(key) {
                s.fail(key, "is required for builtin families");
            }
        }
        if family == Some(BuiltinFamily::PowerDrift) && !s.has("alpha") {
            s.fail("alpha", "is required for POWER_DRIFT");
        }
    }
    let nu = s.number_or("nu", 1.0);
    if !(nu > 0.0 && nu <= 1.0) {
        s.fail("nu", format!("must lie in (0, 1], got {nu}"));
    }
    ModelConfig {
        family,
        kappa: s.number_or("kappa", 1.0),
        mu: s.number_or("mu", 0.0),
        sigma: s.number_or("sigma", 1.0),
        alpha: s.number("alpha"),
        x0: s.number("x0"),
        drift,
        diffusion,
        support: s.pair("support"),
        nu,
        recurrence: [
            s.number_or("recurrence_alpha", 1.0),
            s.number_or("recurrence_gamma", 1.0),
            s.number_or("recurrence_radius", 0.0),
        ],
        alpha_bar: s.number_or("alpha_bar", 1.0),
        ellipticity: s.pair("ellipticity"),
    }
}

fn parse_functional(t: Option<&Table>, errors: &mut Vec<String>) -> FunctionalConfig {
    let mut s = Section {
        name: "functional",
        table: t,
        errors,
    };
    if t.is_none() {
        s.errors.push("missing section [functional]".into());
    }
    let coefficients = s.numbers("coefficients").unwrap_or_default();
    if t.is_some() && coefficients.is_empty() {
        s.fail("coefficients", "needs at least one coefficient");
    }
    FunctionalConfig {
        coefficients,
        modulation: s.numbers("modulation"),
        centralize: s.boolean("centralize", true),
    }
}

fn parse_experiment(t: Option<&Table>, errors: &mut Vec<String>) -> Option<ExperimentConfig> {
    let t = t?;
    let mut s = Section {
        name: "experiment",
        table: Some(t),
        errors,
    };
    let kind = match s.string("kind") {
        None => {
            s.fail("kind", "is required");
            ExperimentKind::LlnRate
        }
        Some(k) => k.parse().unwrap_or_else(|_| {
            s.fail(
                "kind",
                format!("unknown kind '{k}' (LLN_RATE, CLT_NORMALITY, MDP_TAIL, SCHEDULE_VIOLATION, RIEMANN_VS_CONTINUOUS)"),
            );
            ExperimentKind::LlnRate
        }),
    };
    let epsilons = s.numbers("epsilons").unwrap_or_default();
    if epsilons.is_empty() {
        s.fail("epsilons", "needs at least one value");
    }
    for e in &epsilons {
        if !(*e > 0.0 && e.is_finite()) {
            s.fail("epsilons", format!("values must be positive, got {e}"));
        }
    }
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        s.fail("epsilons", "must be strictly decreasing");
    }
    let horizon = s.positive("horizon", 1.0);
    let replicates = s.count("replicates", DEFAULT_REPLICATES);
    let levels = s.numbers("levels").unwrap_or_default();
    if kind == ExperimentKind::MdpTail && levels.is_empty() {
        s.fail("levels", "MDP_TAIL needs at least one level");
    }
    if kind != ExperimentKind::MdpTail && !levels.is_empty() {
        s.fail("levels", "only applies to MDP_TAIL");
    }
    let rates = s.numbers("rates");
    if let Some(r) = &rates {
        if r.len() != levels.len() {
            s.fail("rates", format!("needs one rate per level ({} levels, {} rates)", levels.len(), r.len()));
        }
    }
    Some(ExperimentConfig {
        kind,
        epsilons,
        horizon,
        replicates,
        levels,
        rates,
    })
}

fn parse_schedule(t: Option<&Table>, exp: Option<&ExperimentConfig>, errors: &mut Vec<String>) -> ScheduleConfig {
    let mut s = Section {
        name: "schedule",
        table: t,
        errors,
    };
    let implied = exp.map(|e| e.kind.regime());
    let regime = match s.string("regime") {
        Some(r) => match r.parse::<Regime>() {
            Ok(r) => {
                if let (Some(i), Some(e)) = (implied, exp) {
                    if i != r {
                        s.fail("regime", format!("{r} does not match experiment kind {} (needs {i})", e.kind));
                    }
                }
                r
            }
            Err(_) => {
                s.fail("regime", format!("unknown regime '{r}' (LLN, CLT, MDP)"));
                Regime::Clt
            }
        },
        None => implied.unwrap_or(Regime::Clt),
    };
    let theta = match s.number("theta") {
        Some(v) => v,
        None => {
            if exp.is_some() {
                s.fail("theta", "is required");
            }
            2.5
        }
    };
    ScheduleConfig {
        regime,
        theta,
        c_step: s.positive("c_step", 1.0),
        gamma_delta: s.number("gamma_delta"),
        invalid_theta: s.number("invalid_theta"),
    }
}

fn parse_poisson(t: Option<&Table>, errors: &mut Vec<String>) -> PoissonConfig {
    let mut s = Section {
        name: "poisson",
        table: t,
        errors,
    };
    let cfg = PoissonConfig {
        grid_lo: s.number("grid_lo"),
        grid_hi: s.number("grid_hi"),
        grid_points: s.count("grid_points", 801),
    };
    if let (Some(lo), Some(hi)) = (cfg.grid_lo, cfg.grid_hi) {
        if lo >= hi {
            s.fail("grid_hi", format!("must exceed grid_lo ({lo} >= {hi})"));
        }
    }
    if cfg.grid_points < 3 {
        s.fail("grid_points", "needs at least 3 points");
    }
    cfg
}

fn parse_mf(t: Option<&Table>, errors: &mut Vec<String>) -> MfConfig {
    let mut s = Section {
        name: "mf",
        table: t,
        errors,
    };
    let cfg = MfConfig {
        paths: s.count("paths", 100_000),
        horizon_s: s.positive("horizon_s", 10.0),
        fine_step: s.positive("fine_step", 0.005),
        groups: s.count("groups", 64),
    };
    if cfg.groups < 2 {
        s.fail("groups", "needs at least 2 jackknife groups");
    }
    if cfg.fine_step >= cfg.horizon_s {
        s.fail("fine_step", "must be smaller than horizon_s");
    }
    cfg
}

fn parse_output(t: Option<&Table>, errors: &mut Vec<String>) -> OutputConfig {
    let mut s = Section {
        name: "output",
        table: t,
        errors,
    };
    let directory = PathBuf::from(s.string("directory").unwrap_or_else(|| "runs".into()));
    let (mut json, mut csv) = (true, true);
    if let Some(v) = s.raw("formats") {
        json = false;
        csv = false;
        match v.as_array() {
            Some(items) => {
                for item in items {
                    match item.as_str() {
                        Some("json") => json = true,
                        Some("csv") => csv = true,
                        _ => s.fail("formats", format!("entries must be \"json\" or \"csv\", got {item}")),
                    }
                }
            }
            None => s.fail("formats", "expected an array such as [\"json\", \"csv\"]"),
        }
    }
    let snapshots = match s.raw("snapshots") {
        Some(Value::Integer(0)) => 0,
        _ => s.count("snapshots", 0),
    };
    OutputConfig {
        directory,
        json,
        csv,
        snapshots,
        snapshot_stride: s.count("snapshot_stride", 100) as u64,
        poisson_csv: s.boolean("poisson_csv", true),
    }
}

/// Builds the model described by the `[model]` section.
pub fn build_model(m: &ModelConfig) -> ergodiff::Result<SdeModel> {
    if let Some(family) = m.family {
        let params = ModelParams {
            kappa: m.kappa,
            mu: m.mu,
            sigma: m.sigma,
            alpha: m.alpha,
            x0: m.x0,
        };
        return builtin_model(family, params);
    }
    let mut model = SdeModel::polynomial(Polynomial::new(m.drift.clone()), Polynomial::new(m.diffusion.clone()))
        .with_holder(m.nu)
        .with_recurrence(m.recurrence[0], m.recurrence[1], m.recurrence[2])
        .with_alpha_bar(m.alpha_bar);
    if let Some([lo, hi]) = m.support {
        model = model.with_support(Interval::new(lo, hi));
    }
    if let Some([l1, l2]) = m.ellipticity {
        model = model.with_ellipticity(l1, l2);
    }
    if let Some(x0) = m.x0 {
        model = model.with_initial_state(vec![x0]);
    }
    model.check_metadata()?;
    Ok(model)
}

/// The schedule is only checked when something will use it.
fn cross_check(cfg: &mut RunConfig, model: &SdeModel, schedule_given: bool, errors: &mut Vec<String>) {
    if schedule_given || cfg.experiment.is_some() {
        let policy = cfg.schedule.policy();
        if let Err(e) = validate_regime(cfg.schedule.regime, &policy, model.holder_nu) {
            errors.push(format!("[schedule]: {}", strip_prefix(&e.to_string())));
        }
    }
    let Some(exp) = &cfg.experiment else { return };
    if exp.kind == ExperimentKind::ScheduleViolation && cfg.schedule.invalid_theta.is_none() {
        errors.push("'invalid_theta' in [schedule]: SCHEDULE_VIOLATION needs a second (invalid) theta".into());
    }
    let spec = experiment_spec(cfg, model);
    if let Err(e) = spec.validate(model.holder_nu) {
        let msg = strip_prefix(&e.to_string());
        if !errors.iter().any(|m| m.contains(&msg)) {
            errors.push(format!("[experiment]: {msg}"));
        }
    }
}

fn strip_prefix(msg: &str) -> String {
    msg.trim_start_matches("invalid schedule: ")
        .trim_start_matches("invalid parameter: ")
        .to_string()
}

/// The harness spec for the `[experiment]` section (which must exist).
pub fn experiment_spec(cfg: &RunConfig, model: &SdeModel) -> ExperimentSpec {
    let exp = cfg.experiment.as_ref().expect("experiment section");
    let mut spec = ExperimentSpec::new(exp.kind, cfg.schedule.policy(), exp.epsilons.clone(), exp.horizon, exp.replicates)
        .with_seed(cfg.seed)
        .with_levels(exp.levels.clone())
        .with_threads(cfg.threads.count())
        .labelled(model.label.clone(), functional_label(&cfg.functional));
    if let Some(theta) = cfg.schedule.invalid_theta {
        spec = spec.with_invalid_policy(StepPolicy::new(theta).with_c_step(cfg.schedule.c_step));
    }
    spec
}

pub fn functional_label(f: &FunctionalConfig) -> String {
    let spatial = Polynomial::new(f.coefficients.clone()).to_string();
    match &f.modulation {
        Some(m) => format!("({}) * ({spatial})", Polynomial::new(m.clone())),
        None => spatial,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
family = "OU"
kappa = 1.0
mu = 0.0
sigma = 1.4142135623730951

[functional]
coefficients = [0.0, 1.0]

[schedule]
theta = 2.5

[experiment]
kind = "CLT_NORMALITY"
epsilons = [0.01]
"#;

    #[test]
    fn defaults_are_filled() {
        let cfg = parse_config(MINIMAL).unwrap();
        let exp = cfg.experiment.unwrap();
        assert_eq!(exp.replicates, 2000);
        assert_eq!(cfg.threads, Threads::Auto);
        assert_eq!(cfg.schedule.regime, Regime::Clt);
        assert!(cfg.functional.centralize);
        assert_eq!(cfg.output.directory, PathBuf::from("runs"));
    }

    #[test]
    fn clt_inequality_is_quoted() {
        let err = parse_config(&MINIMAL.replace("theta = 2.5", "theta = 1.2")).unwrap_err();
        assert!(
            err.errors.iter().any(|e| e.contains("CLT requires theta > 1 + 1/nu = 2.0, got 1.2")),
            "{err}"
        );
    }

    #[test]
    fn every_error_is_reported() {
        let text = MINIMAL
            .replace("epsilons = [0.01]", "epsilons = [-0.01]\nbogus = 3")
            .replace("[functional]", "[functional]\nwobble = true");
        let err = parse_config(&text).unwrap_err();
        assert!(err.errors.iter().any(|e| e == "unknown key 'bogus' in section [experiment]"), "{err}");
        assert!(err.errors.iter().any(|e| e == "unknown key 'wobble' in section [functional]"), "{err}");
        assert!(err.errors.iter().any(|e| e.contains("'epsilons' in [experiment]")), "{err}");
    }

    #[test]
    fn mdp_without_levels_is_rejected() {
        let text = MINIMAL
            .replace("CLT_NORMALITY", "MDP_TAIL")
            .replace("theta = 2.5", "theta = 2.5\ngamma_delta = 0.35");
        let err = parse_config(&text).unwrap_err();
        assert!(err.errors.iter().any(|e| e.contains("'levels'")), "{err}");
    }

    #[test]
    fn malformed_input_never_panics() {
        for text in ["[model", "seed = -1", "threads = 0", "[model]\nfamily = 3", "x = [1, \"a\"]", "[output]\nformats = 1"] {
            assert!(parse_config(text).is_err(), "{text}");
        }
    }

    #[test]
    fn integer_valued_floats_count() {
        let cfg = parse_config(&format!("{MINIMAL}\n[mf]\npaths = 1e5\n")).unwrap();
        assert_eq!(cfg.mf.paths, 100_000);
    }
}
