//! Sampled audits of the recurrence, ellipticity, Hölder and drift-growth
//! hypotheses on a finite probe grid.
//!
//! Constants whose existence is only asserted (Hölder constants, the drift
//! growth constant) are fitted: a condition fails when the constant needed on
//! the grid exceeds ten times the median probe ratio.

use super::SdeModel;
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

const PROBES_PER_AXIS: usize = 41;
const MAX_PAIR_PROBES: usize = 200;
const FIT_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    Recurrence,
    Ellipticity,
    Holder,
    DriftGrowth,
}

impl ConditionKind {
    pub fn describe(self) -> &'static str {
        match self {
            Self::Recurrence => "recurrence <x,b(x)> <= -gamma |x|^(1+alpha) for |x| > B",
            Self::Ellipticity => "uniform ellipticity lambda1 |y|^2 <= y^T a(x) y <= lambda2 |y|^2",
            Self::Holder => "Hölder continuity of b and sigma with exponent nu",
            Self::DriftGrowth => "drift growth |b(x)| <= C (1 + |x|^alpha_bar)",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub kind: ConditionKind,
    pub passed: bool,
    /// Tightest margin on the grid; its sign convention is condition-specific
    /// and spelled out in `detail`.
    pub margin: f64,
    pub worst_probe: Vec<f64>,
    pub fitted_constant: Option<f64>,
    pub violations: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub model: String,
    /// `true` when the audit ran on the log-transformed simulation dynamics.
    pub log_coordinates: bool,
    pub probes: usize,
    pub checks: Vec<ConditionCheck>,
}

impl ConditionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, kind: ConditionKind) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.kind == kind)
    }
}

/// Tensor grid of 41 points per axis over `[−5s, 5s]^d` with `s = max(1, B)`;
/// for a half-line support, 41 interior points of `(lo, lo + 10s]`.
pub fn default_probe_grid(model: &SdeModel) -> Vec<Vec<f64>> {
    let m = model.simulation_model();
    let scale = m.recurrence_radius.max(1.0);
    let n = PROBES_PER_AXIS;
    if m.dim_state == 1 && m.support.lo.is_finite() {
        let lo = m.support.lo;
        let width = 10.0 * scale;
        return (1..=n)
            .map(|k| vec![lo + width * k as f64 / n as f64])
            .collect();
    }
    let axis: Vec<f64> = (0..n)
        .map(|k| -5.0 * scale + 10.0 * scale * k as f64 / (n - 1) as f64)
        .collect();
    let d = m.dim_state;
    let total = n.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            (0..d)
                .map(|_| {
                    let v = axis[idx % n];
                    idx /= n;
                    v
                })
                .collect()
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

struct ProbeValues {
    x: Vec<f64>,
    b: Vec<f64>,
    sigma: Vec<f64>,
}

/// Audits the simulated dynamics (for log-transformed models, the process in
/// `y = ln x`) on `probe_grid`.
pub fn validate_conditions(model: &SdeModel, probe_grid: &[Vec<f64>]) -> Result<ConditionReport> {
    if probe_grid.is_empty() {
        return Err(Error::Precondition("probe grid is empty".into()));
    }
    let m = model.simulation_model();
    let (d, k) = (m.dim_state, m.dim_noise);
    let mut probes = Vec::with_capacity(probe_grid.len());
    for x in probe_grid {
        if x.len() != d {
            return Err(Error::Dimension(format!(
                "probe {x:?} has length {}, model dimension is {d}",
                x.len()
            )));
        }
        let mut b = vec![0.0; d];
        let mut sigma = vec![0.0; d * k];
        m.drift_into(x, &mut b);
        m.diffusion_into(x, &mut sigma);
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteAtProbe {
                what: "drift",
                probe: x.clone(),
            });
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteAtProbe {
                what: "diffusion",
                probe: x.clone(),
            });
        }
        probes.push(ProbeValues {
            x: x.clone(),
            b,
            sigma,
        });
    }

    let checks = vec![
        check_recurrence(m, &probes),
        check_ellipticity(m, &probes),
        check_holder(m, &probes),
        check_drift_growth(m, &probes),
    ];
    Ok(ConditionReport {
        model: model.label.clone(),
        log_coordinates: model.is_log_transformed(),
        probes: probes.len(),
        checks,
    })
}

fn check_recurrence(m: &SdeModel, probes: &[ProbeValues]) -> ConditionCheck {
    let (alpha, gamma, radius) = (m.recurrence_alpha, m.recurrence_gamma, m.recurrence_radius);
    let mut worst = f64::NEG_INFINITY;
    let mut worst_probe = Vec::new();
    let mut violations = 0;
    let mut eligible = 0;
    for p in probes {
        let r = norm(&p.x);
        if r <= radius {
            continue;
        }
        eligible += 1;
        let bound = gamma * r.powf(1.0 + alpha);
        let inner: f64 = p.x.iter().zip(&p.b).map(|(x, b)| x * b).sum();
        let margin = inner + bound;
        if margin > 1e-9 * (1.0 + bound) {
            violations += 1;
        }
        if margin > worst {
            worst = margin;
            worst_probe = p.x.clone();
        }
    }
    ConditionCheck {
        kind: ConditionKind::Recurrence,
        passed: violations == 0,
        margin: if eligible == 0 { 0.0 } else { worst },
        worst_probe,
        fitted_constant: None,
        violations,
        detail: format!(
            "max of <x,b(x)> + gamma|x|^(1+alpha) over {eligible} probes beyond B = {radius} \
             (alpha = {alpha}, gamma = {gamma}); must be <= 0"
        ),
    }
}

fn diffusion_eigen_range(d: usize, k: usize, sigma: &[f64]) -> (f64, f64) {
    if d == 1 {
        let a: f64 = sigma.iter().map(|s| s * s).sum();
        return (a, a);
    }
    let s = DMatrix::from_row_slice(d, k, sigma);
    let a = &s * s.transpose();
    let eig = a.symmetric_eigenvalues();
    (eig.min(), eig.max())
}

fn check_ellipticity(m: &SdeModel, probes: &[ProbeValues]) -> ConditionCheck {
    let (d, k) = (m.dim_state, m.dim_noise);
    let mut lower = f64::INFINITY;
    let mut upper = f64::NEG_INFINITY;
    let mut worst_probe = Vec::new();
    let mut violations = 0;
    for p in probes {
        let (lo, hi) = diffusion_eigen_range(d, k, &p.sigma);
        let bad = match m.ellipticity_bounds {
            Some((l1, l2)) => lo < l1 * (1.0 - 1e-9) || hi > l2 * (1.0 + 1e-9) || lo <= 0.0,
            None => lo <= 0.0,
        };
        if bad {
            violations += 1;
        }
        if lo < lower {
            lower = lo;
            worst_probe = p.x.clone();
        }
        upper = upper.max(hi);
    }
    let declared = match m.ellipticity_bounds {
        Some((l1, l2)) => format!("declared ({l1}, {l2})"),
        None => "no declared bounds; positivity only".to_string(),
    };
    ConditionCheck {
        kind: ConditionKind::Ellipticity,
        passed: violations == 0,
        margin: lower.max(0.0),
        worst_probe,
        fitted_constant: Some(upper),
        violations,
        detail: format!(
            "smallest eigenvalue of a(x) on the grid is {lower:e}, largest {upper:e}; {declared}"
        ),
    }
}

fn check_holder(m: &SdeModel, probes: &[ProbeValues]) -> ConditionCheck {
    let nu = m.holder_nu;
    let stride = probes.len().div_ceil(MAX_PAIR_PROBES).max(1);
    let subset: Vec<&ProbeValues> = probes.iter().step_by(stride).collect();
    let mut ratios_b = Vec::new();
    let mut ratios_s = Vec::new();
    let mut worst = (0.0f64, Vec::new());
    for (i, p) in subset.iter().enumerate() {
        for q in &subset[i + 1..] {
            let h = dist(&p.x, &q.x);
            if h == 0.0 {
                continue;
            }
            let hn = h.powf(nu);
            let rb = dist(&p.b, &q.b) / hn;
            let rs = dist(&p.sigma, &q.sigma) / hn;
            if rb.max(rs) > worst.0 {
                worst = (rb.max(rs), p.x.clone());
            }
            ratios_b.push(rb);
            ratios_s.push(rs);
        }
    }
    let max_b = ratios_b.iter().cloned().fold(0.0, f64::max);
    let max_s = ratios_s.iter().cloned().fold(0.0, f64::max);
    let med_b = median(&mut ratios_b);
    let med_s = median(&mut ratios_s);
    let fits = |max: f64, med: f64| max.is_finite() && max <= FIT_FACTOR * med || max == 0.0;
    let passed = fits(max_b, med_b) && fits(max_s, med_s);
    ConditionCheck {
        kind: ConditionKind::Holder,
        passed,
        margin: (FIT_FACTOR * med_b - max_b).min(FIT_FACTOR * med_s - max_s),
        worst_probe: worst.1,
        fitted_constant: Some(max_b.max(max_s)),
        violations: usize::from(!passed),
        detail: format!(
            "nu = {nu}: L_b = {max_b:.4e} (median ratio {med_b:.4e}), \
             L_sigma = {max_s:.4e} (median ratio {med_s:.4e})"
        ),
    }
}

fn check_drift_growth(m: &SdeModel, probes: &[ProbeValues]) -> ConditionCheck {
    let ab = m.drift_growth_alpha_bar;
    let mut ratios = Vec::with_capacity(probes.len());
    let (mut num, mut den) = (0.0, 0.0);
    let mut worst = (f64::NEG_INFINITY, Vec::new());
    for p in probes {
        let w = 1.0 + norm(&p.x).powf(ab);
        let bn = norm(&p.b);
        num += bn * w;
        den += w * w;
        let r = bn / w;
        if r > worst.0 {
            worst = (r, p.x.clone());
        }
        ratios.push(r);
    }
    let least_squares = if den > 0.0 { num / den } else { 0.0 };
    let required = worst.0.max(0.0);
    let med = median(&mut ratios);
    let passed = required == 0.0 || required <= FIT_FACTOR * med;
    ConditionCheck {
        kind: ConditionKind::DriftGrowth,
        passed,
        margin: FIT_FACTOR * med - required,
        worst_probe: worst.1,
        fitted_constant: Some(required),
        violations: usize::from(!passed),
        detail: format!(
            "alpha_bar = {ab}: least-squares constant {least_squares:.4e}, \
             grid-wide constant {required:.4e}, median ratio {med:.4e}"
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, BuiltinFamily, ModelParams};

    fn ou() -> SdeModel {
        builtin_model(BuiltinFamily::Ou, ModelParams::new(1.0, 0.0, 2f64.sqrt())).unwrap()
    }

    #[test]
    fn ou_passes_on_integer_grid() {
        let grid: Vec<Vec<f64>> = (-3..=3).map(|k| vec![k as f64]).collect();
        let report = validate_conditions(&ou(), &grid).unwrap();
        assert!(report.all_passed(), "{report:#?}");
        // ⟨x,−x⟩ + |x|² = 0 exactly
        assert_eq!(report.check(ConditionKind::Recurrence).unwrap().margin, 0.0);
    }

    #[test]
    fn sign_flipped_drift_fails_recurrence_everywhere() {
        let m = SdeModel::scalar("repulsive", |x| x, |_| 2f64.sqrt());
        let grid: Vec<Vec<f64>> = (-3..=3).map(|k| vec![k as f64]).collect();
        let report = validate_conditions(&m, &grid).unwrap();
        let rec = report.check(ConditionKind::Recurrence).unwrap();
        assert!(!rec.passed);
        assert_eq!(rec.violations, 6);
        assert_eq!(rec.worst_probe.len(), 1);
        assert_eq!(rec.worst_probe[0].abs(), 3.0);
    }

    #[test]
    fn zero_diffusion_fails_ellipticity_with_zero_margin() {
        let m = SdeModel::scalar("degenerate", |x| -x, |_| 0.0);
        let report = validate_conditions(&m, &default_probe_grid(&m)).unwrap();
        let ell = report.check(ConditionKind::Ellipticity).unwrap();
        assert!(!ell.passed);
        assert_eq!(ell.margin, 0.0);
    }

    #[test]
    fn non_finite_drift_names_probe() {
        let m = SdeModel::scalar("singular", |x| -1.0 / x, |_| 1.0);
        let err = validate_conditions(&m, &[vec![1.0], vec![0.0]]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteAtProbe { what: "drift", ref probe } if probe == &vec![0.0]));
    }

    #[test]
    fn builtins_pass_default_grid() {
        let cases = [
            (BuiltinFamily::Ou, ModelParams::new(1.0, 0.0, 2f64.sqrt())),
            (BuiltinFamily::Ou, ModelParams::new(2.0, 3.0, 0.5)),
            (BuiltinFamily::Cir, ModelParams::new(1.0, 1.0, 1.0)),
            (BuiltinFamily::Gompertz, ModelParams::new(1.0, 1.0, 1.0)),
            (BuiltinFamily::PowerDrift, ModelParams::power(1.0, 1.0, 2.0)),
            (BuiltinFamily::PowerDrift, ModelParams::power(1.0, 1.0, 0.5)),
        ];
        for (family, params) in cases {
            let m = builtin_model(family, params).unwrap();
            let report = validate_conditions(&m, &default_probe_grid(&m)).unwrap();
            assert!(report.all_passed(), "{family}: {report:#?}");
        }
    }

    #[test]
    fn two_dimensional_grid_is_tensor_product() {
        let m = SdeModel::new(
            "ou2",
            2,
            2,
            std::sync::Arc::new(|x, out| {
                out[0] = -x[0];
                out[1] = -x[1];
            }),
            std::sync::Arc::new(|_, out| {
                out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
            }),
        )
        .with_ellipticity(1.0, 1.0);
        let grid = default_probe_grid(&m);
        assert_eq!(grid.len(), 41 * 41);
        assert!(validate_conditions(&m, &grid).unwrap().all_passed());
    }
}
