use super::{to_nested, CovarianceCurve, CovarianceRoute};
use crate::error::{Error, Result};
use crate::euler::{replicate_rng, EulerStepper, DEFAULT_BLOW_UP_BOUND};
use crate::model::{invariant_density_1d, FunctionalSpec, InverseCdfTable, SdeModel};
use crate::quadrature::QuadratureConfig;
use log::warn;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// RNG stage reserved for autocorrelation paths.
pub const AUTOCORRELATION_STAGE: u64 = 0xA0;

/// Largest admissible autocorrelation level at the end of the horizon,
/// relative to its value at lag zero.
const TAIL_RATIO_LIMIT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutocorrelationOptions {
    /// Lag horizon `S`.
    pub horizon_s: f64,
    pub n_paths: usize,
    pub fine_step: f64,
    /// Jackknife groups.
    pub groups: usize,
    pub seed: u64,
}

impl AutocorrelationOptions {
    pub fn new(horizon_s: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            horizon_s,
            n_paths,
            fine_step: 0.005,
            groups: 64,
            seed,
        }
    }

    pub fn with_fine_step(mut self, h: f64) -> Self {
        self.fine_step = h;
        self
    }
}

/// Sums of `f_i(X_0) f_j(X_{kh})` over the paths of one group.
struct GroupSums {
    paths: usize,
    sums: Vec<f64>,
}

/// Estimates `M_f(t)` from unit-speed Euler paths started in stationarity.
///
/// The lag integral is cut at `S` and completed by an exponential fitted to
/// the last quarter of the empirical autocorrelation; standard errors combine
/// a grouped jackknife with the size of that completion.
pub fn mf_autocorrelation_form(
    model: &SdeModel,
    f: &FunctionalSpec,
    t: f64,
    opts: &AutocorrelationOptions,
) -> Result<CovarianceCurve> {
    if !f.centralized {
        return Err(Error::Precondition(format!(
            "functional '{}' must be centralized before estimating its covariance",
            f.label
        )));
    }
    if !(opts.horizon_s > 0.0 && opts.fine_step > 0.0 && opts.fine_step < opts.horizon_s) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < fine step < S, got step {} and S {}",
            opts.fine_step, opts.horizon_s
        )));
    }
    if opts.n_paths < 2 || opts.groups < 2 {
        return Err(Error::InvalidParameter("need at least two paths and two jackknife groups".into()));
    }
    let n = f.dim_out;
    let lags = (opts.horizon_s / opts.fine_step).round() as usize;
    let h = opts.horizon_s / lags as f64;

    let table = if model.dim_state == 1 {
        let pi = invariant_density_1d(model, model.support, &QuadratureConfig::default())?;
        Some(InverseCdfTable::build(&pi, 20_000))
    } else {
        None
    };
    let burn_in = (10.0 * opts.horizon_s / h).ceil() as u64;

    let groups: Vec<Result<GroupSums>> = (0..opts.groups)
        .into_par_iter()
        .map(|g| {
            let mut sums = vec![0.0; (lags + 1) * n * n];
            let mut paths = 0;
            let sim = model.simulation_model();
            let mut stepper = EulerStepper::new(model, h);
            let mut dw = vec![0.0; sim.dim_noise];
            let mut x = vec![0.0; model.dim_state];
            let mut f0 = vec![0.0; n];
            let mut fk = vec![0.0; n];
            let sq = h.sqrt();
            for p in (g..opts.n_paths).step_by(opts.groups) {
                let mut rng = replicate_rng(opts.seed, AUTOCORRELATION_STAGE, p as u64);
                let mut z = match &table {
                    Some(tab) => model.to_simulation_state(&[tab.quantile(rng.gen::<f64>())]),
                    None => model.to_simulation_state(&model.initial_state),
                };
                let mut advance = |z: &mut Vec<f64>, rng: &mut rand_chacha::ChaCha8Rng, step: u64| -> Result<()> {
                    for w in dw.iter_mut() {
                        *w = sq * rng.sample::<f64, _>(StandardNormal);
                    }
                    stepper.step(z, &dw);
                    let norm_sq: f64 = z.iter().map(|v| v * v).sum();
                    if !(norm_sq <= DEFAULT_BLOW_UP_BOUND * DEFAULT_BLOW_UP_BOUND) {
                        return Err(Error::TrajectoryExploded {
                            step,
                            norm: norm_sq.sqrt(),
                        });
                    }
                    Ok(())
                };
                if table.is_none() {
                    for s in 0..burn_in {
                        advance(&mut z, &mut rng, s)?;
                    }
                }
                model.from_simulation_state(&z, &mut x);
                f.eval_into(t, &x, &mut f0);
                for k in 0..=lags {
                    if k > 0 {
                        advance(&mut z, &mut rng, k as u64)?;
                        model.from_simulation_state(&z, &mut x);
                    }
                    f.eval_into(t, &x, &mut fk);
                    let row = &mut sums[k * n * n..(k + 1) * n * n];
                    for i in 0..n {
                        for j in 0..n {
                            row[i * n + j] += f0[i] * fk[j];
                        }
                    }
                }
                paths += 1;
            }
            Ok(GroupSums { paths, sums })
        })
        .collect();
    let groups: Vec<GroupSums> = groups.into_iter().collect::<Result<_>>()?;

    let total_paths: usize = groups.iter().map(|g| g.paths).sum();
    let mut total = vec![0.0; (lags + 1) * n * n];
    for g in &groups {
        for (t, s) in total.iter_mut().zip(&g.sums) {
            *t += s;
        }
    }
    let full = lag_integral(&scaled(&total, total_paths), n, lags, h);
    if full.zero {
        let zero = DMatrix::zeros(n, n);
        let mut curve = CovarianceCurve::new(vec![t], vec![zero.clone()], CovarianceRoute::AutocorrelationForm)?;
        curve.stderr = Some(vec![to_nested(&zero)]);
        return Ok(curve);
    }
    if full.tail_ratio > TAIL_RATIO_LIMIT {
        return Err(Error::HorizonTooShort { ratio: full.tail_ratio });
    }

    let used: Vec<&GroupSums> = groups.iter().filter(|g| g.paths > 0).collect();
    let gcount = used.len() as f64;
    let leave_out: Vec<DMatrix<f64>> = used
        .iter()
        .map(|g| {
            let rest: Vec<f64> = total.iter().zip(&g.sums).map(|(a, b)| a - b).collect();
            lag_integral(&scaled(&rest, total_paths - g.paths), n, lags, h).value
        })
        .collect();
    let mean = leave_out.iter().fold(DMatrix::zeros(n, n), |acc, m| acc + m) / gcount;
    let spread = leave_out
        .iter()
        .fold(DMatrix::zeros(n, n), |acc, m| acc + (m - &mean).map(|v| v * v));
    let jk_var = spread * ((gcount - 1.0) / gcount);
    let se = DMatrix::from_fn(n, n, |i, j| (jk_var[(i, j)] + full.remainder_uncertainty[(i, j)].powi(2)).sqrt());

    let value = project_psd(full.value);
    let mut curve = CovarianceCurve::new(vec![t], vec![value], CovarianceRoute::AutocorrelationForm)?;
    curve.stderr = Some(vec![to_nested(&se)]);
    curve.lower_confidence = table.is_none();
    Ok(curve)
}

fn scaled(sums: &[f64], paths: usize) -> Vec<f64> {
    sums.iter().map(|s| s / paths as f64).collect()
}

struct LagIntegral {
    value: DMatrix<f64>,
    remainder_uncertainty: DMatrix<f64>,
    tail_ratio: f64,
    zero: bool,
}

/// `∫_0^∞ (C_ij + C_ji)(s) ds` from the mean cross-correlations `c` on the
/// lag grid, with an exponential tail beyond the last lag.
fn lag_integral(c: &[f64], n: usize, lags: usize, h: f64) -> LagIntegral {
    let k_at = |k: usize, i: usize, j: usize| c[k * n * n + i * n + j] + c[k * n * n + j * n + i];
    let q = (3 * lags).div_ceil(4);
    let mid = (q + lags).div_ceil(2);
    let mut value = DMatrix::zeros(n, n);
    let mut unc = DMatrix::zeros(n, n);
    let mut ratio: f64 = 0.0;
    let mut zero = true;
    for i in 0..n {
        for j in i..n {
            let mut trap = 0.5 * (k_at(0, i, j) + k_at(lags, i, j));
            for k in 1..lags {
                trap += k_at(k, i, j);
            }
            trap *= h;
            let block = |a: usize, b: usize| (a..b).map(|k| k_at(k, i, j)).sum::<f64>() / (b - a) as f64;
            let (b1, b2) = (block(q, mid), block(mid, lags + 1));
            let gap = 0.5 * ((lags + 1 - q) as f64) * h;
            let (rem, rem_unc) = if b1 * b2 > 0.0 && b2.abs() < b1.abs() {
                let rate = (b1 / b2).ln() / gap;
                // block mean of an exponential exceeds its midpoint value by sinh(y)/y
                let y = rate * 0.5 * (lags - mid) as f64 * h;
                let at_end = b2 * (-y).exp() * if y > 0.0 { y / y.sinh() } else { 1.0 };
                let r = at_end / rate;
                (r, r.abs())
            } else {
                (0.0, b2.abs() * gap)
            };
            value[(i, j)] = trap + rem;
            value[(j, i)] = trap + rem;
            unc[(i, j)] = rem_unc;
            unc[(j, i)] = rem_unc;
            let scale = (k_at(0, i, i) * k_at(0, j, j)).abs().sqrt();
            if scale > 0.0 {
                zero = false;
                ratio = ratio.max(b2.abs() / scale);
            }
        }
    }
    LagIntegral {
        value,
        remainder_uncertainty: unc,
        tail_ratio: ratio,
        zero,
    }
}

/// Clips negative eigenvalues produced by sampling noise.
fn project_psd(m: DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 1 {
        return m;
    }
    let eig = m.clone().symmetric_eigen();
    let worst = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if worst >= 0.0 {
        return m;
    }
    warn!("clipping negative covariance eigenvalue {worst:e} from sampling noise");
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let r = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (&r + r.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, BuiltinFamily, ModelParams};

    fn ou() -> SdeModel {
        builtin_model(BuiltinFamily::Ou, ModelParams::new(1.0, 0.0, 2f64.sqrt())).unwrap()
    }

    #[test]
    fn zero_functional_is_exactly_zero() {
        let c = mf_autocorrelation_form(&ou(), &FunctionalSpec::zero(1), 0.0, &AutocorrelationOptions::new(2.0, 200, 1))
            .unwrap();
        assert_eq!(c.scalar(), 0.0);
        assert_eq!(c.scalar_stderr(), Some(0.0));
    }

    #[test]
    fn short_horizon_is_rejected() {
        let f = FunctionalSpec::scalar("x", |x| x).assume_centralized();
        let err = mf_autocorrelation_form(&ou(), &f, 0.0, &AutocorrelationOptions::new(1.0, 2000, 3)).unwrap_err();
        match err {
            Error::HorizonTooShort { ratio } => assert!(ratio > 0.1),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn exact_exponential_tail_is_recovered() {
        // C(s) = e^{-s}/2 so K = e^{-s} and the full integral is 1
        let (lags, h) = (1000, 0.005);
        let c: Vec<f64> = (0..=lags).map(|k| 0.5 * (-(k as f64) * h).exp()).collect();
        let r = lag_integral(&c, 1, lags, h);
        assert!((r.value[(0, 0)] - 1.0).abs() < 1e-5, "{}", r.value[(0, 0)]);
    }

    #[test]
    fn result_is_thread_count_independent() {
        let f = FunctionalSpec::scalar("x", |x| x).assume_centralized();
        let opts = AutocorrelationOptions::new(6.0, 300, 11).with_fine_step(0.01);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| mf_autocorrelation_form(&ou(), &f, 0.0, &opts))
        };
        let (a, b) = (run(1), run(4));
        match (a, b) {
            (Ok(a), Ok(b)) => assert_eq!(a, b),
            (Err(a), Err(b)) => assert_eq!(a.to_string(), b.to_string()),
            _ => panic!("thread count changed the outcome"),
        }
    }
}
