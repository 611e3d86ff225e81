use ergodiff::euler::StepPolicy;
use ergodiff::harness::{
    clt_statistics, ks_distance, ks_threshold, mdp_rate_closed_form, run_clt_normality, run_lln_rate,
    run_mdp_clt_sanity, run_mdp_tail, run_riemann_vs_continuous, run_schedule_violation, ExperimentKind,
    ExperimentSpec,
};
use ergodiff::model::{builtin_model, BuiltinFamily, FunctionalSpec, ModelParams, SdeModel};
use ergodiff::variance::{CovarianceCurve, CovarianceRoute};
use ergodiff::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

fn ou() -> SdeModel {
    builtin_model(BuiltinFamily::Ou, ModelParams::new(1.0, 0.0, 2f64.sqrt())).unwrap()
}

fn identity() -> FunctionalSpec {
    FunctionalSpec::scalar("x", |x| x).assume_centralized()
}

fn m_const(v: f64) -> CovarianceCurve {
    CovarianceCurve::constant_scalar(v, CovarianceRoute::GradientForm)
}

/// Sup of |F_n − Φ| probed on both sides of every sample point.
fn brute_ks(sample: &[f64], sd: f64) -> f64 {
    let phi = Normal::new(0.0, sd).unwrap();
    let n = sample.len() as f64;
    let ecdf = |x: f64, strict: bool| sample.iter().filter(|&&s| if strict { s < x } else { s <= x }).count() as f64 / n;
    sample
        .iter()
        .map(|&x| (ecdf(x, false) - phi.cdf(x)).abs().max((ecdf(x, true) - phi.cdf(x)).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn ks_on_exact_quantiles() {
    let n = 10;
    let phi = Normal::new(0.0, 1.0).unwrap();
    let sample: Vec<f64> = (1..=n).map(|i| phi.inverse_cdf((i as f64 - 0.5) / n as f64)).collect();
    let d = ks_distance(&sample, 1.0).unwrap();
    // the quantile function is accurate to about 1e-10
    assert!((d - 0.05).abs() < 1e-9, "{d}");
    assert!((d - brute_ks(&sample, 1.0)).abs() < 1e-12);
}

#[test]
fn ks_degenerate_and_rejecting_samples() {
    assert_eq!(ks_distance(&vec![0.0; 200], 1.0).unwrap(), 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let uni: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let d = ks_distance(&uni, 1.0).unwrap();
    assert!((d - brute_ks(&uni[..500], 1.0)).abs() < 0.1);
    assert!(d > ks_threshold(uni.len(), 0.01));
    assert!(ks_distance(&[0.0, f64::NAN], 1.0).is_err());
    assert!(ks_distance(&[0.0, 1.0], 0.0).is_err());
}

#[test]
fn ks_matches_brute_force_on_random_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s: Vec<f64> = (0..300).map(|_| 1.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    assert!((ks_distance(&s, 2.0).unwrap() - brute_ks(&s, 2f64.sqrt())).abs() < 1e-12);
}

#[test]
fn synthetic_normal_passes_clt_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let s: Vec<f64> = (0..4000).map(|_| rng.sample(StandardNormal)).collect();
    let stats = clt_statistics(&s, 1.0).unwrap();
    assert!(stats.passed(), "{stats:?}");
    assert!((stats.variance - 1.0).abs() < 4.0 * (2.0f64 / 4000.0).sqrt());
}

#[test]
fn lln_rate_on_ou() {
    let spec = ExperimentSpec::new(ExperimentKind::LlnRate, StepPolicy::new(1.5), vec![0.08, 0.04, 0.02, 0.01], 1.0, 2000)
        .with_seed(17);
    let r = run_lln_rate(&spec, &ou(), &identity()).unwrap();
    assert!(r.passed, "{:#?}", r.verdicts);
    let slope = r.fits[0].slope;
    assert!((slope - 0.5).abs() <= 0.1, "{slope}");
}

#[test]
fn lln_zero_functional_and_short_list() {
    let spec = ExperimentSpec::new(ExperimentKind::LlnRate, StepPolicy::new(1.5), vec![0.08, 0.04, 0.02], 1.0, 50);
    let r = run_lln_rate(&spec, &ou(), &FunctionalSpec::zero(1)).unwrap();
    assert!(r.passed);
    assert!(r.flags.iter().any(|f| f == "zero functional"));
    assert!(r.rows.iter().all(|row| row.sup_mean == 0.0));

    let spec = ExperimentSpec::new(ExperimentKind::LlnRate, StepPolicy::new(1.5), vec![0.08], 1.0, 50);
    let err = run_lln_rate(&spec, &ou(), &identity()).unwrap_err();
    assert!(matches!(err, Error::TooFewEpsilons(1)));
    assert!(err.to_string().contains("need ≥ 3 epsilons for slope fit"));
}

#[test]
fn clt_on_ou_at_moderate_epsilon() {
    let spec = ExperimentSpec::new(ExperimentKind::CltNormality, StepPolicy::new(2.5), vec![0.04, 0.02], 1.0, 1500)
        .with_seed(3);
    let r = run_clt_normality(&spec, &ou(), &identity(), &m_const(2.0)).unwrap();
    assert!(r.passed, "{:#?}", r.verdicts);
    assert_eq!(r.verdicts.len(), 4);
}

#[test]
fn clt_on_cir_with_its_own_schedule() {
    let cir = builtin_model(BuiltinFamily::Cir, ModelParams::new(1.0, 1.0, 1.0)).unwrap();
    let f = FunctionalSpec::scalar("x - 1", |x| x - 1.0).assume_centralized();
    // ν = ½ for CIR, so the CLT needs θ > 3
    let spec = ExperimentSpec::new(ExperimentKind::CltNormality, StepPolicy::new(2.5), vec![0.05], 1.0, 1000);
    assert!(run_clt_normality(&spec, &cir, &f, &m_const(1.0)).is_err());
    let spec = ExperimentSpec::new(ExperimentKind::CltNormality, StepPolicy::new(3.2), vec![0.05], 1.0, 2000).with_seed(8);
    let r = run_clt_normality(&spec, &cir, &f, &m_const(1.0)).unwrap();
    let v = r.rows[0].var[0];
    assert!((v - 1.0).abs() < 0.1, "{v}");
}

fn mdp_spec(levels: Vec<f64>, n: usize) -> ExperimentSpec {
    ExperimentSpec::new(
        ExperimentKind::MdpTail,
        StepPolicy::new(2.5).with_gamma_mdp(0.35),
        vec![0.08, 0.04],
        1.0,
        n,
    )
    .with_levels(levels)
    .with_seed(5)
}

#[test]
fn mdp_level_zero_is_trivial() {
    let r = run_mdp_tail(&mdp_spec(vec![0.0], 200), &ou(), &identity(), &[0.0]).unwrap();
    for row in &r.rows {
        assert_eq!(row.tail[0].frequency, 1.0);
        assert_eq!(row.tail[0].beta_log_p, Some(0.0));
    }
    assert!(r.passed, "{:#?}", r.verdicts);
    assert!(r.flags.iter().any(|f| f.starts_with("calibration-grade")));
}

#[test]
fn mdp_rejects_unreachable_levels() {
    let rate = mdp_rate_closed_form(3.0, 1.0, 2.0);
    let err = run_mdp_tail(&mdp_spec(vec![3.0], 200), &ou(), &identity(), &[rate]).unwrap_err();
    assert!(matches!(err, Error::Precondition(_)), "{err}");
}

#[test]
fn mdp_sqrt_epsilon_matches_gaussian_tail() {
    let spec = ExperimentSpec::new(
        ExperimentKind::MdpTail,
        StepPolicy::new(2.5).with_gamma_mdp(0.35),
        vec![0.04],
        1.0,
        3000,
    )
    .with_levels(vec![0.5, 1.5, 2.5])
    .with_seed(12);
    let r = run_mdp_clt_sanity(&spec, &ou(), &identity(), &m_const(2.0)).unwrap();
    assert!(r.passed, "{:#?}", r.verdicts);
}

#[test]
fn schedule_violation_reports_both_sides() {
    let spec = ExperimentSpec::new(ExperimentKind::ScheduleViolation, StepPolicy::new(2.5), vec![0.02], 1.0, 1000)
        .with_invalid_policy(StepPolicy::new(1.0))
        .with_seed(2);
    let r = run_schedule_violation(&spec, &ou(), &identity(), &m_const(2.0)).unwrap();
    assert_eq!(r.rows.len(), 2);
    assert_eq!(r.rows[1].schedule, "invalid");
    assert!(r.verdicts[1].informative);
    assert!(r.passed, "{:#?}", r.verdicts);

    let zero = run_schedule_violation(&spec, &ou(), &FunctionalSpec::zero(1), &m_const(0.0)).unwrap();
    assert!(zero.rows.iter().all(|row| row.var[0] == 0.0));
    assert!(zero.passed);
}

#[test]
fn riemann_gap_shrinks() {
    let spec = ExperimentSpec::new(
        ExperimentKind::RiemannVsContinuous,
        StepPolicy::new(2.5),
        vec![0.08, 0.04, 0.02],
        1.0,
        400,
    )
    .with_seed(6);
    let r = run_riemann_vs_continuous(&spec, &ou(), &identity()).unwrap();
    assert!(r.passed, "{:#?}", r.rows.iter().map(|r| r.gap_mean).collect::<Vec<_>>());
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let base = ExperimentSpec::new(ExperimentKind::LlnRate, StepPolicy::new(1.5), vec![0.08, 0.04, 0.02], 1.0, 300)
        .with_seed(99);
    let a = run_lln_rate(&base.clone().with_threads(Some(1)), &ou(), &identity()).unwrap();
    let b = run_lln_rate(&base.with_threads(Some(3)), &ou(), &identity()).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let mut csv = Vec::new();
    a.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("epsilon,delta_step,delta_scale,schedule,n,failed,mean,var,sup_mean,ks"));
    assert_eq!(text.lines().count(), 4);
}
