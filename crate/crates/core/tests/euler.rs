use ergodiff::euler::{
    replicate_rng, simulate_controlled, simulate_euler, ControlFunction, EulerStepper, Regime,
    SimulationOptions, StepPolicy, StepSchedule,
};
use ergodiff::model::{builtin_model, BuiltinFamily, FunctionalSpec, ModelParams, SdeModel};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn ou() -> SdeModel {
    builtin_model(BuiltinFamily::Ou, ModelParams::new(1.0, 0.0, 2f64.sqrt())).unwrap()
}

fn identity() -> FunctionalSpec {
    FunctionalSpec::scalar("x", |x| x).assume_centralized()
}

fn mean_and_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn ou_lln_mean_is_zero() {
    let eps: f64 = 0.01;
    let s = StepSchedule::with_step(eps, eps.powi(3), 1.0, Regime::Lln).unwrap();
    let m = ou();
    let xi: Vec<f64> = (0..2000)
        .map(|r| {
            simulate_euler(&m, &s, &identity(), 1.0, &mut replicate_rng(11, 0, r), &Default::default())
                .unwrap()
                .accumulator
                .xi_continuous[0]
        })
        .collect();
    let (mean, var) = mean_and_var(&xi);
    let se = (var / xi.len() as f64).sqrt();
    assert!(mean.abs() < 3.0 * se, "mean {mean}, se {se}");
    // spread is the CLT scale √(2ε)
    assert!((var / (2.0 * eps) - 1.0).abs() < 0.15, "var {var}");
}

#[test]
fn noise_scaling_variance_is_t_over_eps() {
    let eps = 0.1;
    let s = StepSchedule::with_step(eps, 0.01, 1.0, Regime::Lln).unwrap();
    let bm = SdeModel::scalar("bm", |_| 0.0, |_| 1.0).with_initial_state(vec![0.5]);
    let f = FunctionalSpec::zero(1);
    let ends: Vec<f64> = (0..10_000)
        .map(|r| {
            let mut rng = replicate_rng(5, 0, r);
            let out = simulate_euler(&bm, &s, &f, 1.0, &mut rng, &Default::default()).unwrap();
            // replay the stream: Z(T) = x0 + √(Δ/ε) Σ ξ_k exactly
            let mut replay = replicate_rng(5, 0, r);
            let mut z = 0.5;
            for _ in 0..100 {
                let g: f64 = replay.sample(StandardNormal);
                z = z + 0.0 * 0.1 + 0.1f64.sqrt() * g;
            }
            assert_eq!(z, out.terminal_state[0]);
            out.terminal_state[0]
        })
        .collect();
    let (_, var) = mean_and_var(&ends);
    assert!((var / 10.0 - 1.0).abs() < 0.05, "var {var}");
}

#[test]
fn riemann_gap_shrinks_faster_than_sqrt_eps() {
    let m = ou();
    let policy = StepPolicy::new(2.5);
    let mut ratios = Vec::new();
    for (i, eps) in [0.04, 0.02, 0.01].into_iter().enumerate() {
        let s = StepSchedule::new(Regime::Clt, policy, eps, 1.0).unwrap();
        let gaps: f64 = (0..200)
            .map(|r| {
                let a = simulate_euler(&m, &s, &identity(), 1.0, &mut replicate_rng(3, i as u64, r), &Default::default())
                    .unwrap()
                    .accumulator;
                (a.xi_continuous[0] - a.xi_riemann[0]).abs()
            })
            .sum::<f64>()
            / 200.0;
        ratios.push(gaps / eps.sqrt());
    }
    assert!(ratios[0] > ratios[1] && ratios[1] > ratios[2], "{ratios:?}");
}

/// Coarse and fine Euler paths driven by one Brownian path; the coarse
/// increments are sums of the fine ones.
fn strong_error(model: &SdeModel, h_fine: f64, coarsen: usize, n_coarse: usize, seed: u64) -> f64 {
    let mut rng = replicate_rng(seed, 0, 0);
    let paths = 400;
    let mut sq = 0.0;
    for _ in 0..paths {
        let x0 = model.initial_state[0];
        let (mut fine, mut coarse) = ([x0], [x0]);
        let mut sf = EulerStepper::new(model, h_fine);
        let mut sc = EulerStepper::new(model, h_fine * coarsen as f64);
        for _ in 0..n_coarse {
            let mut acc = 0.0;
            for _ in 0..coarsen {
                let dw = h_fine.sqrt() * rng.sample::<f64, _>(StandardNormal);
                acc += dw;
                sf.step(&mut fine, &[dw]);
            }
            sc.step(&mut coarse, &[acc]);
        }
        sq += (fine[0] - coarse[0]).powi(2);
    }
    (sq / paths as f64).sqrt()
}

fn fitted_order(model: &SdeModel) -> f64 {
    // horizon 1 in rescaled time; reference step 1/4096
    let h_ref = 1.0 / 4096.0;
    let mut pts = Vec::new();
    for coarsen in [16usize, 64, 256] {
        let n = 4096 / coarsen;
        let e = strong_error(model, h_ref, coarsen, n, 21);
        pts.push(((h_ref * coarsen as f64).ln(), e.ln()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn strong_error_is_at_most_order_half() {
    // additive noise: Euler coincides with Milstein, so the order is at least ½
    let p = fitted_order(&ou().with_initial_state(vec![1.0]));
    assert!(p >= 0.45, "OU order {p}");
    // multiplicative noise: order ½
    let gbm = SdeModel::scalar("mult", |x| -x, |x| 0.2 + 0.5 * x).with_initial_state(vec![1.0]);
    let p = fitted_order(&gbm);
    assert!((0.35..=0.75).contains(&p), "multiplicative order {p}");
}

#[test]
fn optimal_constant_control_tilts_the_mean() {
    let m = ou();
    let (sigma, mf, v) = (2f64.sqrt(), 2.0, 1.0);
    let psi = ControlFunction::constant(vec![sigma * v / mf], 1.0, 1.0).unwrap();
    let policy = StepPolicy::new(2.5).with_gamma_mdp(0.35);
    for (i, (eps, n)) in [(0.05, 4000u64), (0.01, 2000)].into_iter().enumerate() {
        let s = StepSchedule::new(Regime::Mdp, policy, eps, 1.0).unwrap();
        let vals: Vec<f64> = (0..n)
            .map(|r| {
                let out = simulate_controlled(&m, &s, &psi, &identity(), 1.0, &mut replicate_rng(8, i as u64, r), &Default::default())
                    .unwrap();
                out.accumulator.xi_continuous[0] / s.mdp_scale
            })
            .collect();
        let (mean, _) = mean_and_var(&vals);
        assert!((mean - v).abs() < 0.1 * v, "eps {eps}: mean {mean}");
    }
}

#[test]
fn oversized_control_is_rejected() {
    assert!(ControlFunction::constant(vec![2.0], 1.0, 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn same_seed_is_bitwise_reproducible(seed in any::<u64>(), rep in 0u64..1000, eps in 0.05f64..0.5) {
        let s = StepSchedule::with_step(eps, eps * 0.01, 1.0, Regime::Lln).unwrap();
        let m = ou();
        let a = simulate_euler(&m, &s, &identity(), 1.0, &mut replicate_rng(seed, 0, rep), &Default::default()).unwrap();
        let b = simulate_euler(&m, &s, &identity(), 1.0, &mut replicate_rng(seed, 0, rep), &Default::default()).unwrap();
        prop_assert_eq!(a.accumulator, b.accumulator);
        prop_assert_eq!(a.terminal_state[0].to_bits(), b.terminal_state[0].to_bits());
    }

    #[test]
    fn riemann_sum_is_exact_and_sup_is_monotone(seed in any::<u64>(), eps in 0.05f64..0.5) {
        let s = StepSchedule::with_step(eps, eps * 0.02, 1.0, Regime::Lln).unwrap();
        let f = FunctionalSpec::scalar("x^3 - x", |x| x * x * x - x).assume_centralized();
        let opts = SimulationOptions { snapshot_stride: Some(1), ..Default::default() };
        let out = simulate_euler(&ou(), &s, &f, 0.5, &mut replicate_rng(seed, 0, 0), &opts).unwrap();
        let snap = out.snapshot.unwrap();
        let mut riemann = 0.0;
        let mut running_sup: f64 = 0.0;
        let mut last_sup = 0.0;
        for pair in snap.rows.windows(2) {
            let x = pair[0][1];
            riemann += (x * x * x - x) * s.delta_step;
            running_sup = running_sup.max(pair[1][2].abs());
            prop_assert!(running_sup >= last_sup);
            last_sup = running_sup;
        }
        prop_assert_eq!(riemann.to_bits(), out.accumulator.xi_riemann[0].to_bits());
        prop_assert_eq!(running_sup, out.accumulator.sup_norm_seen);
    }

    #[test]
    fn zero_control_matches_uncontrolled(seed in any::<u64>(), eps in 0.02f64..0.2) {
        let m = ou();
        let s = StepSchedule::new(Regime::Mdp, StepPolicy::new(2.5).with_gamma_mdp(0.3), eps, 1.0).unwrap();
        let psi = ControlFunction::zero(1, 1.0);
        let a = simulate_euler(&m, &s, &identity(), 1.0, &mut replicate_rng(seed, 0, 0), &Default::default()).unwrap();
        let b = simulate_controlled(&m, &s, &psi, &identity(), 1.0, &mut replicate_rng(seed, 0, 0), &Default::default()).unwrap();
        prop_assert_eq!(a.accumulator, b.accumulator);
    }
}
