use ergodiff::model::{builtin_model, invariant_density_1d, BuiltinFamily, FunctionalSpec, ModelParams};
use ergodiff::poisson1d::{fit_tail_exponents, solve_poisson_1d, uniform_grid, PoissonProblem};
use ergodiff::quadrature::QuadratureConfig;

fn ou() -> (ergodiff::model::SdeModel, ergodiff::model::InvariantDensity1D) {
    let m = builtin_model(BuiltinFamily::Ou, ModelParams::new(1.0, 0.0, 2f64.sqrt())).unwrap();
    let pi = invariant_density_1d(&m, m.support, &QuadratureConfig::default()).unwrap();
    (m, pi)
}

/// Probabilists' Hermite polynomial by the three-term recurrence.
fn hermite(n: usize, x: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, x);
    if n == 0 {
        return h0;
    }
    for k in 1..n {
        let h2 = x * h1 - k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

#[test]
fn hermite_functionals_solve_exactly() {
    let (m, pi) = ou();
    let grid = uniform_grid(-4.0, 4.0, 81);
    for n in 1..=4 {
        let f = FunctionalSpec::scalar(format!("H{n}"), move |x| hermite(n, x)).assume_centralized();
        let sol = solve_poisson_1d(&m, &pi, &f, 0.0, &grid).unwrap();
        let shift = hermite(n, 0.0) / n as f64;
        for (k, &x) in sol.grid.iter().enumerate() {
            assert!((sol.u_prime[0][k] - hermite(n - 1, x)).abs() < 1e-6, "H{n} u' at {x}");
            assert!((sol.u[0][k] - (hermite(n, x) / n as f64 - shift)).abs() < 1e-6, "H{n} u at {x}");
        }
        assert!(sol.identity_residual(&m, &f) < 1e-5);

        let problem = PoissonProblem::new(&m, &pi, &f, 0.0);
        for x in [-3.0, -1.2, 0.4, 2.5] {
            let r = problem.residual_at(0, x, problem.u_prime_at(0, x));
            assert!(r.abs() < 1e-5, "H{n} residual {r} at {x}");
        }
    }
}

#[test]
fn both_integral_forms_agree_for_centred_functionals() {
    let (m, pi) = ou();
    let f = FunctionalSpec::scalar("x^3", |x| x * x * x).assume_centralized();
    let problem = PoissonProblem::new(&m, &pi, &f, 0.0);
    for x in [-2.5, -1.0, -0.2, 0.0, 0.7, 1.5, 2.5] {
        let (r, l) = (problem.u_prime_right(0, x), problem.u_prime_left(0, x));
        assert!((r - l).abs() < 1e-6, "x = {x}: {r} vs {l}");
    }
}

#[test]
fn corrected_trapezoid_converges_at_least_quadratically() {
    let (m, pi) = ou();
    let f = FunctionalSpec::scalar("sin", f64::sin).assume_centralized();
    let at_two = |h: f64| {
        let n = (6.0 / h).round() as usize + 1;
        let sol = solve_poisson_1d(&m, &pi, &f, 0.0, &uniform_grid(-3.0, 3.0, n)).unwrap();
        let k = sol.grid.iter().position(|x| (x - 2.0).abs() < 1e-9).unwrap();
        sol.u[0][k]
    };
    let (u1, u2, u3) = (at_two(0.5), at_two(0.25), at_two(0.125));
    let order = ((u1 - u2).abs() / (u2 - u3).abs()).log2();
    assert!(order >= 1.9, "observed order {order}");
}

#[test]
fn tail_exponents_of_polynomial_solutions() {
    let (m, pi) = ou();
    let grid = uniform_grid(-20.0, 20.0, 401);

    let f = FunctionalSpec::scalar("x", |x| x).assume_centralized();
    let sol = solve_poisson_1d(&m, &pi, &f, 0.0, &grid).unwrap();
    let e = fit_tail_exponents(&sol, 0.25).unwrap();
    assert!((e.p1 - 1.0).abs() < 0.05, "{e:?}");
    assert!(e.p2.abs() < 0.05, "{e:?}");

    let f = FunctionalSpec::scalar("H3", |x| hermite(3, x)).assume_centralized();
    let sol = solve_poisson_1d(&m, &pi, &f, 0.0, &grid).unwrap();
    let e = sol.fitted_exponents.unwrap();
    assert!((e.p1 - 3.0).abs() < 0.1, "{e:?}");
    assert!((e.p2 - 2.0).abs() < 0.1, "{e:?}");
    assert!((e.p3 - 1.0).abs() < 0.1, "{e:?}");
}

#[test]
fn cir_solution_has_unit_slope_near_the_boundary() {
    let m = builtin_model(BuiltinFamily::Cir, ModelParams::new(2.0, 1.0, 1.0)).unwrap();
    let pi = invariant_density_1d(&m, m.support, &QuadratureConfig::default()).unwrap();
    let f = FunctionalSpec::scalar("x - 1", |x| x - 1.0).assume_centralized();
    let sol = solve_poisson_1d(&m, &pi, &f, 0.0, &uniform_grid(0.01, 6.0, 120)).unwrap();
    // generator of x is κ(μ − x), so u = x/κ
    for v in &sol.u_prime[0] {
        assert!((v - 0.5).abs() < 1e-6, "{v}");
    }
}
