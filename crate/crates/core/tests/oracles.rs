//! Checks against independently computed reference values.

use bayes_pde::hmc::{self, FnDensity, HmcConfig, HmcSampler};
use bayes_pde::net::{self, Architecture, WeightVector};
use bayes_pde::pde::{self, Boundary, GridSpec, Scheme};

#[test]
fn single_unit_network_matches_closed_form_tanh_derivatives() {
    let arch = Architecture::new(1, 1, false).unwrap();
    let w = WeightVector::new(arch, vec![1.0, 1.0, 1.0]).unwrap();
    let (t, x) = (0.5, 0.25);
    let th = (t + x as f64).tanh();
    let s = 1.0 - th * th;
    let j = net::jet(&w, t, x, 4).unwrap();
    assert!((j.f - 0.635149).abs() < 1e-6);
    assert!((j.f_t - s).abs() < 1e-14);
    assert!((j.f_x - s).abs() < 1e-14);
    assert!((j.f_xx + 2.0 * th * s).abs() < 1e-14);
    assert!((j.f_xxx - s * (6.0 * th * th - 2.0)).abs() < 1e-13);
    assert!((j.f_xxxx - s * (16.0 * th - 24.0 * th.powi(3))).abs() < 1e-13);
}

/// Cosine-series solution of `u_t = κ u_xx` with zero-flux ends on `[0, l]`.
fn neumann_series(u0: impl Fn(f64) -> f64, kappa: f64, l: f64, t: f64, x: f64) -> f64 {
    let m = 4000;
    let h = l / m as f64;
    let simpson = |g: &dyn Fn(f64) -> f64| {
        let mut acc = g(0.0) + g(l);
        for i in 1..m {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * g(i as f64 * h);
        }
        acc * h / 3.0
    };
    let mut u = simpson(&|s| u0(s)) / l;
    for n in 1..400 {
        let k = n as f64 * std::f64::consts::PI / l;
        let a = 2.0 / l * simpson(&|s| u0(s) * (k * s).cos());
        u += a * (k * x).cos() * (-kappa * k * k * t).exp();
    }
    u
}

#[test]
fn heat_preset_matches_cosine_series() {
    let problem = pde::preset_by_name("heat").unwrap();
    assert!(matches!(problem.shape.boundary, Boundary::Neumann { .. }));
    let sol = pde::solve(&problem.true_coefficients, &problem.candidates, &problem.shape, &problem.grid).unwrap();
    let ic = problem.shape.initial_condition;
    let mut worst = 0.0f64;
    // The profile has nonzero end slopes, so compare after the boundary
    // layer has diffused away.
    for &t in &[1.0, 4.0, 10.0] {
        for &x in &[0.0, 1.3, 5.0, 7.77, 10.0] {
            let exact = neumann_series(|s| ic.eval(s), 2.0, 10.0, t, x);
            worst = worst.max((sol.interpolate(t, x) - exact).abs());
        }
    }
    assert!(worst < 2e-2, "max deviation {worst}");
}

#[test]
fn burgers_solution_stays_odd() {
    let problem = pde::preset_by_name("burgers").unwrap();
    let sol = pipeline_truth(&problem);
    let nx = sol.x.len();
    let mut worst = 0.0f64;
    for i in 0..sol.t.len() {
        for j in 0..nx / 2 {
            worst = worst.max((sol.values[[i, j]] + sol.values[[i, nx - 1 - j]]).abs());
        }
    }
    assert!(worst < 1e-9, "odd symmetry broken by {worst}");
    // The front steepens but stays bounded by the initial amplitude.
    assert!(sol.max_abs() <= 1.0 + 1e-9);
}

fn pipeline_truth(problem: &pde::PdeProblem) -> pde::GridSolution {
    bayes_pde::pipeline::solve_truth(problem).unwrap()
}

#[test]
fn frozen_field_dynamics_error() {
    // With all coefficients zero the field never moves, so e_L is the
    // distance between the truth and its initial profile. Zero-flux ends
    // replace the two end values by the one-sided closure
    // (-25 u0 + 48 u1 - 36 u2 + 16 u3 - 3 u4) / 12h = 0.
    let problem = pde::preset_by_name("heat").unwrap();
    let grid = GridSpec::new(101, 51, Scheme::FiniteDifference);
    let truth = pde::solve(&problem.true_coefficients, &problem.candidates, &problem.shape, &grid).unwrap();
    let zero = vec![0.0; problem.candidates.len()];
    let e = pde::dynamics_error(&zero, &problem, &grid).unwrap();

    let mut frozen: Vec<f64> = truth.x.iter().map(|&x| problem.shape.initial_condition.eval(x)).collect();
    let n = frozen.len();
    let closure = |a: f64, b: f64, c: f64, d: f64| (48.0 * a - 36.0 * b + 16.0 * c - 3.0 * d) / 25.0;
    frozen[0] = closure(frozen[1], frozen[2], frozen[3], frozen[4]);
    frozen[n - 1] = closure(frozen[n - 2], frozen[n - 3], frozen[n - 4], frozen[n - 5]);

    let (dt, dx) = (truth.t[1] - truth.t[0], truth.x[1] - truth.x[0]);
    let mut acc = 0.0;
    for i in 0..truth.t.len() {
        for j in 0..n {
            let d = truth.values[[i, j]] - frozen[j];
            acc += d * d;
        }
    }
    let expected = (acc * dt * dx).sqrt();
    assert!(!e.unstable);
    assert!((e.value - expected).abs() <= 1e-9 * expected, "{} vs {expected}", e.value);

    let same = pde::dynamics_error(&problem.true_coefficients, &problem, &grid).unwrap();
    assert_eq!(same.value, 0.0);
}

#[test]
fn hmc_recovers_correlated_gaussian() {
    // Precision of [[1, 0.8], [0.8, 1]].
    let det = 1.0 - 0.64;
    let prec = [[1.0 / det, -0.8 / det], [-0.8 / det, 1.0 / det]];
    let target = FnDensity::new(
        2,
        move |q: &[f64]| {
            -0.5 * (prec[0][0] * q[0] * q[0] + 2.0 * prec[0][1] * q[0] * q[1] + prec[1][1] * q[1] * q[1])
        },
        move |q: &[f64], g: &mut [f64]| {
            g[0] = -(prec[0][0] * q[0] + prec[0][1] * q[1]);
            g[1] = -(prec[1][0] * q[0] + prec[1][1] * q[1]);
        },
    );
    let cfg = HmcConfig {
        step_size: 0.15,
        leapfrog_steps: 10,
        n_samples: 20_000,
        burn_in: 500,
        seed: 5,
        init_std: 1.0,
        ..HmcConfig::default()
    };
    let chain = hmc::sample_posterior(&target, &cfg).unwrap();
    let n = chain.samples.len() as f64;
    let m: Vec<f64> = (0..2).map(|k| chain.samples.iter().map(|s| s[k]).sum::<f64>() / n).collect();
    let cov = |a: usize, b: usize| chain.samples.iter().map(|s| (s[a] - m[a]) * (s[b] - m[b])).sum::<f64>() / n;
    assert!(m[0].abs() < 0.05 && m[1].abs() < 0.05, "{m:?}");
    assert!((cov(0, 0) - 1.0).abs() < 0.08);
    assert!((cov(1, 1) - 1.0).abs() < 0.08);
    assert!((cov(0, 1) - 0.8).abs() < 0.08);
    assert!(chain.acceptance_rate > 0.7);
}

#[test]
fn resumed_chain_continues_the_same_stream() {
    let target = FnDensity::new(
        3,
        |q: &[f64]| -0.5 * q.iter().map(|v| v * v).sum::<f64>(),
        |q: &[f64], g: &mut [f64]| {
            for (gi, qi) in g.iter_mut().zip(q) {
                *gi = -qi;
            }
        },
    );
    let cfg = HmcConfig {
        step_size: 0.3,
        leapfrog_steps: 5,
        n_samples: 60,
        burn_in: 10,
        seed: 9,
        init_std: 1.0,
        ..HmcConfig::default()
    };
    let whole = hmc::sample_posterior(&target, &cfg).unwrap();

    let mut first = HmcSampler::new(&target, cfg.clone()).unwrap();
    for _ in 0..25 {
        first.step();
    }
    let state = first.state();
    let partial = first.samples().to_vec();
    let rest = HmcSampler::resume(&target, cfg, state, partial).unwrap().run();
    assert_eq!(whole.samples, rest.samples);
    assert_eq!(whole.acceptance_rate, rest.acceptance_rate);
    assert_eq!(whole.state, rest.state);
}
