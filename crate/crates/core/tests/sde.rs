use hypocoerce::constants::{DriftSpec, ModelSpec};
use hypocoerce::exec::Exec;
use hypocoerce::geometry::{abelian, grusin, heisenberg};
use hypocoerce::sde::{assemble_sde, integrate_paths, run_paths, tangent_paths, Scheme};
use hypocoerce::semigroup::McConfig;
use hypocoerce::stats::mean_se;
use proptest::prelude::*;

fn ou_moments(paths: usize, dt: f64, t: f64, x0: f64, seed: u64) -> ((f64, f64), (f64, f64)) {
    let sys = assemble_sde(&ModelSpec::plain(abelian(1), 1.0).unwrap()).unwrap();
    let cfg = McConfig { dt, paths, seed, ..McConfig::default() };
    let b = integrate_paths(&sys, &cfg.integrator(t), &[x0], &Exec::sequential()).unwrap();
    let xs: Vec<f64> = b.values.iter().map(|v| v[0]).collect();
    let m = mean_se(&xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m.0).powi(2)).collect();
    (m, mean_se(&sq))
}

#[test]
fn ornstein_uhlenbeck_matches_its_transition_law() {
    for (t, seed) in [(0.5f64, 1), (1.5, 2)] {
        let ((m, m_se), (v, v_se)) = ou_moments(20_000, 1e-3, t, 1.0, seed);
        let m_exact = (-t).exp();
        let v_exact = 1.0 - (-2.0 * t).exp();
        assert!((m - m_exact).abs() < 4.0 * m_se, "t={t}: mean {m} vs {m_exact}");
        assert!((v - v_exact).abs() < 4.0 * v_se, "t={t}: variance {v} vs {v_exact}");
    }
}

#[test]
fn euler_on_a_linear_drift_has_the_discrete_mean() {
    // E[X_n] = (1 − dt)^n x₀ exactly for Euler on dX = −X dt + √2 dW
    let dt = 0.05;
    let ((m, se), _) = ou_moments(40_000, dt, 1.0, 2.0, 3);
    let discrete = 2.0 * (1.0f64 - dt).powi(20);
    assert!((m - discrete).abs() < 4.0 * se, "{m} vs {discrete}");
}

#[test]
fn heun_and_euler_agree_on_grusin() {
    let spec = ModelSpec::plain(grusin(), 1.0).unwrap();
    let sys = assemble_sde(&spec).unwrap();
    let x0 = [0.7, -0.2];
    let exec = Exec::from_env();
    let moments = |scheme, seed| {
        let cfg = McConfig { dt: 2e-3, paths: 20_000, seed, scheme, ..McConfig::default() };
        let b = integrate_paths(&sys, &cfg.integrator(1.0), &x0, &exec).unwrap();
        (0..2).map(|i| mean_se(&b.values.iter().map(|v| v[i] * v[i]).collect::<Vec<_>>())).collect::<Vec<_>>()
    };
    let euler = moments(Scheme::EulerItoCorrected, 10);
    let heun = moments(Scheme::HeunStratonovich, 11);
    for (i, ((a, sa), (b, sb))) in euler.iter().zip(&heun).enumerate() {
        assert!((a - b).abs() < 4.0 * sa.hypot(*sb), "coordinate {i}: {a} vs {b}");
    }
}

#[test]
fn ensembles_are_identical_across_worker_counts() {
    let spec = ModelSpec::new(heisenberg(), 2.0, vec![0.0, 0.4, -0.4, 0.0], DriftSpec::tanh_first(&heisenberg(), 0.3).unwrap()).unwrap();
    let sys = assemble_sde(&spec).unwrap();
    for scheme in [Scheme::EulerItoCorrected, Scheme::HeunStratonovich] {
        let cfg = McConfig { dt: 1e-2, paths: 257, seed: 77, scheme, ..McConfig::default() }.integrator(0.5);
        let one = integrate_paths(&sys, &cfg, &[0.1, 0.2, 0.3], &Exec::sequential()).unwrap();
        let many = integrate_paths(&sys, &cfg, &[0.1, 0.2, 0.3], &Exec::with_workers(5)).unwrap();
        let bits = |b: &Vec<Vec<f64>>| b.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&one.values), bits(&many.values));
    }
}

#[test]
fn common_starts_share_their_noise() {
    // two copies of the same start under common noise stay identical
    let sys = assemble_sde(&ModelSpec::plain(heisenberg(), 1.0).unwrap()).unwrap();
    let cfg = McConfig { dt: 1e-2, paths: 50, seed: 5, ..McConfig::default() }.integrator(1.0);
    let x = vec![0.3, 0.1, -0.2];
    let b = run_paths(&sys, &cfg, &[x.clone(), x], &[cfg.steps()], &Exec::sequential(), |_, s| s[0][0] == s[0][1]).unwrap();
    assert!(b.values.iter().all(|same| *same));
}

#[test]
fn first_variation_matches_a_finite_difference_of_the_flow() {
    let sys = assemble_sde(&ModelSpec::plain(heisenberg(), 2.0).unwrap()).unwrap();
    let cfg = McConfig { dt: 1e-2, paths: 20, seed: 8, ..McConfig::default() }.integrator(0.5);
    let x = [0.4, -0.1, 0.2];
    let v = [0.3, 0.5, -0.7];
    let h = 1e-6;
    let exec = Exec::sequential();
    let tangent = tangent_paths(&sys, &cfg, &x, &v, &exec).unwrap();
    let shift = |s: f64| -> Vec<f64> { x.iter().zip(&v).map(|(a, b)| a + s * b).collect() };
    let plus = integrate_paths(&sys, &cfg, &shift(h), &exec).unwrap();
    let minus = integrate_paths(&sys, &cfg, &shift(-h), &exec).unwrap();
    for ((tan, p), m) in tangent.values.iter().zip(&plus.values).zip(&minus.values) {
        for i in 0..3 {
            let fd = (p[i] - m[i]) / (2.0 * h);
            assert!((tan.1[i] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "{} vs {fd}", tan.1[i]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn zero_noise_paths_follow_the_drift(beta in 0.1f64..3.0, x0 in -2.0f64..2.0) {
        // with the noise removed, Euler on dX = −βX dt is the geometric sequence
        let sys = assemble_sde(&ModelSpec::plain(abelian(1), beta).unwrap()).unwrap().without_noise();
        let cfg = McConfig { dt: 0.01, paths: 2, seed: 0, ..McConfig::default() }.integrator(0.3);
        let b = integrate_paths(&sys, &cfg, &[x0], &Exec::sequential()).unwrap();
        let exact = x0 * (1.0 - beta * 0.01).powi(30);
        prop_assert!((b.values[0][0] - exact).abs() <= 1e-12 * (1.0 + exact.abs()));
    }
}
