//! Acceptance suite: one PASS/FAIL line per criterion, with its runtime limit.
//!
//! Runs without the libtest harness so the lines are always printed.
//! Exits non-zero when any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use hypocoerce::constants::{kappa, kappa_q, ModelSpec};
use hypocoerce::exec::Exec;
use hypocoerce::geometry::{abelian, grusin, heisenberg, martinet, Geometry, HTypeGauge};
use hypocoerce::lattice::{
    build_lattice, ergodicity_decay, finite_speed_profile, probe_configurations, volume_cauchy_sequence, LatticeModel, LatticeParams,
};
use hypocoerce::observable::Expr;
use hypocoerce::polyfield::{rat, rat_int, Rational};
use hypocoerce::rng::NormalStream;
use hypocoerce::sde::{integrate_paths, run_paths, Scheme};
use hypocoerce::semigroup::{
    check_gradient_bound, estimate_ptf, gradient_experiment, with_discretization_error, BoundCheck, McConfig, Model, Verdict,
};
use hypocoerce::stats::{mean_se, ols};
use num_traits::Zero;
use rand::{Rng, SeedableRng};

/// Full-size run or the reduced rerun used by the determinism criterion.
#[derive(Clone, Copy, PartialEq)]
enum Size {
    Full,
    Reduced,
}

impl Size {
    fn paths(self, full: usize) -> usize {
        match self {
            Size::Full => full,
            Size::Reduced => (full / 100).max(64),
        }
    }
}

struct Outcome {
    pass: bool,
    detail: String,
    /// Numbers that must reproduce bit-for-bit across worker counts.
    fingerprint: Vec<f64>,
}

fn suite() -> Vec<Expr> {
    ["sin(x)*tanh(z)", "tanh(x+y)", "x*exp(-x^2-y^2-z^2)"].iter().map(|s| Expr::parse(s, 3).expect("suite parses")).collect()
}

const SUITE_POINT: [f64; 3] = [0.5, -0.3, 0.2];

fn verdict_counts(checks: &[BoundCheck]) -> (usize, usize, usize) {
    let count = |v: Verdict| checks.iter().filter(|c| c.verdict == v).count();
    (count(Verdict::Holds), count(Verdict::Inconclusive), count(Verdict::Violated))
}

fn fingerprint_checks(checks: &[BoundCheck]) -> Vec<f64> {
    checks.iter().flat_map(|c| [c.lhs.value, c.lhs.std_err, c.rhs.value, c.rhs.std_err]).collect()
}

fn tensor_matches(geo: &Geometry, expected: &[(usize, usize, usize, i64)]) -> bool {
    let c = geo.structure();
    let mut ok = true;
    for k in 0..c.n() {
        for j in 0..c.m() {
            for l in 0..c.n() {
                let want = expected.iter().find(|e| (e.0 - 1, e.1 - 1, e.2 - 1) == (k, j, l)).map_or_else(Rational::zero, |e| rat_int(e.3));
                ok &= *c.get(k, j, l) == want;
            }
        }
    }
    ok
}

fn c01_structure_constants() -> Outcome {
    let heis = tensor_matches(&heisenberg(), &[(1, 2, 3, 1), (2, 1, 3, -1)]);
    let gru = tensor_matches(&grusin(), &[(1, 2, 3, 1), (2, 1, 3, -1)]);
    let mart = tensor_matches(&martinet(), &[(1, 2, 3, 1), (2, 1, 3, -1), (3, 2, 4, 1)]);
    Outcome { pass: heis && gru && mart, detail: format!("heisenberg={heis} grusin={gru} martinet={mart}"), fingerprint: vec![] }
}

fn c02_dilation_data() -> Outcome {
    let want = |v: &[i64]| v.iter().map(|&x| rat_int(x)).collect::<Vec<_>>();
    let h = heisenberg().lambda() == want(&[1, 1, 2]).as_slice();
    let g = grusin().lambda() == want(&[1, 1, 2]).as_slice();
    let m = martinet().lambda() == want(&[1, 1, 2, 3]).as_slice();
    Outcome { pass: h && g && m, detail: format!("heisenberg={h} grusin={g} martinet={m}"), fingerprint: vec![] }
}

fn c03_kappa_anchor() -> Outcome {
    let betas = [0.0, 0.5, 1.75, 2.0, 2.0 + 2f64.powi(-20), 3.0, 7.25, 1e3];
    let mut ok = true;
    for &b in &betas {
        let r = kappa(&ModelSpec::plain(heisenberg(), b).expect("valid")).expect("kappa");
        let beta = hypocoerce::polyfield::f64_to_rat(b).expect("finite");
        let want = rat_int(2) * &beta - rat_int(4);
        ok &= r.kappa_exact.as_ref() == Some(&want);
        ok &= (want > Rational::zero()) == (beta > rat_int(2));
        ok &= (r.kappa > 0.0) == (b > 2.0);
    }
    let affine = kappa(&ModelSpec::plain(heisenberg(), 3.0).expect("valid")).expect("kappa").exact.expect("exact");
    ok &= affine.slope == "2" && affine.offset == "4";
    Outcome {
        pass: ok,
        detail: format!("κ(β) = {}·β − {} at {} values of β", affine.slope, affine.offset, betas.len()),
        fingerprint: vec![],
    }
}

fn c04_gauge_identities() -> Outcome {
    let gauge = HTypeGauge::new(2, 1).expect("H-type gauge on the Heisenberg group");
    let mut rng = rand::rngs::StdRng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let v = gauge.gauge_identities(&p).expect("away from the origin");
        let x2 = p[0] * p[0] + p[1] * p[1];
        let n = (x2 * x2 + 16.0 * p[2] * p[2]).powf(0.25);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(rel(v.dn, n)).max(rel(v.subgrad, x2 / (n * n))).max(rel(v.sublap, 3.0 * x2 / (n * n * n)));
    }
    Outcome { pass: worst <= 1e-10, detail: format!("max relative error {worst:.2e} over 100 points"), fingerprint: vec![] }
}

/// Weak error of `E[X_T²]` for Euler on `dX = −X dt + √2 dW`, measured against
/// the exact OU transition driven by the same normals.
fn ou_weak_error(dt: f64, paths: usize, seed: u64, exec: &Exec) -> (f64, f64) {
    let model = Model::new(ModelSpec::plain(abelian(1), 1.0).expect("valid")).expect("model");
    let t = 1.0;
    let x0 = 1.0;
    let cfg = McConfig { dt, paths, seed, ..McConfig::default() };
    let euler = integrate_paths(&model.sys, &cfg.integrator(t), &[x0], exec).expect("no blowup");
    assert!(euler.failures.is_empty());
    let noise = NormalStream::new(seed, 1);
    let steps = (t / dt).round() as usize;
    let decay = (-dt).exp();
    let scale = (1.0 - (-2.0 * dt).exp()).sqrt();
    let diffs: Vec<f64> = euler
        .values
        .iter()
        .enumerate()
        .map(|(p, xe)| {
            let mut reader = noise.path(p as u64);
            let mut xi = [0.0];
            let mut x = x0;
            for _ in 0..steps {
                reader.next_step(&mut xi);
                x = decay * x + scale * xi[0];
            }
            xe[0] * xe[0] - x * x
        })
        .collect();
    mean_se(&diffs)
}

fn c05_ou_battery(size: Size, exec: &Exec) -> Outcome {
    let beta = 1.0;
    let x0 = 1.0;
    let model = Model::new(ModelSpec::plain(abelian(1), beta).expect("valid")).expect("model");
    let paths = size.paths(100_000);
    let cfg = McConfig { dt: 1e-3, paths, seed: 5, ..McConfig::default() };
    let times = [0.5, 1.0, 2.0];
    let ic = cfg.integrator(2.0);
    let steps: Vec<usize> = times.iter().map(|&t| ic.step_of(t).expect("grid")).collect();
    let batch =
        run_paths(&model.sys, &ic, &[vec![x0]], &steps, exec, |_, s| s.iter().map(|b| b[0][0]).collect::<Vec<f64>>()).expect("no blowup");
    let mut ok = true;
    let mut detail = String::new();
    let mut fp = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        let xs: Vec<f64> = batch.values.iter().map(|r| r[i]).collect();
        let (m, m_se) = mean_se(&xs);
        let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
        let (v, v_se) = mean_se(&dev);
        let (m_want, v_want) = ((-beta * t).exp() * x0, (1.0 - (-2.0 * beta * t).exp()) / beta);
        let zm = (m - m_want) / m_se;
        let zv = (v - v_want) / v_se;
        ok &= zm.abs() <= 3.0 && zv.abs() <= 3.0;
        detail += &format!("t={t}: mean z={zm:+.2} var z={zv:+.2}; ");
        fp.extend([m, m_se, v, v_se]);
    }
    let dts = [4e-3, 2e-3, 1e-3];
    let errs: Vec<(f64, f64)> = dts.iter().map(|&dt| ou_weak_error(dt, paths, 55, exec)).collect();
    let fit = ols(&dts.map(f64::ln), &errs.iter().map(|e| e.0.abs().ln()).collect::<Vec<_>>());
    ok &= fit.slope >= 0.9;
    detail += &format!("weak-order slope {:.3}", fit.slope);
    fp.extend(errs.iter().flat_map(|e| [e.0, e.1]));
    Outcome { pass: ok, detail, fingerprint: fp }
}

fn c06_gradient_equality(size: Size, exec: &Exec) -> Outcome {
    let spec = ModelSpec::plain(abelian(1), 1.0).expect("valid");
    let k = kappa(&spec).expect("kappa").kappa;
    let model = Model::new(spec).expect("model");
    let f = Expr::var(0);
    let times = [0.25, 0.5, 1.0, 2.0];
    let cfg = McConfig { dt: 1e-3, paths: size.paths(20_000), seed: 6, ..McConfig::default() };
    let coarse = check_gradient_bound(&model, k, &f, &[0.7], &times, &cfg, exec).expect("check");
    let fine = check_gradient_bound(&model, k, &f, &[0.7], &times, &McConfig { dt: cfg.dt / 2.0, ..cfg }, exec).expect("check");
    let checks: Vec<BoundCheck> = coarse.iter().zip(&fine).map(|(c, f)| with_discretization_error(c, f)).collect();
    let ok = (k - 2.0).abs() < 1e-15 && checks.iter().all(BoundCheck::agrees);
    let worst = checks.iter().map(|c| ((c.lhs.value - c.rhs.value) / c.combined_err).abs()).fold(0.0, f64::max);
    Outcome {
        pass: ok,
        detail: format!("κ={k}, max |lhs − rhs|/σ = {worst:.2} over t ∈ {times:?}"),
        fingerprint: fingerprint_checks(&checks),
    }
}

fn heisenberg_suite_checks(size: Size, exec: &Exec, seed: u64) -> (Vec<BoundCheck>, Vec<BoundCheck>, f64) {
    let spec = ModelSpec::plain(heisenberg(), 3.0).expect("valid");
    let k = kappa(&spec).expect("kappa").kappa;
    let model = Model::new(spec).expect("model");
    let times = [0.25, 0.5, 1.0];
    let cfg = McConfig { dt: 1e-3, paths: size.paths(100_000), seed, ..McConfig::default() };
    let data = gradient_experiment(&model, &suite(), &SUITE_POINT, &times, &cfg, exec).expect("experiment");
    let mut grad = Vec::new();
    let mut poinc = Vec::new();
    for oi in 0..3 {
        for ti in 0..times.len() {
            grad.push(data.gradient_check(ti, oi, k));
            poinc.push(data.poincare_check(ti, oi, k).expect("κ > 0"));
        }
    }
    (grad, poinc, k)
}

fn c07_gradient_heisenberg(size: Size, exec: &Exec) -> Outcome {
    let (checks, _, k) = heisenberg_suite_checks(size, exec, 7);
    let (h, i, v) = verdict_counts(&checks);
    let min_margin = checks.iter().map(|c| c.margin).fold(f64::INFINITY, f64::min);
    Outcome {
        pass: (k - 2.0).abs() < 1e-15 && v == 0,
        detail: format!("κ={k}: {h} holds, {i} inconclusive, {v} violated; smallest margin {min_margin:.1}σ"),
        fingerprint: fingerprint_checks(&checks),
    }
}

fn c08_lq(size: Size, exec: &Exec) -> Outcome {
    let mut all = Vec::new();
    let mut detail = String::new();
    for (q, seed) in [(1.5, 81), (3.0, 82)] {
        let base = kappa_q(&ModelSpec::plain(heisenberg(), 0.0).expect("valid"), q).expect("l_q constant");
        let beta = base.beta_threshold.ceil() + 1.0;
        let spec = ModelSpec::plain(heisenberg(), beta).expect("valid");
        let rep = kappa_q(&spec, q).expect("l_q constant");
        let model = Model::new(spec).expect("model");
        let times = [0.25, 0.5, 1.0];
        let cfg = McConfig { dt: 1e-3, paths: size.paths(100_000), seed, ..McConfig::default() };
        let data = gradient_experiment(&model, &suite(), &SUITE_POINT, &times, &cfg, exec).expect("experiment");
        let checks: Vec<BoundCheck> =
            (0..3).flat_map(|oi| (0..times.len()).map(move |ti| (ti, oi))).map(|(ti, oi)| data.lq_check(ti, oi, q, rep.kappa_q)).collect();
        let (h, i, v) = verdict_counts(&checks);
        detail += &format!(
            "q={q}: threshold {:.3}, β={beta}, κ_q={:.3}: {h}/{i}/{v} holds/inconclusive/violated; ",
            base.beta_threshold, rep.kappa_q
        );
        all.extend(checks);
    }
    let (_, _, v) = verdict_counts(&all);
    Outcome { pass: v == 0, detail, fingerprint: fingerprint_checks(&all) }
}

fn c09_poincare(size: Size, exec: &Exec) -> Outcome {
    let spec = ModelSpec::plain(abelian(1), 1.0).expect("valid");
    let k = kappa(&spec).expect("kappa").kappa;
    let model = Model::new(spec).expect("model");
    let cfg = McConfig { dt: 1e-3, paths: size.paths(100_000), seed: 9, ..McConfig::default() };
    let ou = hypocoerce::semigroup::check_poincare(&model, k, &Expr::var(0), &[0.4], &[1.0], &cfg, exec).expect("check");
    let z = (ou[0].lhs.value - ou[0].rhs.value) / ou[0].combined_err;
    let (_, poinc, _) = heisenberg_suite_checks(size, exec, 99);
    let (h, i, v) = verdict_counts(&poinc);
    let mut fp = fingerprint_checks(&ou);
    fp.extend(fingerprint_checks(&poinc));
    Outcome {
        pass: ou[0].agrees() && v == 0,
        detail: format!(
            "OU: lhs {:.5} rhs {:.5} ({z:+.2}σ); Heisenberg suite: {h}/{i}/{v} holds/inconclusive/violated",
            ou[0].lhs.value, ou[0].rhs.value
        ),
        fingerprint: fp,
    }
}

fn c10_scheme_agreement(size: Size, exec: &Exec) -> Outcome {
    let g = vec![0.0, 0.6, -0.6, 0.0];
    let spec = ModelSpec::new(heisenberg(), 1.0, g, hypocoerce::constants::DriftSpec::zero(&heisenberg())).expect("valid");
    let model = Model::new(spec).expect("model");
    let plain = Model::new(ModelSpec::plain(heisenberg(), 1.0).expect("valid")).expect("model");
    let mut observables = suite();
    observables.push(Expr::parse("z", 3).expect("parses"));
    let x = [0.3, 0.2, -0.1];
    let t = 1.0;
    let paths = size.paths(100_000);
    let euler = McConfig { dt: 1e-3, paths, seed: 101, scheme: Scheme::EulerItoCorrected, ..McConfig::default() };
    let heun = McConfig { seed: 102, scheme: Scheme::HeunStratonovich, ..euler };
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut sensitivity: f64 = 0.0;
    let mut fp = Vec::new();
    for f in &observables {
        let a = estimate_ptf(&model, f, &x, t, &euler, exec).expect("euler");
        let b = estimate_ptf(&model, f, &x, t, &heun, exec).expect("heun");
        let z = (a.value - b.value) / a.std_err.hypot(b.std_err);
        ok &= z.abs() < 3.0;
        worst = worst.max(z.abs());
        fp.extend([a.value, a.std_err, b.value, b.std_err]);
        if matches!(f, Expr::Var(2)) {
            let c = estimate_ptf(&plain, f, &x, t, &euler, exec).expect("euler");
            sensitivity = (a.value - c.value).abs() / a.std_err.hypot(c.std_err);
        }
    }
    Outcome {
        pass: ok, detail: format!("max |Heun − Euler|/σ = {worst:.2}; dropping G moves P_t z by {sensitivity:.0}σ"), fingerprint: fp
    }
}

fn heisenberg_chain(beta: f64, radius: i64, lambda_radius: i64, a: f64) -> LatticeModel {
    let spec = ModelSpec::plain(heisenberg(), beta).expect("valid");
    build_lattice(LatticeParams::cube(spec, 1, radius, lambda_radius, 1, a).expect("params")).expect("lattice")
}

fn c11_finite_speed(size: Size, exec: &Exec) -> Outcome {
    let model = heisenberg_chain(3.0, 20, 20, 0.1);
    assert_eq!(model.sites(), 41);
    let f = model.site_observable(model.index_of(&[0]).expect("origin"), &Expr::var(0).tanh());
    let probes = probe_configurations(&model, 2, 1.0, 11);
    let cfg = McConfig { dt: 5e-3, paths: size.paths(1_000), seed: 11, ..McConfig::default() };
    let p = finite_speed_profile(&model, &f, 0.5, &probes, 8, &cfg, exec).expect("profile");
    let ok = p.spearman < -0.9 && p.sigma_lower > 0.0;
    let fp = p.shells.iter().flat_map(|s| [s.1, s.2]).collect();
    Outcome {
        pass: ok,
        detail: format!(
            "Spearman ρ={:.3} over N_k ≤ 8; σ={:.2} (95% lower {:.2}); Γ at N=1: {:.2e}, N=8: {:.2e}",
            p.spearman,
            p.sigma,
            p.sigma_lower,
            p.shells.first().map_or(f64::NAN, |s| s.1),
            p.shells.last().map_or(f64::NAN, |s| s.1)
        ),
        fingerprint: fp,
    }
}

fn c12_volume_cauchy(size: Size, exec: &Exec) -> Outcome {
    let t = 1.0;
    let run = |a: f64| {
        let reference = heisenberg_chain(3.0, 10, 10, a);
        let volumes: Vec<LatticeModel> = (0..6).map(|r| heisenberg_chain(3.0, 10, r, a)).collect();
        let f = reference.site_observable(reference.index_of(&[0]).expect("origin"), &Expr::var(0).tanh());
        let probes =
            vec![reference.state(|_| vec![1.0, 0.0, 0.0]), reference.state(|s| vec![if s[0] % 2 == 0 { 1.0 } else { 0.5 }, 0.3, -0.2])];
        let cfg = McConfig { dt: 1e-2, paths: size.paths(2_000), seed: 12, ..McConfig::default() };
        volume_cauchy_sequence(&volumes, &reference, &f, t, &probes, &cfg, exec).expect("cauchy")
    };
    let coupled = run(0.1);
    let control = run(0.0);
    let control_ok = control.rows.iter().all(|r| r.discrepancy <= 3.0 * r.std_err);
    let fp = coupled.rows.iter().chain(&control.rows).flat_map(|r| [r.discrepancy, r.std_err]).collect();
    Outcome {
        pass: coupled.decays && control_ok,
        detail: format!(
            "slope {:.2} (95% upper {:.2}) over N̄ = {:?}; a=0 control max discrepancy {:.1e}",
            coupled.fit.map_or(f64::NAN, |l| l.slope),
            coupled.slope_upper,
            coupled.rows.iter().map(|r| r.n_bar).collect::<Vec<_>>(),
            control.rows.iter().map(|r| r.discrepancy).fold(0.0, f64::max)
        ),
        fingerprint: fp,
    }
}

fn c13_ergodicity(size: Size, exec: &Exec) -> Outcome {
    let beta = 1.0;
    let delta = 0.8;
    let ou = build_lattice(LatticeParams::cube(ModelSpec::plain(abelian(1), beta).expect("valid"), 1, 5, 5, 1, 0.0).expect("params"))
        .expect("lattice");
    let o = ou.index_of(&[0]).expect("origin");
    let f = ou.site_observable(o, &Expr::var(0));
    let tilde = ou.state(|s| vec![0.1 * s[0] as f64]);
    let mut omega = tilde.clone();
    omega[o] += delta;
    let times = [0.5, 1.0, 2.0];
    let cfg = McConfig { dt: 1e-3, paths: size.paths(1_000), seed: 13, ..McConfig::default() };
    let rep = ergodicity_decay(&ou, &f, &omega, &tilde, &times, &cfg, exec, true).expect("decay");
    let exact_ok = rep.rows.iter().all(|r| (r.difference - delta * (-beta * r.t).exp()).abs() <= 3.0 * r.combined_err);

    let model = heisenberg_chain(4.0, 10, 10, 0.1);
    let f = model.site_observable(model.index_of(&[0]).expect("origin"), &Expr::parse("sin(x)*tanh(z) + tanh(x+y)", 3).expect("parses"));
    let w = model.state(|_| vec![0.3, -0.2, 0.4]);
    let mut wt = w.clone();
    for s in [-1i64, 0, 1] {
        let k = model.index_of(&[s]).expect("in box");
        wt[3 * k] += 0.5;
        wt[3 * k + 1] -= 0.5;
        wt[3 * k + 2] += 0.5;
    }
    let grid: Vec<f64> = (1..=8).map(|i| 0.25 * i as f64).collect();
    let cfg = McConfig { dt: 1e-2, paths: size.paths(2_000), seed: 131, ..McConfig::default() };
    let coupled = ergodicity_decay(&model, &f, &w, &wt, &grid, &cfg, exec, false).expect("decay");
    let mut fp: Vec<f64> = rep.rows.iter().flat_map(|r| [r.difference, r.combined_err]).collect();
    fp.extend(coupled.rows.iter().flat_map(|r| [r.difference, r.std_err]));
    Outcome {
        pass: exact_ok && coupled.positive,
        detail: format!(
            "decoupled OU matches Δe^(−βt): {exact_ok}; coupled rate ϖ̂={:.2} (95% lower {:.2}, ς/2={:.2})",
            coupled.rate, coupled.rate_lower, coupled.varsigma_half
        ),
        fingerprint: fp,
    }
}

type Stochastic = fn(Size, &Exec) -> Outcome;

const STOCHASTIC: [(u32, Stochastic); 9] = [
    (5, c05_ou_battery),
    (6, c06_gradient_equality),
    (7, c07_gradient_heisenberg),
    (8, c08_lq),
    (9, c09_poincare),
    (10, c10_scheme_agreement),
    (11, c11_finite_speed),
    (12, c12_volume_cauchy),
    (13, c13_ergodicity),
];

fn c14_determinism() -> Outcome {
    let one = Exec::with_workers(1);
    let eight = Exec::with_workers(8);
    let mut differing = Vec::new();
    let mut compared = 0;
    for (id, f) in STOCHASTIC {
        let a = f(Size::Reduced, &one).fingerprint;
        let b = f(Size::Reduced, &eight).fingerprint;
        compared += a.len();
        if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.to_bits() != y.to_bits()) {
            differing.push(id);
        }
    }
    // exact criteria are recomputed from scratch and compared structurally
    let exact_same = heisenberg().structure() == heisenberg().structure() && martinet().lambda() == martinet().lambda();
    let _ = rat(1, 2);
    Outcome {
        pass: differing.is_empty() && exact_same,
        detail: format!(
            "{compared} numbers from reduced reruns of criteria 5–13 compared bitwise (1 vs 8 workers); differing: {differing:?}"
        ),
        fingerprint: vec![],
    }
}

fn main() -> ExitCode {
    let exec = Exec::from_env();
    let names = [
        "structure constants exact",
        "dilation data exact",
        "κ anchor 2β − 4",
        "gauge identities",
        "OU oracle battery",
        "gradient-bound equality on abelian",
        "gradient bound on Heisenberg",
        "l_q bound",
        "Poincaré saturation",
        "scheme agreement",
        "finite speed of propagation",
        "volume Cauchy",
        "ergodicity",
        "determinism across worker counts",
    ];
    let limits = [1, 1, 1, 1, 120, 120, 600, 600, 300, 300, 1200, 1200, 1200, 1200];
    let mut failed = 0;
    for (i, name) in names.iter().enumerate() {
        let id = i as u32 + 1;
        let start = Instant::now();
        let out = match id {
            1 => c01_structure_constants(),
            2 => c02_dilation_data(),
            3 => c03_kappa_anchor(),
            4 => c04_gauge_identities(),
            14 => c14_determinism(),
            _ => STOCHASTIC.iter().find(|(k, _)| *k == id).map(|(_, f)| f(Size::Full, &exec)).expect("criterion"),
        };
        let elapsed = start.elapsed();
        let limit = Duration::from_secs(limits[i]);
        let pass = out.pass && elapsed < limit;
        failed += usize::from(!pass);
        println!(
            "{} criterion {id:>2} {name}: {} [{:.2}s, limit {}s]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            limits[i]
        );
    }
    println!("acceptance: {} passed, {failed} failed", names.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
