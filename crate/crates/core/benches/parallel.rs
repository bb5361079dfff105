//! Sequential against data-parallel execution of the path ensembles.
//!
//! Build with `--no-default-features` to measure the sequential fallback alone.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hypocoerce::constants::ModelSpec;
use hypocoerce::exec::Exec;
use hypocoerce::geometry::heisenberg;
use hypocoerce::lattice::{build_lattice, finite_speed_profile, probe_configurations, LatticeParams};
use hypocoerce::observable::Expr;
use hypocoerce::sde::integrate_paths;
use hypocoerce::semigroup::{gradient_experiment, McConfig, Model};

fn executors() -> Vec<(&'static str, Exec)> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    vec![("sequential", Exec::sequential()), ("parallel", Exec::with_workers(cores))]
}

fn heisenberg_paths(c: &mut Criterion) {
    let model = Model::new(ModelSpec::plain(heisenberg(), 3.0).expect("valid")).expect("model");
    let cfg = McConfig { dt: 1e-2, paths: 4096, seed: 1, ..McConfig::default() };
    let mut group = c.benchmark_group("heisenberg_terminal_states");
    for (name, exec) in executors() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, exec| {
            b.iter(|| integrate_paths(&model.sys, &cfg.integrator(1.0), &[0.5, -0.3, 0.2], exec).expect("no blowup"))
        });
    }
    group.finish();
}

fn gradient_ensemble(c: &mut Criterion) {
    let model = Model::new(ModelSpec::plain(heisenberg(), 3.0).expect("valid")).expect("model");
    let f = vec![Expr::parse("sin(x)*tanh(z)", 3).expect("parses")];
    let cfg = McConfig { dt: 1e-2, paths: 1024, seed: 2, ..McConfig::default() };
    let mut group = c.benchmark_group("gradient_experiment");
    group.sample_size(10);
    for (name, exec) in executors() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, exec| {
            b.iter(|| gradient_experiment(&model, &f, &[0.5, -0.3, 0.2], &[0.5], &cfg, exec).expect("runs"))
        });
    }
    group.finish();
}

fn lattice_speed(c: &mut Criterion) {
    let spec = ModelSpec::plain(heisenberg(), 3.0).expect("valid");
    let model = build_lattice(LatticeParams::cube(spec, 1, 6, 6, 1, 0.1).expect("params")).expect("lattice");
    let origin = model.index_of(&[0]).expect("origin");
    let f = model.site_observable(origin, &Expr::var(0).tanh());
    let probes = probe_configurations(&model, 1, 1.0, 3);
    let cfg = McConfig { dt: 1e-2, paths: 64, seed: 3, ..McConfig::default() };
    let mut group = c.benchmark_group("lattice_finite_speed");
    group.sample_size(10);
    for (name, exec) in executors() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, exec| {
            b.iter(|| finite_speed_profile(&model, &f, 0.2, &probes, 4, &cfg, exec).expect("runs"))
        });
    }
    group.finish();
}

criterion_group!(benches, heisenberg_paths, gradient_ensemble, lattice_speed);
criterion_main!(benches);
