//! Executes a resolved [`ExperimentConfig`].

use hypocoerce::constants::{kappa, kappa_optimal, kappa_q, KappaReport, LqReport, ModelSpec};
use hypocoerce::exec::Exec;
use hypocoerce::geometry::LyapunovFunction;
use hypocoerce::lattice::{
    build_lattice, ergodicity_decay, finite_speed_profile, lattice_constants, omega_membership, probe_configurations,
    volume_cauchy_sequence, LatticeModel, LatticeParams,
};
use hypocoerce::observable::Expr;
use hypocoerce::sde::{integrate_paths, integrate_trajectories, write_trajectories_csv};
use hypocoerce::semigroup::{
    check_exp_moment, check_gradient_bound, check_lq_bound, check_lyapunov, check_poincare, empirical_invariant_measure, gamma_sup_bound,
    BoundCheck, McConfig, Model, Verdict,
};
use hypocoerce::stats::mean_se;
use serde::Serialize;
use serde_json::{json, Value};

use crate::artifacts::{num, Table, VerdictEntry};
use crate::config::{Experiment, ExperimentConfig, LatticeSection};
use crate::error::CliError;

/// What a run produced, before it is stamped into a manifest.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Value,
    pub verdicts: Vec<VerdictEntry>,
    pub tables: Vec<Table>,
    /// Lines printed to stdout by the dedicated subcommands.
    pub stdout: Vec<String>,
}

impl Outcome {
    fn new(report: Value) -> Self {
        let stdout = vec![serde_json::to_string_pretty(&report).expect("report serializes")];
        Outcome { report, verdicts: Vec::new(), tables: Vec::new(), stdout }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

fn parse(src: &str, nvars: usize) -> Result<Expr, CliError> {
    Expr::parse(src, nvars).map_err(|e| CliError::Schema(format!("observable `{src}`: {e}")))
}

fn resolved<T: Clone>(v: &Option<T>) -> T {
    v.clone().expect("filled in by resolve")
}

/// Runs a config already passed through [`ExperimentConfig::resolve`].
pub fn execute(config: &ExperimentConfig, spec: &ModelSpec, exec: &Exec) -> Result<Outcome, CliError> {
    let cfg = &config.mc;
    if config.experiment.is_lattice() {
        let section = config.lattice.as_ref().expect("filled in by resolve");
        let model = build_lattice(lattice_params(spec, section)?)?;
        return run_lattice(&config.experiment, &model, cfg, exec);
    }
    let dim = spec.geometry.ambient_dim();
    match &config.experiment {
        Experiment::Constants { q, optimal } => constants(spec, *q, *optimal),
        Experiment::Simulate { x, t, save_trajectories, trajectory_paths } => {
            let model = Model::new(spec.clone())?;
            let x = resolved(x);
            let batch = integrate_paths(&model.sys, &cfg.integrator(*t), &x, exec)?;
            let mut table = Table::new("terminal_moments", &["coordinate", "mean", "std_err"]);
            let moments: Vec<Value> = (0..dim)
                .map(|i| {
                    let (m, se) = mean_se(&batch.values.iter().map(|v| v[i]).collect::<Vec<_>>());
                    table.push(vec![(i + 1).to_string(), num(m), num(se)]);
                    json!({ "mean": m, "std_err": se })
                })
                .collect();
            if let Some(path) = save_trajectories {
                let n = (*trajectory_paths).min(cfg.paths);
                let traj = integrate_trajectories(&model.sys, &McConfig { paths: n, ..*cfg }.integrator(*t), &x, exec)?;
                let failed: Vec<u64> = traj.failures.iter().map(|f| f.path).collect();
                let paths: Vec<(u64, Vec<Vec<f64>>)> = (0..n as u64).filter(|p| !failed.contains(p)).zip(traj.values).collect();
                let stamp = format!("seed={} config_hash={}", cfg.seed, crate::artifacts::config_hash(config));
                let file = std::fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                write_trajectories_csv(std::io::BufWriter::new(file), &stamp, cfg.dt, dim, &paths)?;
            }
            let mut out = Outcome::new(json!({
                "t": t,
                "paths": batch.values.len(),
                "failures": batch.failures,
                "moments": moments,
            }));
            out.tables.push(table);
            Ok(out)
        }
        Experiment::Grad { observable, x, t, kappa: k } => {
            let model = Model::new(spec.clone())?;
            let k = match k {
                Some(k) => *k,
                None => kappa(spec).map_err(|e| CliError::Schema(e.to_string()))?.kappa,
            };
            let f = parse(observable, dim)?;
            let checks = check_gradient_bound(&model, k, &f, &resolved(x), t, cfg, exec)?;
            Ok(check_outcome("gradient", json!({ "kappa": k }), checks))
        }
        Experiment::Lq { observable, x, t, q } => {
            let model = Model::new(spec.clone())?;
            let rep = kappa_q(spec, *q).map_err(|e| CliError::Schema(e.to_string()))?;
            let f = parse(observable, dim)?;
            let checks = check_lq_bound(&model, *q, rep.kappa_q, &f, &resolved(x), t, cfg, exec)?;
            Ok(check_outcome("lq", to_value(&rep), checks))
        }
        Experiment::Poincare { observable, x, t, kappa: k } => {
            let model = Model::new(spec.clone())?;
            let k = match k {
                Some(k) => *k,
                None => kappa(spec).map_err(|e| CliError::Schema(e.to_string()))?.kappa,
            };
            let f = parse(observable, dim)?;
            let checks = check_poincare(&model, k, &f, &resolved(x), t, cfg, exec)?;
            Ok(check_outcome("poincare", json!({ "kappa": k }), checks))
        }
        Experiment::Lyapunov { x, t } => {
            let model = Model::new(spec.clone())?;
            let rho = LyapunovFunction::for_geometry(&spec.geometry).map_err(|e| CliError::Schema(e.to_string()))?;
            let rep = check_lyapunov(&model, &rho, &resolved(x), t, cfg, exec)?;
            let mut table = Table::new("lyapunov", &["t", "estimate", "std_err"]);
            for (t, e) in rep.times.iter().zip(&rep.estimates) {
                table.push(vec![num(*t), num(e.value), num(e.std_err)]);
            }
            let mut out = Outcome::new(to_value(&rep));
            out.verdicts.push(VerdictEntry {
                label: "lyapunov tail slope".into(),
                verdict: if rep.bounded { Verdict::Holds } else { Verdict::Violated },
            });
            out.tables.push(table);
            Ok(out)
        }
        Experiment::Expmoment { observable, delta, x0, t_burn, t_sample, thinning } => {
            let model = Model::new(spec.clone())?;
            let k = kappa(spec).map_err(|e| CliError::Schema(e.to_string()))?.kappa;
            let f = parse(observable, dim)?;
            let gamma_sup = gamma_sup_bound(&f, model.fields())
                .ok_or_else(|| CliError::Schema(format!("observable `{observable}` has no certified bound on Γf")))?;
            let delta = delta.unwrap_or_else(|| if gamma_sup > 0.0 { 0.5 * (k / gamma_sup).sqrt() } else { 1.0 });
            let samples = empirical_invariant_measure(&model, &resolved(x0), *t_burn, *t_sample, *thinning, cfg, exec)?;
            let rep = check_exp_moment(&samples, &f, delta, k, gamma_sup)?;
            let mut out = Outcome::new(json!({ "kappa": k, "report": rep }));
            out.verdicts.push(VerdictEntry { label: "exponential moment".into(), verdict: rep.check.verdict });
            Ok(out)
        }
        Experiment::Invariant { observable, x0, t_burn, t_sample, thinning } => {
            let model = Model::new(spec.clone())?;
            let f = parse(observable, dim)?;
            let x0 = resolved(x0);
            let a = empirical_invariant_measure(&model, &x0, *t_burn, *t_sample, *thinning, cfg, exec)?;
            let b = empirical_invariant_measure(&model, &x0, *t_burn, *t_sample, *thinning, &cfg.with_seed(cfg.seed ^ 0x5eed), exec)?;
            let consistency = a.self_consistency(&b, &f);
            let k = kappa(spec).map_err(|e| CliError::Schema(e.to_string()))?.kappa;
            let poincare = if k > 0.0 { Some(a.poincare(&f, model.fields(), k)?) } else { None };
            let mut out = Outcome::new(json!({
                "samples": a.len(),
                "mean": a.mean(&f),
                "variance": a.variance(&f),
                "two_seed_consistency": consistency,
                "kappa": k,
                "poincare": poincare,
            }));
            if let Some(p) = poincare {
                out.verdicts.push(VerdictEntry { label: "poincare under the empirical measure".into(), verdict: p.verdict });
            }
            Ok(out)
        }
        _ => unreachable!("lattice experiments handled above"),
    }
}

#[derive(Serialize)]
struct ConstantsReport {
    #[serde(flatten)]
    kappa: KappaReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    lq: Option<LqReport>,
}

fn constants(spec: &ModelSpec, q: Option<f64>, optimal: bool) -> Result<Outcome, CliError> {
    let k = if optimal { kappa_optimal(spec) } else { kappa(spec) }.map_err(|e| CliError::Schema(e.to_string()))?;
    let lq = q.map(|q| kappa_q(spec, q)).transpose().map_err(|e| CliError::Schema(e.to_string()))?;
    Ok(Outcome::new(to_value(&ConstantsReport { kappa: k, lq })))
}

fn check_outcome(name: &str, constants: Value, checks: Vec<BoundCheck>) -> Outcome {
    let mut table = Table::new("summary", &["t", "lhs", "lhs_err", "rhs", "rhs_err", "margin", "verdict"]);
    let mut verdicts = Vec::new();
    for c in &checks {
        let verdict = serde_json::to_value(c.verdict).expect("verdict serializes");
        table.push(vec![
            num(c.t),
            num(c.lhs.value),
            num(c.lhs.std_err),
            num(c.rhs.value),
            num(c.rhs.std_err),
            num(c.margin),
            verdict.as_str().expect("string").to_string(),
        ]);
        verdicts.push(VerdictEntry { label: format!("{name} t={}", c.t), verdict: c.verdict });
    }
    let stdout = checks.iter().map(|c| serde_json::to_string(c).expect("check serializes")).collect();
    Outcome { report: json!({ "constants": constants, "checks": checks }), verdicts, tables: vec![table], stdout }
}

fn lattice_params(spec: &ModelSpec, s: &LatticeSection) -> Result<LatticeParams, CliError> {
    let lambda = s.lambda.expect("filled in by resolve");
    let mut p = LatticeParams::cube(spec.clone(), s.d, s.box_radius, lambda, s.range, s.amplitude)?;
    if let Some(stencil) = &s.stencil {
        p.coupling.stencil = stencil.clone();
    }
    if let Some(g) = &s.site_function {
        p.coupling.site_function = parse(g, spec.geometry.ambient_dim())?;
    }
    if let Some(e) = &s.exterior {
        p.exterior = e.clone();
    }
    Ok(p)
}

fn site_label(s: &[i64]) -> String {
    s.iter().map(i64::to_string).collect::<Vec<_>>().join(";")
}

/// A site observable placed at the origin.
fn origin_observable(model: &LatticeModel, src: &str) -> Result<Expr, CliError> {
    let origin = vec![0; model.params().domain.d()];
    let k = model.index_of(&origin).ok_or_else(|| CliError::Schema("the box must contain the origin".into()))?;
    Ok(model.site_observable(k, &parse(src, model.site_dim())?))
}

fn holds_if(ok: bool) -> Verdict {
    if ok {
        Verdict::Holds
    } else {
        Verdict::Inconclusive
    }
}

fn run_lattice(experiment: &Experiment, model: &LatticeModel, cfg: &McConfig, exec: &Exec) -> Result<Outcome, CliError> {
    match experiment {
        Experiment::LatticeConstants {} => {
            let c = lattice_constants(model)?;
            let mut table = Table::new("site_constants", &["site", "a_k", "in_lambda"]);
            for (k, a) in c.a_k.iter().enumerate() {
                table.push(vec![site_label(&model.site(k)), num(*a), model.in_lambda(k).to_string()]);
            }
            let mut out = Outcome::new(json!({ "constants": c, "bounds": model.bounds(), "warnings": model.warnings() }));
            out.tables.push(table);
            Ok(out)
        }
        Experiment::LatticeSpeed { observable, t, probes, probe_scale, max_n } => {
            let f = origin_observable(model, observable)?;
            let probes = probe_configurations(model, *probes, *probe_scale, cfg.seed);
            let p = finite_speed_profile(model, &f, *t, &probes, *max_n, cfg, exec)?;
            let mut table = Table::new("speed", &["site", "distance", "n_k", "gamma", "std_err", "probe"]);
            for r in &p.rows {
                table.push(vec![
                    site_label(&r.site),
                    r.distance.to_string(),
                    r.n_k.to_string(),
                    num(r.gamma),
                    num(r.std_err),
                    r.probe.to_string(),
                ]);
            }
            let mut out = Outcome::new(json!({
                "t": p.t,
                "shells": p.shells,
                "spearman": p.spearman,
                "fit": p.fit,
                "sigma": p.sigma,
                "sigma_lower": p.sigma_lower,
                "envelope_intercept": p.envelope_intercept,
                "propagation_c": p.propagation_c,
                "warnings": model.warnings(),
            }));
            out.verdicts.push(VerdictEntry {
                label: "decay in lattice distance".into(),
                verdict: holds_if(p.spearman < -0.9 && p.sigma_lower > 0.0),
            });
            out.tables.push(table);
            Ok(out)
        }
        Experiment::LatticeCauchy { observable, t, probes, probe_scale, lambda_radii } => {
            let f = origin_observable(model, observable)?;
            let volumes = lambda_radii
                .iter()
                .map(|&r| model.params().with_lambda_radius(r).and_then(build_lattice))
                .collect::<Result<Vec<_>, _>>()?;
            let probes = probe_configurations(model, *probes, *probe_scale, cfg.seed);
            let rep = volume_cauchy_sequence(&volumes, model, &f, *t, &probes, cfg, exec)?;
            let mut table = Table::new("cauchy", &["lambda_radius", "n_bar", "discrepancy", "std_err", "probe"]);
            for (r, row) in lambda_radii.iter().zip(&rep.rows) {
                table.push(vec![r.to_string(), row.n_bar.to_string(), num(row.discrepancy), num(row.std_err), row.probe.to_string()]);
            }
            let mut out = Outcome::new(to_value(&rep));
            out.verdicts.push(VerdictEntry { label: "volume discrepancy decays".into(), verdict: holds_if(rep.decays) });
            out.tables.push(table);
            Ok(out)
        }
        Experiment::LatticeErgodicity { observable, t, omega, perturbation, perturb_radius, step_halving } => {
            let f = origin_observable(model, observable)?;
            let (omega, perturbation) = (resolved(omega), resolved(perturbation));
            if omega.len() != model.site_dim() || perturbation.len() != model.site_dim() {
                return Err(CliError::Schema(format!("omega and perturbation need {} coordinates", model.site_dim())));
            }
            let w = model.state(|_| omega.clone());
            let wt = model.state(|s| {
                let near = s.iter().map(|c| c.abs()).sum::<i64>() <= *perturb_radius;
                omega.iter().zip(&perturbation).map(|(o, p)| if near { o + p } else { *o }).collect()
            });
            let rep = ergodicity_decay(model, &f, &w, &wt, t, cfg, exec, *step_halving)?;
            let zeta = model.params().domain.d() as f64 + 1.0;
            let membership = [omega_membership(model, &w, zeta, f64::INFINITY)?, omega_membership(model, &wt, zeta, f64::INFINITY)?];
            let mut table = Table::new("ergodicity", &["t", "difference", "std_err", "discretization_err", "combined_err"]);
            for r in &rep.rows {
                table.push(vec![num(r.t), num(r.difference), num(r.std_err), num(r.discretization_err), num(r.combined_err)]);
            }
            let mut out = Outcome::new(json!({ "decay": rep, "weighted_gauge_sums": membership.map(|m| m.sum), "zeta": zeta }));
            out.verdicts.push(VerdictEntry { label: "positive decay rate".into(), verdict: holds_if(rep.positive) });
            out.tables.push(table);
            Ok(out)
        }
        _ => unreachable!("single-site experiments handled by execute"),
    }
}
