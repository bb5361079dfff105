//! Monte Carlo estimates of `P_tf`, `Z_kP_tf`, `Γ(P_tf)` and `P_tΓ(f)`, and
//! harnesses testing the gradient, `l_q`, Lyapunov, Poincaré and
//! exponential-moment inequalities.
//!
//! `Z_kP_tf` is a central difference along the flow of `Z_k` with common
//! random numbers: all start points of an experiment share the noise of each
//! path. `Γ(P_tf) = Σ_k (Z_kP_tf)²` gets its standard error from the delta
//! method applied per path (`Σ_k 2 m_k D_k`), so the square is propagated
//! to first order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{ConstantsError, ModelSpec};
use crate::exec::Exec;
use crate::geometry::{GeometryError, LyapunovFunction};
use crate::observable::Expr;
use crate::polyfield::VectorField;
use crate::scalar::Dual;
use crate::sde::{assemble_sde, flow_exp, run_paths, IntegratorConfig, NumField, Scheme, SdeError, SdeSystem};
use crate::stats::{mean_se, ols};

/// Number of combined standard errors an excess must reach to count as a violation.
pub const VIOLATION_SIGMAS: f64 = 3.0;

#[derive(Debug, Error)]
pub enum SemigroupError {
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Constants(#[from] ConstantsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("precondition failed: {0}")]
    Precondition(String),
}

/// A model together with its assembled SDE.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub sys: SdeSystem,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self, SemigroupError> {
        let sys = assemble_sde(&spec)?;
        Ok(Model { spec, sys })
    }

    pub fn dim(&self) -> usize {
        self.sys.dim()
    }

    /// The adapted family `Z_1..Z_n`.
    pub fn fields(&self) -> &[VectorField] {
        self.spec.geometry.fields()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Flow step `h` for directional differences.
    pub fd_step: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { dt: 1e-3, paths: 10_000, seed: 0, scheme: Scheme::EulerItoCorrected, fd_step: 1e-3 }
    }
}

impl McConfig {
    pub fn integrator(&self, t_end: f64) -> IntegratorConfig {
        IntegratorConfig { dt: self.dt, t_end, scheme: self.scheme, seed: self.seed, paths: self.paths }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        McConfig { seed, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorResult {
    pub value: f64,
    pub std_err: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub dt: f64,
}

impl EstimatorResult {
    fn from_samples(xs: &[f64], cfg: &McConfig) -> Self {
        let (value, std_err) = mean_se(xs);
        EstimatorResult { value, std_err, n_paths: xs.len(), seed: cfg.seed, dt: cfg.dt }
    }

    fn scaled(self, c: f64) -> Self {
        EstimatorResult { value: self.value * c, std_err: self.std_err * c.abs(), ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Inconclusive,
    Violated,
}

/// One-sided comparison `lhs ≤ rhs`.
///
/// `holds` when `lhs ≤ rhs` (up to rounding), `violated` when the excess
/// exceeds three combined standard errors, `inconclusive` in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub t: f64,
    pub lhs: EstimatorResult,
    pub rhs: EstimatorResult,
    pub combined_err: f64,
    /// `(rhs − lhs)/combined_err`
    pub margin: f64,
    pub verdict: Verdict,
}

impl BoundCheck {
    pub fn new(t: f64, lhs: EstimatorResult, rhs: EstimatorResult) -> Self {
        let combined_err = lhs.std_err.hypot(rhs.std_err);
        let diff = lhs.value - rhs.value;
        let rounding = 1e-12 * lhs.value.abs().max(rhs.value.abs()).max(1e-300);
        let margin = if combined_err > 0.0 {
            -diff / combined_err
        } else if diff.abs() <= rounding {
            0.0
        } else {
            -diff.signum() * f64::INFINITY
        };
        let verdict = if diff <= rounding {
            Verdict::Holds
        } else if diff <= VIOLATION_SIGMAS * combined_err {
            Verdict::Inconclusive
        } else {
            Verdict::Violated
        };
        BoundCheck { t, lhs, rhs, combined_err, margin, verdict }
    }

    /// `|lhs − rhs| ≤ 3σ` (plus rounding), the test used for equality cases.
    pub fn agrees(&self) -> bool {
        let rounding = 1e-12 * self.lhs.value.abs().max(self.rhs.value.abs());
        (self.lhs.value - self.rhs.value).abs() <= VIOLATION_SIGMAS * self.combined_err + rounding
    }
}

/// Adds the step-halving estimate `2|v(dt) − v(dt/2)|` of first-order
/// time-discretization error to the standard errors of both sides of a
/// check run at `dt` (`coarse`) and `dt/2` (`fine`).
pub fn with_discretization_error(coarse: &BoundCheck, fine: &BoundCheck) -> BoundCheck {
    let widen =
        |c: &EstimatorResult, f: &EstimatorResult| EstimatorResult { std_err: c.std_err.hypot(2.0 * (c.value - f.value).abs()), ..*c };
    BoundCheck::new(coarse.t, widen(&coarse.lhs, &fine.lhs), widen(&coarse.rhs, &fine.rhs))
}

fn check_observable(model: &Model, f: &Expr) -> Result<(), SemigroupError> {
    if f.min_vars() > model.dim() {
        return Err(SemigroupError::Precondition(format!("observable {f} uses more than {} coordinates", model.dim())));
    }
    Ok(())
}

fn check_point(model: &Model, x: &[f64]) -> Result<(), SemigroupError> {
    if x.len() != model.dim() || x.iter().any(|v| !v.is_finite()) {
        return Err(SemigroupError::Precondition(format!("start point must have {} finite coordinates", model.dim())));
    }
    Ok(())
}

fn snapshot_steps(times: &[f64], cfg: &McConfig) -> Result<Vec<usize>, SemigroupError> {
    if times.is_empty() || times.windows(2).any(|w| w[0] >= w[1]) || times[0] < 0.0 {
        return Err(SemigroupError::Precondition("time grid must be non-empty, non-negative and increasing".into()));
    }
    let ic = cfg.integrator(*times.last().expect("non-empty"));
    times.iter().map(|&t| ic.step_of(t).map_err(SemigroupError::from)).collect()
}

/// `P_tf(x)`.
pub fn estimate_ptf(model: &Model, f: &Expr, x: &[f64], t: f64, cfg: &McConfig, exec: &Exec) -> Result<EstimatorResult, SemigroupError> {
    check_observable(model, f)?;
    check_point(model, x)?;
    let steps = snapshot_steps(&[t], cfg)?;
    let batch = run_paths(&model.sys, &cfg.integrator(t), &[x.to_vec()], &steps, exec, |_, s| f.eval(&s[0][0]))?;
    Ok(EstimatorResult::from_samples(&batch.values, cfg))
}

/// `P_tΓ(f)(x)`.
pub fn estimate_pt_gamma(
    model: &Model,
    f: &Expr,
    x: &[f64],
    t: f64,
    cfg: &McConfig,
    exec: &Exec,
) -> Result<EstimatorResult, SemigroupError> {
    estimate_ptf(model, &f.gamma(model.fields()), x, t, cfg, exec)
}

/// Central differences of `P_tf` along `Z_k`, with the Richardson decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirectionalEstimate {
    pub result: EstimatorResult,
    pub richardson: bool,
    /// `|D(h) − D(h/2)|·4/3`
    pub bias_estimate: f64,
}

/// Per-path quantities for a set of observables at a start point, shared by
/// the gradient, `l_q` and Poincaré checks.
#[derive(Debug, Clone)]
pub struct GradientData {
    times: Vec<f64>,
    n_obs: usize,
    n_fields: usize,
    cfg: McConfig,
    /// per path: `[t][obs][f, Γf, D_1(h)..D_n(h), D_1(h/2)..D_n(h/2)]`
    rows: Vec<Vec<f64>>,
}

impl GradientData {
    fn width(&self) -> usize {
        2 + 2 * self.n_fields
    }

    fn column(&self, ti: usize, oi: usize, slot: usize) -> Vec<f64> {
        let off = (ti * self.n_obs + oi) * self.width() + slot;
        self.rows.iter().map(|r| r[off]).collect()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_paths(&self) -> usize {
        self.rows.len()
    }

    pub fn ptf(&self, ti: usize, oi: usize) -> EstimatorResult {
        EstimatorResult::from_samples(&self.column(ti, oi, 0), &self.cfg)
    }

    pub fn pt_gamma(&self, ti: usize, oi: usize) -> EstimatorResult {
        EstimatorResult::from_samples(&self.column(ti, oi, 1), &self.cfg)
    }

    /// `P_t(Γ(f)^{q/2})`.
    pub fn pt_gamma_pow(&self, ti: usize, oi: usize, q: f64) -> EstimatorResult {
        let v: Vec<f64> = self.column(ti, oi, 1).into_iter().map(|g| g.max(0.0).powf(q / 2.0)).collect();
        EstimatorResult::from_samples(&v, &self.cfg)
    }

    /// Per-path directional differences for field `k`, after the Richardson decision.
    fn directional_samples(&self, ti: usize, oi: usize, k: usize) -> (Vec<f64>, DirectionalEstimate) {
        let d1 = self.column(ti, oi, 2 + k);
        let d2 = self.column(ti, oi, 2 + self.n_fields + k);
        let (m1, se1) = mean_se(&d1);
        let (m2, _) = mean_se(&d2);
        let bias = (m1 - m2).abs() * 4.0 / 3.0;
        if bias > 0.1 * se1 {
            let r: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| (4.0 * b - a) / 3.0).collect();
            let res = EstimatorResult::from_samples(&r, &self.cfg);
            (r, DirectionalEstimate { result: res, richardson: true, bias_estimate: bias })
        } else {
            let res = EstimatorResult::from_samples(&d1, &self.cfg);
            (d1, DirectionalEstimate { result: res, richardson: false, bias_estimate: bias })
        }
    }

    /// `Z_kP_tf(x)`.
    pub fn zk(&self, ti: usize, oi: usize, k: usize) -> DirectionalEstimate {
        self.directional_samples(ti, oi, k).1
    }

    /// `(Σ_k m_k²)^{q/2}` with the delta-method error.
    pub fn gamma_ptf_pow(&self, ti: usize, oi: usize, q: f64) -> EstimatorResult {
        let per_k: Vec<(Vec<f64>, f64)> = (0..self.n_fields)
            .map(|k| {
                let (s, e) = self.directional_samples(ti, oi, k);
                (s, e.result.value)
            })
            .collect();
        let sq: f64 = per_k.iter().map(|(_, m)| m * m).sum();
        let value = sq.powf(q / 2.0);
        let scale = if sq > 0.0 { q * sq.powf(q / 2.0 - 1.0) } else { 0.0 };
        let lin: Vec<f64> = (0..self.rows.len()).map(|p| scale * per_k.iter().map(|(s, m)| m * s[p]).sum::<f64>()).collect();
        let (_, se) = mean_se(&lin);
        EstimatorResult { value, std_err: se, n_paths: self.rows.len(), seed: self.cfg.seed, dt: self.cfg.dt }
    }

    /// `Γ(P_tf)(x)`.
    pub fn gamma_ptf(&self, ti: usize, oi: usize) -> EstimatorResult {
        self.gamma_ptf_pow(ti, oi, 2.0)
    }

    /// `P_tf² − (P_tf)²`.
    pub fn variance(&self, ti: usize, oi: usize) -> EstimatorResult {
        let f = self.column(ti, oi, 0);
        let (m, _) = mean_se(&f);
        let dev: Vec<f64> = f.iter().map(|v| (v - m) * (v - m)).collect();
        let (v, se) = mean_se(&dev);
        let n = f.len() as f64;
        let unbiased = if n > 1.0 { v * n / (n - 1.0) } else { 0.0 };
        EstimatorResult { value: unbiased, std_err: se, n_paths: f.len(), seed: self.cfg.seed, dt: self.cfg.dt }
    }

    /// `Γ(P_tf) ≤ e^{−κt} P_tΓ(f)`.
    pub fn gradient_check(&self, ti: usize, oi: usize, kappa: f64) -> BoundCheck {
        let t = self.times[ti];
        BoundCheck::new(t, self.gamma_ptf(ti, oi), self.pt_gamma(ti, oi).scaled((-kappa * t).exp()))
    }

    /// `Γ(P_tf)^{q/2} ≤ e^{−κ't} P_tΓ(f)^{q/2}`.
    pub fn lq_check(&self, ti: usize, oi: usize, q: f64, kappa_q: f64) -> BoundCheck {
        let t = self.times[ti];
        BoundCheck::new(t, self.gamma_ptf_pow(ti, oi, q), self.pt_gamma_pow(ti, oi, q).scaled((-kappa_q * t).exp()))
    }

    /// `P_tf² − (P_tf)² ≤ (2/κ)(1 − e^{−κt}) P_tΓ(f)`.
    pub fn poincare_check(&self, ti: usize, oi: usize, kappa: f64) -> Result<BoundCheck, SemigroupError> {
        if !(kappa > 0.0) {
            return Err(SemigroupError::Precondition(format!("Poincaré check needs κ > 0, got {kappa}")));
        }
        let t = self.times[ti];
        let c = 2.0 / kappa * (1.0 - (-kappa * t).exp());
        Ok(BoundCheck::new(t, self.variance(ti, oi), self.pt_gamma(ti, oi).scaled(c)))
    }
}

/// Runs the shared path ensemble: the start `x` plus `flow_exp(Z_k, x, ±h)`
/// and `±h/2` for every field, all driven by the same noise per path.
pub fn gradient_experiment(
    model: &Model,
    observables: &[Expr],
    x: &[f64],
    times: &[f64],
    cfg: &McConfig,
    exec: &Exec,
) -> Result<GradientData, SemigroupError> {
    check_point(model, x)?;
    for f in observables {
        check_observable(model, f)?;
    }
    let h = cfg.fd_step;
    if !(h > 0.0) {
        return Err(SemigroupError::Precondition("finite-difference step must be positive".into()));
    }
    let steps = snapshot_steps(times, cfg)?;
    let fields = model.fields();
    let n = fields.len();
    let mut starts = vec![x.to_vec()];
    for z in fields {
        let nf = NumField::from_field(z);
        for s in [h, -h, h / 2.0, -h / 2.0] {
            starts.push(flow_exp(&nf, x, s)?);
        }
    }
    let gammas: Vec<Expr> = observables.iter().map(|f| f.gamma(fields)).collect();
    let n_obs = observables.len();
    let t_end = *times.last().expect("checked non-empty");
    let batch = run_paths(&model.sys, &cfg.integrator(t_end), &starts, &steps, exec, |_, snaps| {
        let mut row = Vec::with_capacity(times.len() * n_obs * (2 + 2 * n));
        for snap in snaps {
            for (f, g) in observables.iter().zip(&gammas) {
                row.push(f.eval(&snap[0]));
                row.push(g.eval(&snap[0]));
                for k in 0..n {
                    row.push((f.eval(&snap[1 + 4 * k]) - f.eval(&snap[2 + 4 * k])) / (2.0 * h));
                }
                for k in 0..n {
                    row.push((f.eval(&snap[3 + 4 * k]) - f.eval(&snap[4 + 4 * k])) / h);
                }
            }
        }
        row
    })?;
    Ok(GradientData { times: times.to_vec(), n_obs, n_fields: n, cfg: *cfg, rows: batch.values })
}

/// `Z_kP_tf(x)` by CRN central differences (Richardson-corrected when needed).
pub fn estimate_zk_ptf(
    model: &Model,
    f: &Expr,
    x: &[f64],
    t: f64,
    k: usize,
    cfg: &McConfig,
    exec: &Exec,
) -> Result<DirectionalEstimate, SemigroupError> {
    if k >= model.fields().len() {
        return Err(SemigroupError::Precondition(format!("field index {} out of range", k + 1)));
    }
    let data = gradient_experiment(model, std::slice::from_ref(f), x, &[t], cfg, exec)?;
    Ok(data.zk(0, 0, k))
}

/// Same difference with independent noise for the two start points; only
/// useful to measure what common random numbers save.
pub fn estimate_zk_ptf_independent(
    model: &Model,
    f: &Expr,
    x: &[f64],
    t: f64,
    k: usize,
    cfg: &McConfig,
    exec: &Exec,
) -> Result<EstimatorResult, SemigroupError> {
    let nf = NumField::from_field(&model.fields()[k]);
    let h = cfg.fd_step;
    let plus = flow_exp(&nf, x, h)?;
    let minus = flow_exp(&nf, x, -h)?;
    let steps = snapshot_steps(&[t], cfg)?;
    let a = run_paths(&model.sys, &cfg.integrator(t), &[plus], &steps, exec, |_, s| f.eval(&s[0][0]))?;
    let other = cfg.with_seed(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let b = run_paths(&model.sys, &other.integrator(t), &[minus], &steps, exec, |_, s| f.eval(&s[0][0]))?;
    let d: Vec<f64> = a.values.iter().zip(&b.values).map(|(p, m)| (p - m) / (2.0 * h)).collect();
    Ok(EstimatorResult::from_samples(&d, cfg))
}

/// `Z_kP_tf(x) = E[∇f(ξ_t)·J_t Z_k(x)]` via the first-variation process.
pub fn estimate_zk_tangent(
    model: &Model,
    f: &Expr,
    x: &[f64],
    t: f64,
    k: usize,
    cfg: &McConfig,
    exec: &Exec,
) -> Result<EstimatorResult, SemigroupError> {
    check_point(model, x)?;
    check_observable(model, f)?;
    let dir = model.fields()[k].eval_f64(x);
    let start: Vec<Dual<f64>> = x.iter().zip(&dir).map(|(&a, &v)| Dual::new(a, v)).collect();
    let steps = snapshot_steps(&[t], cfg)?;
    let batch = run_paths(&model.sys, &cfg.integrator(t), &[start], &steps, exec, |_, s| f.eval(&s[0][0]).eps)?;
    Ok(EstimatorResult::from_samples(&batch.values, cfg))
}

/// Gradient bound at each grid time for one observable.
pub fn check_gradient_bound(
    model: &Model,
    kappa: f64,
    f: &Expr,
    x: &[f64],
    times: &[f64],
    cfg: &McConfig,
    exec: &Exec,
) -> Result<Vec<BoundCheck>, SemigroupError> {
    let data = gradient_experiment(model, std::slice::from_ref(f), x, times, cfg, exec)?;
    Ok((0..times.len()).map(|ti| data.gradient_check(ti, 0, kappa)).collect())
}

/// `l_q` bound at each grid time; the model must have `G = 0` and no drift.
#[allow(clippy::too_many_arguments)]
pub fn check_lq_bound(
    model: &Model,
    q: f64,
    kappa_q: f64,
    f: &Expr,
    x: &[f64],
    times: &[f64],
    cfg: &McConfig,
    exec: &Exec,
) -> Result<Vec<BoundCheck>, SemigroupError> {
    if !(q > 1.0) {
        return Err(SemigroupError::Precondition(format!("q must exceed 1, got {q}")));
    }
    if !model.spec.g_is_zero() || !model.spec.drift.is_zero() {
        return Err(SemigroupError::Precondition("the l_q bound is stated for G = 0 and zero drift".into()));
    }
    let data = gradient_experiment(model, std::slice::from_ref(f), x, times, cfg, exec)?;
    Ok((0..times.len()).map(|ti| data.lq_check(ti, 0, q, kappa_q)).collect())
}

/// Poincaré inequality at each grid time.
pub fn check_poincare(
    model: &Model,
    kappa: f64,
    f: &Expr,
    x: &[f64],
    times: &[f64],
    cfg: &McConfig,
    exec: &Exec,
) -> Result<Vec<BoundCheck>, SemigroupError> {
    let data = gradient_experiment(model, std::slice::from_ref(f), x, times, cfg, exec)?;
    (0..times.len()).map(|ti| data.poincare_check(ti, 0, kappa)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub times: Vec<f64>,
    pub estimates: Vec<EstimatorResult>,
    /// OLS slope of `P_tρ` over the second half of the grid.
    pub tail_slope: f64,
    pub tail_slope_se: f64,
    pub bounded: bool,
}

/// `P_tρ(x)` on a grid; "bounded" when the tail trend is within 3σ of flat.
pub fn check_lyapunov(
    model: &Model,
    rho: &LyapunovFunction,
    x: &[f64],
    times: &[f64],
    cfg: &McConfig,
    exec: &Exec,
) -> Result<LyapunovReport, SemigroupError> {
    check_point(model, x)?;
    let steps = snapshot_steps(times, cfg)?;
    let t_end = *times.last().expect("non-empty");
    let batch = run_paths(&model.sys, &cfg.integrator(t_end), &[x.to_vec()], &steps, exec, |_, snaps| {
        snaps.iter().map(|s| rho.value(&s[0])).collect::<Vec<f64>>()
    })?;
    let estimates: Vec<EstimatorResult> = (0..times.len())
        .map(|ti| {
            let col: Vec<f64> = batch.values.iter().map(|r| r[ti]).collect();
            EstimatorResult::from_samples(&col, cfg)
        })
        .collect();
    let tail: Vec<usize> = (0..times.len()).filter(|&i| times[i] >= t_end / 2.0).collect();
    let (slope, se) = if tail.len() >= 2 {
        let tx: Vec<f64> = tail.iter().map(|&i| times[i]).collect();
        let tm = tx.iter().sum::<f64>() / tx.len() as f64;
        let sxx: f64 = tx.iter().map(|t| (t - tm) * (t - tm)).sum();
        let w: Vec<f64> = tx.iter().map(|t| (t - tm) / sxx).collect();
        let lin: Vec<f64> = batch.values.iter().map(|r| tail.iter().zip(&w).map(|(&i, wi)| wi * r[i]).sum()).collect();
        mean_se(&lin)
    } else {
        (0.0, 0.0)
    };
    let finite = estimates.iter().all(|e| e.value.is_finite());
    Ok(LyapunovReport {
        times: times.to_vec(),
        estimates,
        tail_slope: slope,
        tail_slope_se: se,
        bounded: finite && slope <= VIOLATION_SIGMAS * se,
    })
}

/// Thinned long-run states, grouped by path.
#[derive(Debug, Clone)]
pub struct InvariantSamples {
    pub seed: u64,
    pub dt: f64,
    /// `paths[p][j]` is the `j`-th retained state of path `p`.
    pub paths: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Consistency {
    pub difference: f64,
    pub combined_err: f64,
    pub consistent: bool,
}

impl InvariantSamples {
    pub fn len(&self) -> usize {
        self.paths.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cfg(&self) -> McConfig {
        McConfig { dt: self.dt, paths: self.paths.len(), seed: self.seed, ..McConfig::default() }
    }

    /// Mean of `g` with a path-block standard error.
    pub fn block_mean(&self, g: impl Fn(&[f64]) -> f64) -> EstimatorResult {
        let blocks: Vec<f64> = self.paths.iter().map(|p| p.iter().map(|s| g(s)).sum::<f64>() / p.len().max(1) as f64).collect();
        EstimatorResult::from_samples(&blocks, &self.cfg())
    }

    /// `ν(f)`.
    pub fn mean(&self, f: &Expr) -> EstimatorResult {
        self.block_mean(|s| f.eval(s))
    }

    /// `ν(f − νf)²`.
    pub fn variance(&self, f: &Expr) -> EstimatorResult {
        let m = self.mean(f).value;
        self.block_mean(|s| (f.eval(s) - m).powi(2))
    }

    /// `ν(f − νf)² ≤ (2/κ) νΓ(f)`.
    pub fn poincare(&self, f: &Expr, fields: &[VectorField], kappa: f64) -> Result<BoundCheck, SemigroupError> {
        if !(kappa > 0.0) {
            return Err(SemigroupError::Precondition(format!("Poincaré check needs κ > 0, got {kappa}")));
        }
        let g = f.gamma(fields);
        Ok(BoundCheck::new(f64::INFINITY, self.variance(f), self.block_mean(|s| g.eval(s)).scaled(2.0 / kappa)))
    }

    /// Agreement of `ν(f)` between two independent sample sets within 3σ.
    pub fn self_consistency(&self, other: &InvariantSamples, f: &Expr) -> Consistency {
        let a = self.mean(f);
        let b = other.mean(f);
        let err = a.std_err.hypot(b.std_err);
        let difference = a.value - b.value;
        Consistency { difference, combined_err: err, consistent: difference.abs() <= VIOLATION_SIGMAS * err }
    }
}

/// Runs `t_burn`, then keeps one state every `thinning` time units up to `t_burn + t_sample`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_invariant_measure(
    model: &Model,
    x0: &[f64],
    t_burn: f64,
    t_sample: f64,
    thinning: f64,
    cfg: &McConfig,
    exec: &Exec,
) -> Result<InvariantSamples, SemigroupError> {
    check_point(model, x0)?;
    if !(thinning > 0.0) || !(t_sample >= 0.0) || !(t_burn >= 0.0) {
        return Err(SemigroupError::Precondition("burn-in, sampling window and thinning must be non-negative".into()));
    }
    let count = (t_sample / thinning + 1e-9).floor() as usize + 1;
    let times: Vec<f64> = (0..count).map(|j| t_burn + j as f64 * thinning).collect();
    let steps = snapshot_steps(&times, cfg)?;
    let t_end = *times.last().expect("count ≥ 1");
    let batch = run_paths(&model.sys, &cfg.integrator(t_end), &[x0.to_vec()], &steps, exec, |_, snaps| {
        snaps.iter().map(|s| s[0].clone()).collect::<Vec<_>>()
    })?;
    Ok(InvariantSamples { seed: cfg.seed, dt: cfg.dt, paths: batch.values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpMomentReport {
    /// Empirical exponent `log ν(e^{δf}) − δν(f)` against `δ²‖Γf‖∞/κ`.
    pub check: BoundCheck,
    pub moment: EstimatorResult,
    pub mean: EstimatorResult,
    pub delta: f64,
    pub gamma_sup: f64,
}

/// Certified `‖Γ(f)‖∞` from interval enclosure, when finite.
pub fn gamma_sup_bound(f: &Expr, fields: &[VectorField]) -> Option<f64> {
    f.gamma(fields).sup_bound()
}

/// Exponential-moment bound `ν(e^{δf}) ≤ Const·e^{δ²‖Γf‖∞/κ}·e^{δν(f)}` with
/// `Const = 1`, tested on the exponent. Requires `δ²‖Γf‖∞/κ ≤ 1`.
pub fn check_exp_moment(
    samples: &InvariantSamples,
    f: &Expr,
    delta: f64,
    kappa: f64,
    gamma_sup: f64,
) -> Result<ExpMomentReport, SemigroupError> {
    if !(kappa > 0.0) {
        return Err(SemigroupError::Precondition(format!("exponential moment needs κ > 0, got {kappa}")));
    }
    if !gamma_sup.is_finite() || gamma_sup < 0.0 {
        return Err(SemigroupError::Precondition("‖Γ(f)‖∞ must be a finite certified bound".into()));
    }
    let exponent = delta * delta * gamma_sup / kappa;
    if exponent > 1.0 {
        return Err(SemigroupError::Precondition(format!("δ²‖Γf‖∞/κ = {exponent} exceeds 1")));
    }
    let mean = samples.mean(f);
    let moment = samples.block_mean(|s| (delta * f.eval(s)).exp());
    let m = moment.value;
    // per-block linearisation of log M − δ·mean
    let lin: Vec<f64> = samples
        .paths
        .iter()
        .map(|p| p.iter().map(|s| (delta * f.eval(s)).exp() / m - delta * f.eval(s)).sum::<f64>() / p.len().max(1) as f64)
        .collect();
    let (_, se) = mean_se(&lin);
    let lhs = EstimatorResult { value: m.ln() - delta * mean.value, std_err: se, ..mean };
    let rhs = EstimatorResult { value: exponent, std_err: 0.0, ..mean };
    Ok(ExpMomentReport { check: BoundCheck::new(f64::INFINITY, lhs, rhs), moment, mean, delta, gamma_sup })
}

/// Least-squares slope of `log|error|` against `log dt`.
pub fn weak_order_slope(dts: &[f64], errors: &[f64]) -> f64 {
    let x: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.abs().ln()).collect();
    ols(&x, &y).slope
}
