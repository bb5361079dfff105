//! Assembly and integration of the SDE whose generator is `𝓛`.
//!
//! Stratonovich form: `dξ = μ(ξ)dt + Σ_c V_c(ξ)∘dW_c` with
//! `μ = −βD + ½Σ G^aSym_ij [X_i, X_j] + Σ α_i X_i` and
//! `V_c = √2 Σ_j B_jc X_j`, `B = √(I + G*)`. The Itô drift adds
//! `½Σ_c ∇_{V_c}V_c = Σ_{jj'} (I+G*)_{jj'} ∇_{X_j}X_{j'}`.

use std::collections::BTreeMap;
use std::io::{self, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{ConstantsError, ModelSpec};
use crate::exec::Exec;
use crate::observable::Expr;
use crate::polyfield::{rat_to_f64, Poly, PolyError, VectorField};
use crate::rng::NormalStream;
use crate::scalar::{Dual, Scalar};

/// Share of paths allowed to hit a non-finite state before a run fails.
pub const BLOWUP_QUOTA: f64 = 1e-3;
pub const MAX_FLOW_STEP: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error(transparent)]
    Constants(#[from] ConstantsError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix is not positive definite (smallest eigenvalue {0})")]
    NotPositiveDefinite(f64),
    #[error("square-root residual {0:e} exceeds tolerance")]
    SqrtResidual(f64),
    #[error("invalid integrator configuration: {0}")]
    Config(String),
    #[error("{failed} of {paths} paths became non-finite (first: path {path}, step {step})")]
    Blowup { failed: usize, paths: usize, path: u64, step: usize },
    #[error("flow step |h| = {0} exceeds {MAX_FLOW_STEP}")]
    FlowStep(f64),
    #[error("state has {found} coordinates, expected {expected}")]
    Dimension { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
struct NumTerm {
    coeff: f64,
    factors: Vec<(usize, u32)>,
}

/// Polynomial with `f64` coefficients, evaluated on any [`Scalar`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NumPoly {
    terms: Vec<NumTerm>,
}

impl NumPoly {
    fn from_map(map: BTreeMap<Vec<u32>, f64>, shift: usize) -> Self {
        let terms = map
            .into_iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|(e, coeff)| NumTerm {
                coeff,
                factors: e.iter().enumerate().filter(|(_, &p)| p > 0).map(|(v, &p)| (v + shift, p)).collect(),
            })
            .collect();
        NumPoly { terms }
    }

    pub fn from_poly(p: &Poly) -> Self {
        let map = p.terms().map(|(m, c)| (m.exponents().to_vec(), rat_to_f64(c))).collect();
        NumPoly::from_map(map, 0)
    }

    fn shifted(&self, offset: usize) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| NumTerm { coeff: t.coeff, factors: t.factors.iter().map(|&(v, p)| (v + offset, p)).collect() })
            .collect();
        NumPoly { terms }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval<S: Scalar>(&self, x: &[S]) -> S {
        let mut s = S::zero();
        for t in &self.terms {
            let mut v = S::cst(t.coeff);
            for &(i, p) in &t.factors {
                v *= if p == 1 { x[i] } else { x[i].powi(p as i32) };
            }
            s += v;
        }
        s
    }
}

/// Sparse vector field with [`NumPoly`] components.
#[derive(Debug, Clone, PartialEq)]
pub struct NumField {
    dim: usize,
    comps: Vec<(usize, NumPoly)>,
}

impl NumField {
    pub fn zero(dim: usize) -> Self {
        NumField { dim, comps: Vec::new() }
    }

    pub fn from_field(v: &VectorField) -> Self {
        NumField::combination(v.ambient_dim(), &[(1.0, v)], 0, v.ambient_dim())
    }

    /// `Σ w·V` for fields on `ℝ^d`, embedded at coordinate `offset` of `ℝ^total`.
    pub fn combination(dim: usize, parts: &[(f64, &VectorField)], offset: usize, total: usize) -> Self {
        let mut acc: Vec<BTreeMap<Vec<u32>, f64>> = vec![BTreeMap::new(); dim];
        for (w, v) in parts {
            assert_eq!(v.ambient_dim(), dim, "field dimension");
            if *w == 0.0 {
                continue;
            }
            for (a, slot) in acc.iter_mut().enumerate() {
                for (m, c) in v.component(a).terms() {
                    *slot.entry(m.exponents().to_vec()).or_insert(0.0) += w * rat_to_f64(c);
                }
            }
        }
        let comps = acc
            .into_iter()
            .enumerate()
            .map(|(a, map)| (a + offset, NumPoly::from_map(map, offset)))
            .filter(|(_, p)| !p.is_zero())
            .collect();
        NumField { dim: total, comps }
    }

    /// Concatenates the components of fields with disjoint supports.
    pub fn merge(dim: usize, parts: Vec<NumField>) -> Self {
        let mut comps: Vec<(usize, NumPoly)> = Vec::new();
        for p in parts {
            assert_eq!(p.dim, dim, "field dimension");
            for (a, poly) in p.comps {
                match comps.iter_mut().find(|(b, _)| *b == a) {
                    Some((_, existing)) => existing.terms.extend(poly.terms),
                    None => comps.push((a, poly)),
                }
            }
        }
        NumField { dim, comps }
    }

    /// The same field on coordinates `offset..offset+dim` of `ℝ^total`.
    pub fn shifted(&self, offset: usize, total: usize) -> Self {
        assert!(offset + self.dim <= total, "embedding out of range");
        NumField { dim: total, comps: self.comps.iter().map(|(a, p)| (a + offset, p.shifted(offset))).collect() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.comps.is_empty()
    }

    /// `out += scale · V(x)`.
    pub fn add_scaled<S: Scalar>(&self, x: &[S], scale: S, out: &mut [S]) {
        for (a, p) in &self.comps {
            out[*a] += scale * p.eval(x);
        }
    }

    pub fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.dim];
        self.add_scaled(x, S::cst(1.0), &mut out);
        out
    }
}

/// Drift and diffusion evaluators of the SDE.
#[derive(Debug, Clone)]
pub struct SdeSystem {
    dim: usize,
    strat_poly: NumField,
    ito_correction: NumField,
    drift_terms: Vec<(Expr, NumField)>,
    diffusion: Vec<NumField>,
}

impl SdeSystem {
    /// Raw constructor: polynomial Stratonovich drift, its Itô correction,
    /// `α·X` terms and one diffusion field per Brownian channel.
    pub fn from_parts(
        dim: usize,
        strat_poly: NumField,
        ito_correction: NumField,
        drift_terms: Vec<(Expr, NumField)>,
        diffusion: Vec<NumField>,
    ) -> Self {
        SdeSystem { dim, strat_poly, ito_correction, drift_terms, diffusion }
    }

    /// Independent copies of `blocks[b]` on consecutive coordinate blocks,
    /// plus extra `α·V` drift terms on the product space.
    pub fn product(blocks: &[SdeSystem], extra_drift: Vec<(Expr, NumField)>) -> Self {
        let dim: usize = blocks.iter().map(|b| b.dim).sum();
        let mut offset = 0;
        let mut strat = Vec::with_capacity(blocks.len());
        let mut ito = Vec::with_capacity(blocks.len());
        let mut drift_terms = Vec::new();
        let mut diffusion = Vec::new();
        for b in blocks {
            strat.push(b.strat_poly.shifted(offset, dim));
            ito.push(b.ito_correction.shifted(offset, dim));
            drift_terms.extend(b.drift_terms.iter().map(|(a, v)| (a.shift_vars(offset), v.shifted(offset, dim))));
            diffusion.extend(b.diffusion.iter().map(|v| v.shifted(offset, dim)));
            offset += b.dim;
        }
        drift_terms.extend(extra_drift.into_iter().filter(|(a, v)| !a.is_zero() && !v.is_zero()));
        SdeSystem { dim, strat_poly: NumField::merge(dim, strat), ito_correction: NumField::merge(dim, ito), drift_terms, diffusion }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn channels(&self) -> usize {
        self.diffusion.len()
    }

    pub fn diffusion_fields(&self) -> &[NumField] {
        &self.diffusion
    }

    pub fn ito_correction(&self) -> &NumField {
        &self.ito_correction
    }

    /// Same drift with every diffusion field removed.
    pub fn without_noise(&self) -> Self {
        let mut s = self.clone();
        s.diffusion = vec![NumField::zero(self.dim); self.channels()];
        s.ito_correction = NumField::zero(self.dim);
        s
    }

    /// Stratonovich drift `μ`, plus the Itô correction when `ito` is set.
    pub fn drift<S: Scalar>(&self, x: &[S], ito: bool, out: &mut [S]) {
        out.iter_mut().for_each(|v| *v = S::zero());
        let one = S::cst(1.0);
        self.strat_poly.add_scaled(x, one, out);
        if ito {
            self.ito_correction.add_scaled(x, one, out);
        }
        for (alpha, field) in &self.drift_terms {
            let a = alpha.eval(x);
            field.add_scaled(x, a, out);
        }
    }

    pub fn drift_f64(&self, x: &[f64], ito: bool) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift(x, ito, &mut out);
        out
    }

    /// `out += Σ_c V_c(x) dw_c`.
    pub fn add_noise<S: Scalar>(&self, x: &[S], dw: &[f64], out: &mut [S]) {
        for (v, &w) in self.diffusion.iter().zip(dw) {
            v.add_scaled(x, S::cst(w), out);
        }
    }

    /// `[V_c(x)]_c`.
    pub fn diffusion_columns(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.diffusion.iter().map(|v| v.eval(x)).collect()
    }

    fn step<S: Scalar>(&self, scheme: Scheme, x: &mut [S], dt: f64, dw: &[f64], buf: &mut StepBuffers<S>) {
        match scheme {
            Scheme::EulerItoCorrected => {
                self.drift(x, true, &mut buf.mu0);
                buf.noise0.iter_mut().for_each(|v| *v = S::zero());
                self.add_noise(x, dw, &mut buf.noise0);
                for a in 0..self.dim {
                    x[a] += buf.mu0[a] * dt + buf.noise0[a];
                }
            }
            Scheme::HeunStratonovich => {
                self.drift(x, false, &mut buf.mu0);
                buf.noise0.iter_mut().for_each(|v| *v = S::zero());
                self.add_noise(x, dw, &mut buf.noise0);
                for a in 0..self.dim {
                    buf.pred[a] = x[a] + buf.mu0[a] * dt + buf.noise0[a];
                }
                self.drift(&buf.pred, false, &mut buf.mu1);
                buf.noise1.iter_mut().for_each(|v| *v = S::zero());
                self.add_noise(&buf.pred, dw, &mut buf.noise1);
                for a in 0..self.dim {
                    x[a] += (buf.mu0[a] + buf.mu1[a]) * (0.5 * dt) + (buf.noise0[a] + buf.noise1[a]) * 0.5;
                }
            }
        }
    }
}

struct StepBuffers<S> {
    mu0: Vec<S>,
    mu1: Vec<S>,
    noise0: Vec<S>,
    noise1: Vec<S>,
    pred: Vec<S>,
}

impl<S: Scalar> StepBuffers<S> {
    fn new(dim: usize) -> Self {
        let z = vec![S::zero(); dim];
        StepBuffers { mu0: z.clone(), mu1: z.clone(), noise0: z.clone(), noise1: z.clone(), pred: z }
    }
}

/// Symmetric square root by spectral decomposition; row-major `n×n`.
pub fn sqrt_spd(m: &[f64], n: usize) -> Result<Vec<f64>, SdeError> {
    if m.len() != n * n {
        return Err(SdeError::Dimension { expected: n * n, found: m.len() });
    }
    let a = DMatrix::from_row_slice(n, n, m);
    let scale = a.norm().max(f64::MIN_POSITIVE);
    if (&a - a.transpose()).norm() > 1e-12 * scale {
        return Err(SdeError::NotSymmetric);
    }
    let eig = SymmetricEigen::new(a.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        return Err(SdeError::NotPositiveDefinite(min));
    }
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let b = &eig.eigenvectors * root * eig.eigenvectors.transpose();
    let b = (&b + b.transpose()) * 0.5;
    let residual = (&b * &b - &a).norm();
    if residual > 1e-12 * scale {
        return Err(SdeError::SqrtResidual(residual / scale));
    }
    Ok((0..n * n).map(|ij| b[(ij / n, ij % n)]).collect())
}

/// Builds drift and diffusion for a model.
pub fn assemble_sde(spec: &ModelSpec) -> Result<SdeSystem, SdeError> {
    let geo = &spec.geometry;
    let m = geo.generators();
    let dim = geo.ambient_dim();
    let x = geo.generator_fields();
    let ga = spec.g_antisym();
    let gs = spec.g_sym();

    let mut brackets = Vec::new();
    for i in 0..m {
        for j in 0..m {
            if ga[i * m + j] != 0.0 {
                brackets.push((0.5 * ga[i * m + j], x[i].bracket(&x[j])?));
            }
        }
    }
    let mut parts: Vec<(f64, &VectorField)> = vec![(-spec.beta, geo.dilation())];
    parts.extend(brackets.iter().map(|(w, v)| (*w, v)));
    let strat_poly = NumField::combination(dim, &parts, 0, dim);

    let mut cov = Vec::new();
    for j in 0..m {
        for k in 0..m {
            let w = gs[j * m + k] + if j == k { 1.0 } else { 0.0 };
            if w != 0.0 {
                cov.push((w, x[j].covariant(&x[k])?));
            }
        }
    }
    let cov_parts: Vec<(f64, &VectorField)> = cov.iter().map(|(w, v)| (*w, v)).collect();
    let ito_correction = NumField::combination(dim, &cov_parts, 0, dim);

    let mut ipg = gs.clone();
    for i in 0..m {
        ipg[i * m + i] += 1.0;
    }
    let b = sqrt_spd(&ipg, m)?;
    let diffusion = (0..m)
        .map(|c| {
            let parts: Vec<(f64, &VectorField)> = (0..m).map(|j| (std::f64::consts::SQRT_2 * b[j * m + c], &x[j])).collect();
            NumField::combination(dim, &parts, 0, dim)
        })
        .collect();

    let drift_terms =
        spec.drift.exprs.iter().zip(x).filter(|(a, _)| !a.is_zero()).map(|(a, xi)| (a.clone(), NumField::from_field(xi))).collect();

    Ok(SdeSystem { dim, strat_poly, ito_correction, drift_terms, diffusion })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Euler–Maruyama on the Itô form.
    #[default]
    EulerItoCorrected,
    /// Stochastic Heun predictor–corrector on the Stratonovich form.
    HeunStratonovich,
}

impl std::str::FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "euler_ito_corrected" | "euler" => Ok(Scheme::EulerItoCorrected),
            "heun_stratonovich" | "heun" => Ok(Scheme::HeunStratonovich),
            other => Err(format!("unknown scheme `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub seed: u64,
    pub paths: usize,
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), SdeError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SdeError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(SdeError::Config(format!("t_end must be non-negative, got {}", self.t_end)));
        }
        if self.paths == 0 {
            return Err(SdeError::Config("path count must be positive".into()));
        }
        self.step_of(self.t_end).map(|_| ())
    }

    /// Step index of time `t`; `t` must lie on the `dt` grid.
    pub fn step_of(&self, t: f64) -> Result<usize, SdeError> {
        let s = (t / self.dt).round();
        if !(t >= 0.0) || (s * self.dt - t).abs() > 1e-9 * t.max(1.0) {
            return Err(SdeError::Config(format!("time {t} is not a multiple of dt = {}", self.dt)));
        }
        Ok(s as usize)
    }

    pub fn steps(&self) -> usize {
        self.step_of(self.t_end).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PathFailure {
    pub path: u64,
    pub step: usize,
}

/// Per-path results in path order, with the paths that were dropped.
#[derive(Debug, Clone)]
pub struct PathBatch<T> {
    pub values: Vec<T>,
    pub failures: Vec<PathFailure>,
}

/// Integrates every start point in `starts` with the same noise per path
/// (common random numbers) and hands `f` the states at each snapshot step:
/// `snapshots[s][b]` is start `b` at `snapshot_steps[s]`.
pub fn run_paths<S, T, F>(
    sys: &SdeSystem,
    cfg: &IntegratorConfig,
    starts: &[Vec<S>],
    snapshot_steps: &[usize],
    exec: &Exec,
    f: F,
) -> Result<PathBatch<T>, SdeError>
where
    S: Scalar,
    T: Send,
    F: Fn(u64, &[Vec<Vec<S>>]) -> T + Sync + Send,
{
    cfg.validate()?;
    if let Some(s) = starts.iter().find(|s| s.len() != sys.dim) {
        return Err(SdeError::Dimension { expected: sys.dim, found: s.len() });
    }
    if snapshot_steps.windows(2).any(|w| w[0] > w[1]) {
        return Err(SdeError::Config("snapshot steps must be sorted".into()));
    }
    let last = snapshot_steps.last().copied().unwrap_or(0);
    let noise = NormalStream::new(cfg.seed, sys.channels());
    let sdt = cfg.dt.sqrt();
    let outcomes = exec.map_indexed(cfg.paths, |p| {
        let path = p as u64;
        let mut states: Vec<Vec<S>> = starts.to_vec();
        let mut buf = StepBuffers::new(sys.dim);
        let mut dw = vec![0.0; sys.channels()];
        let mut reader = noise.path(path);
        let mut snaps = Vec::with_capacity(snapshot_steps.len());
        let mut next = 0;
        while next < snapshot_steps.len() && snapshot_steps[next] == 0 {
            snaps.push(states.clone());
            next += 1;
        }
        for step in 0..last {
            reader.next_step(&mut dw);
            dw.iter_mut().for_each(|w| *w *= sdt);
            for s in states.iter_mut() {
                sys.step(cfg.scheme, s, cfg.dt, &dw, &mut buf);
                if !s.iter().all(Scalar::is_finite) {
                    return Err(PathFailure { path, step: step + 1 });
                }
            }
            while next < snapshot_steps.len() && snapshot_steps[next] == step + 1 {
                snaps.push(states.clone());
                next += 1;
            }
        }
        Ok(f(path, &snaps))
    });
    let mut values = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(v) => values.push(v),
            Err(e) => failures.push(e),
        }
    }
    if !failures.is_empty() && failures.len() as f64 > BLOWUP_QUOTA * cfg.paths as f64 {
        let first = failures[0];
        return Err(SdeError::Blowup { failed: failures.len(), paths: cfg.paths, path: first.path, step: first.step });
    }
    Ok(PathBatch { values, failures })
}

/// Terminal states of paths from one start point.
pub fn integrate_paths(sys: &SdeSystem, cfg: &IntegratorConfig, x0: &[f64], exec: &Exec) -> Result<PathBatch<Vec<f64>>, SdeError> {
    let last = cfg.steps();
    run_paths(sys, cfg, &[x0.to_vec()], &[last], exec, |_, snaps| snaps[0][0].clone())
}

/// Every state along each path (`values[path][step]`).
pub fn integrate_trajectories(
    sys: &SdeSystem,
    cfg: &IntegratorConfig,
    x0: &[f64],
    exec: &Exec,
) -> Result<PathBatch<Vec<Vec<f64>>>, SdeError> {
    let steps: Vec<usize> = (0..=cfg.steps()).collect();
    run_paths(sys, cfg, &[x0.to_vec()], &steps, exec, |_, snaps| snaps.iter().map(|s| s[0].clone()).collect())
}

/// Writes `path_id,step,t,x_1..x_N` rows after a `#` comment line.
pub fn write_trajectories_csv<W: Write>(mut w: W, comment: &str, dt: f64, dim: usize, paths: &[(u64, Vec<Vec<f64>>)]) -> io::Result<()> {
    writeln!(w, "# {comment}")?;
    let cols: Vec<String> = (1..=dim).map(|i| format!("x_{i}")).collect();
    writeln!(w, "path_id,step,t,{}", cols.join(","))?;
    for (id, traj) in paths {
        for (step, x) in traj.iter().enumerate() {
            let xs: Vec<String> = x.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{id},{step},{},{}", step as f64 * dt, xs.join(","))?;
        }
    }
    Ok(())
}

/// Terminal state `ξ_t` and first variation `J_t v₀`.
pub type TangentState = (Vec<f64>, Vec<f64>);

/// Paths carrying the first variation `J_t v₀` alongside the state.
pub fn tangent_paths(
    sys: &SdeSystem,
    cfg: &IntegratorConfig,
    x0: &[f64],
    v0: &[f64],
    exec: &Exec,
) -> Result<PathBatch<TangentState>, SdeError> {
    if v0.len() != x0.len() {
        return Err(SdeError::Dimension { expected: x0.len(), found: v0.len() });
    }
    let start: Vec<Dual<f64>> = x0.iter().zip(v0).map(|(&x, &v)| Dual::new(x, v)).collect();
    let last = cfg.steps();
    run_paths(sys, cfg, &[start], &[last], exec, |_, snaps| {
        let s = &snaps[0][0];
        (s.iter().map(|d| d.re).collect(), s.iter().map(|d| d.eps).collect())
    })
}

/// RK4 solution of `ẏ = V(y)` at time `h` (four substeps), `|h| ≤ 0.1`.
pub fn flow_exp(v: &NumField, x: &[f64], h: f64) -> Result<Vec<f64>, SdeError> {
    if !(h.abs() <= MAX_FLOW_STEP) {
        return Err(SdeError::FlowStep(h));
    }
    if x.len() != v.dim() {
        return Err(SdeError::Dimension { expected: v.dim(), found: x.len() });
    }
    let n = 4;
    let dt = h / n as f64;
    let mut y = x.to_vec();
    let axpy = |y: &[f64], k: &[f64], s: f64| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    for _ in 0..n {
        let k1 = v.eval(&y);
        let k2 = v.eval(&axpy(&y, &k1, dt / 2.0));
        let k3 = v.eval(&axpy(&y, &k2, dt / 2.0));
        let k4 = v.eval(&axpy(&y, &k3, dt));
        for a in 0..y.len() {
            y[a] += dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
        }
    }
    Ok(y)
}
