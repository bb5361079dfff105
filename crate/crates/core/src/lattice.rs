//! Coupled site copies of a geometry on a finite box of `ℤ^d`.
//!
//! Every site of the box evolves with the single-site generator
//! `ΣX_i² − βD + ΣG_ijX_iX_j`; sites in `Λ` additionally carry the drift
//! `Σ_i α_k(ω)X_{k,i}` with `α_k = a·Σ_v J_v g(ω_{k+v})`. Sites outside the box
//! are frozen at their boundary values. Sup norms over configurations are
//! replaced by maxima over explicit probe configurations.

use std::collections::HashMap;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{kappa_terms, ConstantsError, DriftSpec, ModelSpec};
use crate::exec::Exec;
use crate::geometry::GeometryError;
use crate::observable::Expr;
use crate::polyfield::{rat_to_f64, VectorField};
use crate::scalar::Dual;
use crate::sde::{assemble_sde, run_paths, NumField, SdeError, SdeSystem};
use crate::semigroup::{BoundCheck, EstimatorResult, McConfig, SemigroupError, VIOLATION_SIGMAS};
use crate::stats::{mean_se, ols, spearman, LineFit};

/// A lattice point.
pub type Site = Vec<i64>;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("invalid lattice: {0}")]
    Invalid(String),
    #[error("site {0:?} of Λ lies outside the box")]
    LambdaOutsideBox(Site),
    #[error("stencil offset {offset:?} exceeds the interaction range {range}")]
    StencilRange { offset: Site, range: i64 },
    #[error("no certified sup bound for {0}")]
    Unbounded(String),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Semigroup(#[from] SemigroupError),
    #[error(transparent)]
    Constants(#[from] ConstantsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// `|a − b|` in the ℓ¹ lattice metric.
pub fn lattice_distance(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `dist(k, set)`; `i64::MAX` for an empty set.
pub fn set_distance(k: &[i64], set: &[Site]) -> i64 {
    set.iter().map(|s| lattice_distance(k, s)).min().unwrap_or(i64::MAX)
}

/// Rectangular box `Π[lo_i, hi_i]`, sites ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeBox {
    pub lo: Site,
    pub hi: Site,
}

impl LatticeBox {
    pub fn new(lo: Site, hi: Site) -> Result<Self, LatticeError> {
        if lo.is_empty() || lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return Err(LatticeError::Invalid(format!("box bounds {lo:?}..{hi:?}")));
        }
        Ok(LatticeBox { lo, hi })
    }

    /// `[−r, r]^d`
    pub fn cube(d: usize, radius: i64) -> Result<Self, LatticeError> {
        LatticeBox::new(vec![-radius; d], vec![radius; d])
    }

    pub fn d(&self) -> usize {
        self.lo.len()
    }

    fn extent(&self, axis: usize) -> usize {
        (self.hi[axis] - self.lo[axis] + 1) as usize
    }

    pub fn len(&self) -> usize {
        (0..self.d()).map(|a| self.extent(a)).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, s: &[i64]) -> bool {
        s.len() == self.d() && s.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| l <= v && v <= h)
    }

    pub fn index_of(&self, s: &[i64]) -> Option<usize> {
        if !self.contains(s) {
            return None;
        }
        let mut idx = 0;
        for a in 0..self.d() {
            idx = idx * self.extent(a) + (s[a] - self.lo[a]) as usize;
        }
        Some(idx)
    }

    pub fn site(&self, mut idx: usize) -> Site {
        let mut s = vec![0; self.d()];
        for a in (0..self.d()).rev() {
            let e = self.extent(a);
            s[a] = self.lo[a] + (idx % e) as i64;
            idx /= e;
        }
        s
    }

    pub fn sites(&self) -> Vec<Site> {
        (0..self.len()).map(|i| self.site(i)).collect()
    }

    /// Distance from `s` to the nearest site outside the box.
    pub fn distance_to_exterior(&self, s: &[i64]) -> i64 {
        (0..self.d()).map(|a| (s[a] - self.lo[a] + 1).min(self.hi[a] - s[a] + 1)).min().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StencilEntry {
    pub offset: Site,
    pub weight: f64,
}

/// `α_k(ω) = a·Σ_v J_v g(ω_{k+v})`, the same for every generator `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSpec {
    pub stencil: Vec<StencilEntry>,
    /// Bounded function of one site's coordinates.
    pub site_function: Expr,
    pub amplitude: f64,
}

impl CouplingSpec {
    /// `J_v = 1` for `0 < |v| ≤ range`, `g = tanh(x_1)`.
    pub fn uniform(d: usize, range: i64, amplitude: f64) -> Self {
        let mut stencil = Vec::new();
        let span = LatticeBox::cube(d.max(1), range.max(0)).expect("valid cube");
        for v in span.sites() {
            let n = v.iter().map(|c| c.abs()).sum::<i64>();
            if n > 0 && n <= range {
                stencil.push(StencilEntry { offset: v, weight: 1.0 });
            }
        }
        CouplingSpec { stencil, site_function: Expr::var(0).tanh(), amplitude }
    }

    /// Largest `|v|` with a non-zero weight.
    pub fn range(&self) -> i64 {
        self.stencil.iter().filter(|e| e.weight != 0.0).map(|e| e.offset.iter().map(|c| c.abs()).sum()).max().unwrap_or(0)
    }

    /// `J_v`, summing repeated offsets.
    pub fn weight(&self, v: &[i64]) -> f64 {
        self.stencil.iter().filter(|e| e.offset == v).map(|e| e.weight).sum()
    }

    pub fn weight_abs_sum(&self) -> f64 {
        self.stencil.iter().map(|e| e.weight.abs()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct LatticeParams {
    /// Single-site geometry, `β` and `G`; its own drift must be zero.
    pub site: ModelSpec,
    pub domain: LatticeBox,
    /// `Λ`, the sites carrying the interaction drift.
    pub lambda: Vec<Site>,
    pub range: i64,
    pub coupling: CouplingSpec,
    /// Frozen value of every exterior site without an override.
    pub exterior: Vec<f64>,
    pub exterior_overrides: Vec<(Site, Vec<f64>)>,
}

impl LatticeParams {
    /// Box `[−r, r]^d`, `Λ = [−r_Λ, r_Λ]^d`, uniform stencil, exterior frozen at 0.
    pub fn cube(site: ModelSpec, d: usize, box_radius: i64, lambda_radius: i64, range: i64, amplitude: f64) -> Result<Self, LatticeError> {
        let domain = LatticeBox::cube(d, box_radius)?;
        let lambda = LatticeBox::cube(d, lambda_radius)?.sites();
        let exterior = vec![0.0; site.geometry.ambient_dim()];
        Ok(LatticeParams {
            site,
            domain,
            lambda,
            range,
            coupling: CouplingSpec::uniform(d, range, amplitude),
            exterior,
            exterior_overrides: Vec::new(),
        })
    }

    pub fn with_lambda_radius(&self, r: i64) -> Result<Self, LatticeError> {
        Ok(LatticeParams { lambda: LatticeBox::cube(self.domain.d(), r)?.sites(), ..self.clone() })
    }
}

/// Certified bounds of the coupling ingredients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingBounds {
    /// `‖g‖∞`
    pub g_sup: f64,
    /// `‖Z_r g‖∞`
    pub zg_sup: Vec<f64>,
    /// `‖α_{k,i}‖∞ ≤ |a|·Σ|J_v|·‖g‖∞`
    pub alpha_sup: f64,
}

#[derive(Debug, Clone)]
pub struct LatticeModel {
    params: LatticeParams,
    n: usize,
    in_lambda: Vec<bool>,
    sys: SdeSystem,
    bounds: CouplingBounds,
    warnings: Vec<String>,
}

fn validate(params: &LatticeParams) -> Result<(), LatticeError> {
    let d = params.domain.d();
    let n = params.site.geometry.ambient_dim();
    if !params.site.drift.is_zero() {
        return Err(LatticeError::Invalid("the site model must have zero drift; the coupling supplies it".into()));
    }
    if params.range < 0 {
        return Err(LatticeError::Invalid(format!("negative interaction range {}", params.range)));
    }
    if !params.coupling.amplitude.is_finite() || params.coupling.stencil.iter().any(|e| !e.weight.is_finite()) {
        return Err(LatticeError::Invalid("non-finite coupling amplitude or weight".into()));
    }
    for e in &params.coupling.stencil {
        if e.offset.len() != d {
            return Err(LatticeError::Invalid(format!("stencil offset {:?} is not {d}-dimensional", e.offset)));
        }
        if e.weight != 0.0 && lattice_distance(&e.offset, &vec![0; d]) > params.range {
            return Err(LatticeError::StencilRange { offset: e.offset.clone(), range: params.range });
        }
    }
    if let Some(s) = params.lambda.iter().find(|s| !params.domain.contains(s)) {
        return Err(LatticeError::LambdaOutsideBox(s.clone()));
    }
    if params.site_function_vars() > n {
        return Err(LatticeError::Invalid(format!("site function uses more than {n} coordinates")));
    }
    let bad_ext = std::iter::once(&params.exterior).chain(params.exterior_overrides.iter().map(|(_, v)| v));
    for v in bad_ext {
        if v.len() != n || v.iter().any(|x| !x.is_finite()) {
            return Err(LatticeError::Invalid(format!("boundary values need {n} finite coordinates")));
        }
    }
    Ok(())
}

impl LatticeParams {
    fn site_function_vars(&self) -> usize {
        self.coupling.site_function.min_vars()
    }

    fn exterior_value(&self, s: &[i64]) -> &[f64] {
        self.exterior_overrides.iter().find(|(t, _)| t.as_slice() == s).map_or(&self.exterior, |(_, v)| v)
    }
}

/// Assembles the product SDE with the interaction drift.
pub fn build_lattice(params: LatticeParams) -> Result<LatticeModel, LatticeError> {
    validate(&params)?;
    let geo = &params.site.geometry;
    let n = geo.ambient_dim();
    let m = geo.generators();
    let nsites = params.domain.len();
    let total = n * nsites;
    let g = &params.coupling.site_function;
    let a = params.coupling.amplitude;

    let g_sup = g.sup_bound().ok_or_else(|| LatticeError::Unbounded(g.to_string()))?;
    let zg_sup = geo
        .fields()
        .iter()
        .map(|z| {
            let e = g.apply_field(z);
            e.sup_bound().ok_or_else(|| LatticeError::Unbounded(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let bounds = CouplingBounds { g_sup, zg_sup, alpha_sup: a.abs() * params.coupling.weight_abs_sum() * g_sup };

    let mut in_lambda = vec![false; nsites];
    for s in &params.lambda {
        in_lambda[params.domain.index_of(s).expect("validated")] = true;
    }

    let site_sys = assemble_sde(&params.site)?;
    let blocks = vec![site_sys; nsites];
    let gens = geo.generator_fields();
    let mut extra = Vec::new();
    for (k, &active) in in_lambda.iter().enumerate() {
        if !active || a == 0.0 {
            continue;
        }
        let site = params.domain.site(k);
        let mut terms = Vec::new();
        for e in &params.coupling.stencil {
            if e.weight == 0.0 {
                continue;
            }
            let s: Site = site.iter().zip(&e.offset).map(|(x, v)| x + v).collect();
            let w = a * e.weight;
            match params.domain.index_of(&s) {
                Some(j) => terms.push(g.shift_vars(j * n).scale(w)),
                None => terms.push(Expr::Const(w * g.eval(params.exterior_value(&s)))),
            }
        }
        let alpha = Expr::sum(terms);
        let parts: Vec<(f64, &VectorField)> = gens.iter().take(m).map(|x| (1.0, x)).collect();
        extra.push((alpha, NumField::combination(n, &parts, k * n, total)));
    }
    let sys = SdeSystem::product(&blocks, extra);

    let mut warnings = Vec::new();
    let near_edge = params.lambda.iter().filter(|s| params.domain.distance_to_exterior(s) <= params.range).count();
    if near_edge > 0 && a != 0.0 {
        warnings.push(format!("{near_edge} site(s) of Λ couple to frozen exterior values"));
    }
    Ok(LatticeModel { params, n, in_lambda, sys, bounds, warnings })
}

impl LatticeModel {
    pub fn params(&self) -> &LatticeParams {
        &self.params
    }

    pub fn sys(&self) -> &SdeSystem {
        &self.sys
    }

    pub fn bounds(&self) -> &CouplingBounds {
        &self.bounds
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Coordinates per site.
    pub fn site_dim(&self) -> usize {
        self.n
    }

    pub fn sites(&self) -> usize {
        self.params.domain.len()
    }

    pub fn dim(&self) -> usize {
        self.n * self.sites()
    }

    pub fn index_of(&self, s: &[i64]) -> Option<usize> {
        self.params.domain.index_of(s)
    }

    pub fn site(&self, idx: usize) -> Site {
        self.params.domain.site(idx)
    }

    pub fn in_lambda(&self, idx: usize) -> bool {
        self.in_lambda[idx]
    }

    fn site_fields(&self) -> &[VectorField] {
        self.params.site.geometry.fields()
    }

    /// `Z_{k,r}` on the full state space.
    pub fn site_field(&self, k: usize, r: usize) -> NumField {
        NumField::combination(self.n, &[(1.0, &self.site_fields()[r])], k * self.n, self.dim())
    }

    /// A single-site expression placed at site `k`.
    pub fn site_observable(&self, k: usize, f: &Expr) -> Expr {
        f.shift_vars(k * self.n)
    }

    /// `Λ(f)`: indices of sites whose coordinates `f` reads.
    pub fn localization(&self, f: &Expr) -> Vec<usize> {
        let mut vars = Vec::new();
        collect_vars(f, &mut vars);
        let mut sites: Vec<usize> = vars.into_iter().map(|v| v / self.n).collect();
        sites.sort_unstable();
        sites.dedup();
        sites
    }

    /// `Z_{k,r} f` as an expression.
    pub fn apply_site_field(&self, f: &Expr, k: usize, r: usize) -> Expr {
        let z = &self.site_fields()[r];
        let off = k * self.n;
        Expr::sum(
            (0..self.n)
                .filter(|&a| !z.component(a).is_zero())
                .map(|a| Expr::from_poly(z.component(a)).shift_vars(off) * f.derivative(off + a))
                .collect(),
        )
    }

    /// `Γ_k f = Σ_r |Z_{k,r}f|²`.
    pub fn site_gamma(&self, f: &Expr, k: usize) -> Expr {
        Expr::sum((0..self.site_fields().len()).map(|r| self.apply_site_field(f, k, r).pow(2)).collect())
    }

    /// State vector with `value(site)` at every site.
    pub fn state(&self, value: impl Fn(&Site) -> Vec<f64>) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        for k in 0..self.sites() {
            let v = value(&self.site(k));
            assert_eq!(v.len(), self.n, "site value dimension");
            x.extend(v);
        }
        x
    }

    /// Bound on `‖Z_{k,r}α_{j,i}‖∞` (independent of `i`).
    pub fn z_alpha_bound(&self, k: usize, j: usize, r: usize) -> f64 {
        if !self.in_lambda[j] {
            return 0.0;
        }
        let v: Site = self.site(k).iter().zip(self.site(j)).map(|(a, b)| a - b).collect();
        self.params.coupling.amplitude.abs() * self.params.coupling.weight(&v).abs() * self.bounds.zg_sup[r]
    }

    fn check_state(&self, x: &[f64]) -> Result<(), LatticeError> {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return Err(LatticeError::Invalid(format!("configuration must have {} finite coordinates", self.dim())));
        }
        Ok(())
    }

    fn check_observable(&self, f: &Expr) -> Result<(), LatticeError> {
        if f.min_vars() > self.dim() {
            return Err(LatticeError::Invalid(format!("observable reads beyond the {} lattice coordinates", self.dim())));
        }
        Ok(())
    }
}

fn collect_vars(f: &Expr, out: &mut Vec<usize>) {
    match f {
        Expr::Const(_) => {}
        Expr::Var(i) => out.push(*i),
        Expr::Add(v) | Expr::Mul(v) => v.iter().for_each(|e| collect_vars(e, out)),
        Expr::Pow(e, _) | Expr::Tanh(e) | Expr::Sin(e) | Expr::Cos(e) | Expr::ExpNeg(e) => collect_vars(e, out),
    }
}

/// Deterministic probe configurations: the zero state, then states with
/// coordinates uniform in `[−scale, scale]`.
pub fn probe_configurations(model: &LatticeModel, count: usize, scale: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|p| {
            if p == 0 {
                vec![0.0; model.dim()]
            } else {
                (0..model.dim()).map(|_| scale * (2.0 * (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 1.0)).collect()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MEntry {
    pub k: usize,
    pub j: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticeConstants {
    pub beta: f64,
    pub lambda_star: f64,
    /// Site part `(C1 + C2 + C3/δ)/2` with `‖α‖∞` in `C2`.
    pub c_tilde: f64,
    /// `A_k` in box order.
    pub a_k: Vec<f64>,
    pub a_sup: f64,
    /// `C = C̃ + sup_k A_k`
    pub c: f64,
    /// `κ̄ = 2(βλ_* − C)`
    pub kappa_bar: f64,
    /// Non-zero `M_{k,j}` (box indices).
    pub m: Vec<MEntry>,
    pub m_max: f64,
    /// `ς = κ̄ − max M_{k,j}`
    pub varsigma: f64,
    /// `κ̄ > 0` iff `β` exceeds this.
    pub beta_threshold: f64,
    pub alpha_sup: f64,
}

impl LatticeConstants {
    pub fn m_at(&self, k: usize, j: usize) -> f64 {
        self.m.iter().find(|e| e.k == k && e.j == j).map_or(0.0, |e| e.value)
    }
}

/// `A_k`, `M_{k,j}`, `C`, `κ̄` and `ς` from the certified coupling bounds.
pub fn lattice_constants(model: &LatticeModel) -> Result<LatticeConstants, LatticeError> {
    let site = &model.params.site;
    let geo = &site.geometry;
    let m_gen = geo.generators();
    let n_fields = geo.family_size();
    let drift = DriftSpec {
        label: "lattice".into(),
        exprs: vec![Expr::Const(0.0); m_gen],
        sup: vec![model.bounds.alpha_sup; m_gen],
        z_sup: vec![vec![0.0; m_gen]; n_fields],
    };
    let spec = ModelSpec::new(geo.clone(), site.beta, site.g.clone(), drift)?;
    let terms = kappa_terms(&spec)?;
    let c_tilde = terms.offset_f64() / 2.0;
    let lambda_star = rat_to_f64(&terms.lambda_star);

    let sites = model.sites();
    let range = model.params.range;
    let mut a_k = vec![0.0; sites];
    let mut m = Vec::new();
    for (k, a) in a_k.iter_mut().enumerate() {
        let sk = model.site(k);
        for j in 0..sites {
            if !model.in_lambda[j] || lattice_distance(&sk, &model.site(j)) > range {
                continue;
            }
            let z: Vec<f64> = (0..n_fields).map(|r| model.z_alpha_bound(k, j, r)).collect();
            let zmax = z.iter().cloned().fold(0.0, f64::max);
            let zsum: f64 = z.iter().sum();
            if j == k {
                *a += m_gen as f64 * zmax + zsum;
            } else {
                *a += m_gen as f64 * zmax;
                if zsum > 0.0 {
                    m.push(MEntry { k, j, value: zsum });
                }
            }
        }
    }
    let a_sup = a_k.iter().cloned().fold(0.0, f64::max);
    let c = c_tilde + a_sup;
    let kappa_bar = 2.0 * (site.beta * lambda_star - c);
    let m_max = m.iter().map(|e| e.value).fold(0.0, f64::max);
    Ok(LatticeConstants {
        beta: site.beta,
        lambda_star,
        c_tilde,
        a_k,
        a_sup,
        c,
        kappa_bar,
        m,
        m_max,
        varsigma: kappa_bar - m_max,
        beta_threshold: c / lambda_star,
        alpha_sup: model.bounds.alpha_sup,
    })
}

/// `Γ_k(P_tf)(x)` for each requested site, from the first-variation process
/// along `Z_{k,r}(x)`; all directions share the noise of each path.
pub fn site_gradients(
    model: &LatticeModel,
    f: &Expr,
    x: &[f64],
    sites: &[usize],
    t: f64,
    cfg: &McConfig,
    exec: &Exec,
) -> Result<Vec<EstimatorResult>, LatticeError> {
    model.check_state(x)?;
    model.check_observable(f)?;
    let nf = model.site_fields().len();
    let mut starts = Vec::with_capacity(sites.len() * nf);
    for &k in sites {
        if k >= model.sites() {
            return Err(LatticeError::Invalid(format!("site index {k} outside the box")));
        }
        for r in 0..nf {
            let dir = model.site_field(k, r).eval(x);
            starts.push(x.iter().zip(&dir).map(|(&a, &v)| Dual::new(a, v)).collect::<Vec<_>>());
        }
    }
    let ic = cfg.integrator(t);
    let steps = ic.step_of(t)?;
    let batch = run_paths(&model.sys, &ic, &starts, &[steps], exec, |_, s| s[0].iter().map(|st| f.eval(st).eps).collect::<Vec<f64>>())?;
    let rows = &batch.values;
    let out = (0..sites.len())
        .map(|si| {
            let means: Vec<f64> = (0..nf).map(|r| mean_se(&rows.iter().map(|p| p[si * nf + r]).collect::<Vec<_>>()).0).collect();
            let value: f64 = means.iter().map(|v| v * v).sum();
            let lin: Vec<f64> = rows.iter().map(|p| (0..nf).map(|r| 2.0 * means[r] * p[si * nf + r]).sum()).collect();
            let (_, se) = mean_se(&lin);
            EstimatorResult { value, std_err: se, n_paths: rows.len(), seed: cfg.seed, dt: cfg.dt }
        })
        .collect();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedRow {
    pub site: Site,
    pub distance: i64,
    pub n_k: i64,
    /// Largest estimate over probes.
    pub gamma: f64,
    pub std_err: f64,
    pub probe: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedProfile {
    pub t: f64,
    pub rows: Vec<SpeedRow>,
    /// `(N_k, max Γ_k, its error)` per shell.
    pub shells: Vec<(i64, f64, f64)>,
    pub spearman: f64,
    /// OLS of `ln Γ` against `N_k`.
    pub fit: Option<LineFit>,
    /// `σ = −slope` and its one-sided 95% lower bound.
    pub sigma: f64,
    pub sigma_lower: f64,
    /// Smallest `c` with `ln Γ ≤ c − σN_k` on every shell.
    pub envelope_intercept: f64,
    /// Smallest `C` for which `Γ ≤ e^{N(ln C − ln N + 2 + ln t) + Ct} Σ_j‖Γ_jf‖∞`
    /// holds on every shell, when `Σ_j‖Γ_jf‖∞` is certified.
    pub propagation_c: Option<f64>,
}

/// Profile of `max_probes Γ_k(P_tf)` over sites `k ∉ Λ(f)` with `N_k ≤ max_n`.
#[allow(clippy::too_many_arguments)]
pub fn finite_speed_profile(
    model: &LatticeModel,
    f: &Expr,
    t: f64,
    probes: &[Vec<f64>],
    max_n: i64,
    cfg: &McConfig,
    exec: &Exec,
) -> Result<SpeedProfile, LatticeError> {
    if probes.is_empty() {
        return Err(LatticeError::Invalid("probe set is empty".into()));
    }
    let range = model.params.range;
    if range < 1 {
        return Err(LatticeError::Invalid("finite speed needs an interaction range of at least 1".into()));
    }
    let support = model.localization(f);
    if support.is_empty() {
        return Err(LatticeError::Invalid("observable is constant".into()));
    }
    let support_sites: Vec<Site> = support.iter().map(|&k| model.site(k)).collect();
    let targets: Vec<(usize, i64, i64)> = (0..model.sites())
        .filter(|k| !support.contains(k))
        .map(|k| {
            let d = set_distance(&model.site(k), &support_sites);
            (k, d, d / range)
        })
        .filter(|&(_, _, n)| n <= max_n)
        .collect();
    let idx: Vec<usize> = targets.iter().map(|t| t.0).collect();
    let mut best: Vec<Option<(EstimatorResult, usize)>> = vec![None; targets.len()];
    for (p, x) in probes.iter().enumerate() {
        let est = site_gradients(model, f, x, &idx, t, cfg, exec)?;
        for (b, e) in best.iter_mut().zip(est) {
            if b.as_ref().is_none_or(|(cur, _)| e.value > cur.value) {
                *b = Some((e, p));
            }
        }
    }
    let rows: Vec<SpeedRow> = targets
        .iter()
        .zip(best)
        .map(|(&(k, d, n), b)| {
            let (e, p) = b.expect("at least one probe");
            SpeedRow { site: model.site(k), distance: d, n_k: n, gamma: e.value, std_err: e.std_err, probe: p }
        })
        .collect();

    let mut shells: Vec<(i64, f64, f64)> = Vec::new();
    for r in &rows {
        match shells.iter_mut().find(|s| s.0 == r.n_k) {
            Some(s) if r.gamma > s.1 => *s = (r.n_k, r.gamma, r.std_err),
            Some(_) => {}
            None => shells.push((r.n_k, r.gamma, r.std_err)),
        }
    }
    shells.sort_by_key(|s| s.0);
    let ns: Vec<f64> = shells.iter().map(|s| s.0 as f64).collect();
    let gs: Vec<f64> = shells.iter().map(|s| s.1).collect();
    let rho = if shells.len() >= 2 { spearman(&ns, &gs) } else { f64::NAN };
    let pos: Vec<&(i64, f64, f64)> = shells.iter().filter(|s| s.1 > 0.0).collect();
    let fit = (pos.len() >= 3).then(|| {
        let x: Vec<f64> = pos.iter().map(|s| s.0 as f64).collect();
        let y: Vec<f64> = pos.iter().map(|s| s.1.ln()).collect();
        ols(&x, &y)
    });
    let (sigma, sigma_lower) = fit.map_or((f64::NAN, f64::NAN), |l| (-l.slope, -l.slope_upper(0.95)));
    let envelope_intercept = pos.iter().map(|s| s.1.ln() + sigma * s.0 as f64).fold(f64::NEG_INFINITY, f64::max);

    let total_gamma = support.iter().map(|&k| model.site_gamma(f, k).sup_bound()).try_fold(0.0, |acc, v| v.map(|v| acc + v));
    let propagation_c = total_gamma.filter(|s| *s > 0.0).and_then(|s| {
        let shells_pos: Vec<(f64, f64)> = pos.iter().filter(|p| p.0 > 0).map(|p| (p.0 as f64, p.1.ln())).collect();
        minimal_propagation_constant(&shells_pos, t, s.ln())
    });
    Ok(SpeedProfile { t, rows, shells, spearman: rho, fit, sigma, sigma_lower, envelope_intercept, propagation_c })
}

/// Bisection in `ln C` for the smallest `C` satisfying every shell bound.
fn minimal_propagation_constant(points: &[(f64, f64)], t: f64, log_total: f64) -> Option<f64> {
    if points.is_empty() || t <= 0.0 {
        return None;
    }
    let ok = |lc: f64| {
        let c = lc.exp();
        points.iter().all(|&(n, lg)| lg <= n * (lc - n.ln() + 2.0 + t.ln()) + c * t + log_total)
    };
    let (mut lo, mut hi) = (-60.0, 10.0);
    if !ok(hi) {
        return None;
    }
    if ok(lo) {
        return Some(lo.exp());
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi.exp())
}

fn joined_values(
    model: &LatticeModel,
    f: &Expr,
    x: &[f64],
    t: f64,
    cfg: &McConfig,
    exec: &Exec,
) -> Result<HashMap<u64, f64>, LatticeError> {
    let ic = cfg.integrator(t);
    let step = ic.step_of(t)?;
    let b = run_paths(&model.sys, &ic, &[x.to_vec()], &[step], exec, |p, s| (p, f.eval(&s[0][0])))?;
    Ok(b.values.into_iter().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CauchyRow {
    /// `N̄ = ⌊dist(Λ(f), ℤ^d∖Λ₁)/R⌋`
    pub n_bar: i64,
    /// Largest `|P_t^{Λ₂}f − P_t^{Λ₁}f|` over probes.
    pub discrepancy: f64,
    pub std_err: f64,
    pub probe: usize,
}

/// CRN discrepancy between two volumes `Λ₁ ⊂ Λ₂` on the same box.
pub fn volume_cauchy(
    small: &LatticeModel,
    large: &LatticeModel,
    f: &Expr,
    t: f64,
    probes: &[Vec<f64>],
    cfg: &McConfig,
    exec: &Exec,
) -> Result<CauchyRow, LatticeError> {
    if probes.is_empty() {
        return Err(LatticeError::Invalid("probe set is empty".into()));
    }
    if small.params.domain != large.params.domain || small.n != large.n || small.params.range != large.params.range {
        return Err(LatticeError::Invalid("volumes must share box, site geometry and range".into()));
    }
    if (0..small.sites()).any(|k| small.in_lambda[k] && !large.in_lambda[k]) {
        return Err(LatticeError::Invalid("Λ₁ must be contained in Λ₂".into()));
    }
    let support = small.localization(f);
    if support.iter().any(|&k| !small.in_lambda[k]) {
        return Err(LatticeError::Invalid("Λ(f) must lie inside Λ₁".into()));
    }
    let n_bar = cauchy_distance(small, &support);
    let mut best: Option<CauchyRow> = None;
    for (p, x) in probes.iter().enumerate() {
        small.check_state(x)?;
        let a = joined_values(small, f, x, t, cfg, exec)?;
        let b = joined_values(large, f, x, t, cfg, exec)?;
        let mut keys: Vec<u64> = a.keys().filter(|k| b.contains_key(k)).copied().collect();
        keys.sort_unstable();
        let d: Vec<f64> = keys.iter().map(|k| b[k] - a[k]).collect();
        let (m, se) = mean_se(&d);
        let row = CauchyRow { n_bar, discrepancy: m.abs(), std_err: se, probe: p };
        if best.as_ref().is_none_or(|r| row.discrepancy > r.discrepancy) {
            best = Some(row);
        }
    }
    Ok(best.expect("non-empty probes"))
}

fn cauchy_distance(small: &LatticeModel, support: &[usize]) -> i64 {
    let dom = &small.params.domain;
    let grown = LatticeBox::new(dom.lo.iter().map(|v| v - 1).collect(), dom.hi.iter().map(|v| v + 1).collect()).expect("valid");
    let outside: Vec<Site> = grown.sites().into_iter().filter(|s| dom.index_of(s).is_none_or(|k| !small.in_lambda[k])).collect();
    let d = support.iter().map(|&k| set_distance(&small.site(k), &outside)).min().unwrap_or(0);
    d / small.params.range.max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CauchyReport {
    pub t: f64,
    pub rows: Vec<CauchyRow>,
    /// OLS of `ln discrepancy` against `N̄` over rows above 3σ.
    pub fit: Option<LineFit>,
    pub slope_upper: f64,
    pub decays: bool,
}

/// Discrepancies of a nested sequence `Λ₁ ⊂ … ⊂ reference` and the log-linear decay fit.
pub fn volume_cauchy_sequence(
    volumes: &[LatticeModel],
    reference: &LatticeModel,
    f: &Expr,
    t: f64,
    probes: &[Vec<f64>],
    cfg: &McConfig,
    exec: &Exec,
) -> Result<CauchyReport, LatticeError> {
    let rows = volumes.iter().map(|v| volume_cauchy(v, reference, f, t, probes, cfg, exec)).collect::<Result<Vec<_>, _>>()?;
    let sig: Vec<&CauchyRow> = rows.iter().filter(|r| r.discrepancy > VIOLATION_SIGMAS * r.std_err && r.discrepancy > 0.0).collect();
    let fit = (sig.len() >= 3).then(|| {
        let x: Vec<f64> = sig.iter().map(|r| r.n_bar as f64).collect();
        let y: Vec<f64> = sig.iter().map(|r| r.discrepancy.ln()).collect();
        ols(&x, &y)
    });
    let slope_upper = fit.map_or(f64::NAN, |l| l.slope_upper(0.95));
    Ok(CauchyReport { t, rows, fit, slope_upper, decays: slope_upper < 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErgodicityRow {
    pub t: f64,
    /// `P_tf(ω) − P_tf(ω̃)`
    pub difference: f64,
    pub std_err: f64,
    /// Step-halving estimate of the time-discretization error (0 when not requested).
    pub discretization_err: f64,
    pub combined_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicityReport {
    pub rows: Vec<ErgodicityRow>,
    pub fit: Option<LineFit>,
    /// Empirical rate `ϖ̂ = −slope` and its one-sided 95% lower bound.
    pub rate: f64,
    pub rate_lower: f64,
    pub positive: bool,
    /// Fewer than three grid points stay above 3σ.
    pub converged_before_end: bool,
    /// `ς/2` from the lattice constants, reported alongside.
    pub varsigma_half: f64,
}

fn difference_table(
    model: &LatticeModel,
    f: &Expr,
    omega: &[f64],
    omega_tilde: &[f64],
    times: &[f64],
    cfg: &McConfig,
    exec: &Exec,
) -> Result<Vec<(f64, f64)>, LatticeError> {
    let t_end = *times.last().expect("non-empty");
    let ic = cfg.integrator(t_end);
    let steps = times.iter().map(|&t| ic.step_of(t)).collect::<Result<Vec<_>, _>>()?;
    let batch = run_paths(&model.sys, &ic, &[omega.to_vec(), omega_tilde.to_vec()], &steps, exec, |_, snaps| {
        snaps.iter().map(|s| f.eval(&s[0]) - f.eval(&s[1])).collect::<Vec<f64>>()
    })?;
    Ok((0..times.len()).map(|ti| mean_se(&batch.values.iter().map(|r| r[ti]).collect::<Vec<_>>())).collect())
}

/// `P_tf(ω) − P_tf(ω̃)` on a time grid with common noise, and the decay-rate fit.
#[allow(clippy::too_many_arguments)]
pub fn ergodicity_decay(
    model: &LatticeModel,
    f: &Expr,
    omega: &[f64],
    omega_tilde: &[f64],
    times: &[f64],
    cfg: &McConfig,
    exec: &Exec,
    step_halving: bool,
) -> Result<ErgodicityReport, LatticeError> {
    model.check_state(omega)?;
    model.check_state(omega_tilde)?;
    model.check_observable(f)?;
    if times.is_empty() || times.windows(2).any(|w| w[0] >= w[1]) || times[0] < 0.0 {
        return Err(LatticeError::Invalid("time grid must be non-empty, non-negative and increasing".into()));
    }
    let coarse = difference_table(model, f, omega, omega_tilde, times, cfg, exec)?;
    let fine = if step_halving {
        let half = McConfig { dt: cfg.dt / 2.0, ..*cfg };
        Some(difference_table(model, f, omega, omega_tilde, times, &half, exec)?)
    } else {
        None
    };
    let rows: Vec<ErgodicityRow> = times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let (d, se) = coarse[i];
            // first-order scheme: bias(dt) ≈ 2·(D(dt) − D(dt/2))
            let disc = fine.as_ref().map_or(0.0, |fv| 2.0 * (d - fv[i].0).abs());
            ErgodicityRow { t, difference: d, std_err: se, discretization_err: disc, combined_err: se.hypot(disc) }
        })
        .collect();
    let sig: Vec<&ErgodicityRow> =
        rows.iter().filter(|r| r.difference.abs() > VIOLATION_SIGMAS * r.combined_err && r.difference != 0.0).collect();
    let fit = (sig.len() >= 3).then(|| {
        let x: Vec<f64> = sig.iter().map(|r| r.t).collect();
        let y: Vec<f64> = sig.iter().map(|r| r.difference.abs().ln()).collect();
        ols(&x, &y)
    });
    let (rate, rate_lower) = fit.map_or((f64::NAN, f64::NAN), |l| (-l.slope, -l.slope_upper(0.95)));
    let converged_before_end = sig.len() < 3;
    let varsigma_half = lattice_constants(model)?.varsigma / 2.0;
    Ok(ErgodicityReport { rows, fit, rate, rate_lower, positive: rate_lower > 0.0, converged_before_end, varsigma_half })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OmegaMembership {
    /// `Σ_{k∈B} (1+|k|)^{−ζ} d(ω_k)`
    pub sum: f64,
    pub bound: f64,
    pub zeta: f64,
    pub member: bool,
}

/// Weighted gauge sum of a configuration over the box against `𝒦`.
pub fn omega_membership(model: &LatticeModel, omega: &[f64], zeta: f64, bound: f64) -> Result<OmegaMembership, LatticeError> {
    model.check_state(omega)?;
    let d = model.params.domain.d() as f64;
    if !(zeta > d) {
        return Err(LatticeError::Invalid(format!("ζ must exceed the lattice dimension {d}, got {zeta}")));
    }
    let geo = &model.params.site.geometry;
    let mut sum = 0.0;
    for k in 0..model.sites() {
        let norm = model.site(k).iter().map(|c| c.abs()).sum::<i64>() as f64;
        let dist = geo.gauge_distance(&omega[k * model.n..(k + 1) * model.n])?;
        sum += (1.0 + norm).powf(-zeta) * dist;
    }
    Ok(OmegaMembership { sum, bound, zeta, member: sum < bound })
}

/// `Γ_k(P_t^Λf)(x) ≤ e^{−ςt} P_t^Λ(Γ_Λf)(x)` for each site of the box.
pub fn check_site_gradient_decay(
    model: &LatticeModel,
    f: &Expr,
    x: &[f64],
    t: f64,
    varsigma: f64,
    cfg: &McConfig,
    exec: &Exec,
) -> Result<Vec<BoundCheck>, LatticeError> {
    let all: Vec<usize> = (0..model.sites()).collect();
    let lhs = site_gradients(model, f, x, &all, t, cfg, exec)?;
    let gamma_lambda = Expr::sum((0..model.sites()).filter(|&k| model.in_lambda[k]).map(|k| model.site_gamma(f, k)).collect());
    let ic = cfg.integrator(t);
    let step = ic.step_of(t)?;
    let b = run_paths(&model.sys, &ic, &[x.to_vec()], &[step], exec, |_, s| gamma_lambda.eval(&s[0][0]))?;
    let (m, se) = mean_se(&b.values);
    let scale = (-varsigma * t).exp();
    let rhs = EstimatorResult { value: m * scale, std_err: se * scale, n_paths: b.values.len(), seed: cfg.seed, dt: cfg.dt };
    Ok(lhs.into_iter().map(|l| BoundCheck::new(t, l, rhs)).collect())
}
