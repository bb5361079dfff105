//! Explicit decay constants: δ, C1–C4, η, κ and its variants, κ' and β-thresholds.
//!
//! All sums are evaluated in exact rationals. Floating inputs (β, G, drift
//! bounds) are converted exactly, so κ is an exact affine function of β
//! whenever δ is rational (`G*` diagonal). Otherwise δ comes from a symmetric
//! eigensolver and the report carries only `f64` values plus the residual.

use nalgebra::{DMatrix, SymmetricEigen};
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, Geometry, GeometryError, GeometryRecord};
use crate::observable::{Expr, ExprError};
use crate::polyfield::{f64_to_rat, rat_int, rat_to_f64, Poly, PolyError, Rational, StructureTensor};

pub const EIGEN_RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ConstantsError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("G*+I is not positive definite (smallest eigenvalue {delta})")]
    NotPositiveDefinite { delta: f64 },
    #[error("{what} must have {expected} entries, found {found}")]
    Shape { what: &'static str, expected: usize, found: usize },
    #[error("{0} must be finite")]
    NonFinite(&'static str),
    #[error("beta must be non-negative, got {0}")]
    NegativeBeta(f64),
    #[error("drift {0} has no certified sup-norm bound; supply one explicitly")]
    MissingBound(String),
    #[error("unknown drift preset `{0}` (expected `zero` or `tanh:<amplitude>`)")]
    Preset(String),
    #[error("drift preset needs the first component of Z_{k} to be constant")]
    PresetField { k: usize },
    #[error("q must exceed 1, got {0}")]
    Q(f64),
    #[error("the l_q constant is only defined for G = 0 and zero drift")]
    LqCoupling,
    #[error("eigen-decomposition residual {0:e} exceeds tolerance")]
    EigenResidual(f64),
}

/// Drift `Σ α_i X_i` with user-certified sup norms.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftSpec {
    pub label: String,
    /// `α_i`, one per generator.
    pub exprs: Vec<Expr>,
    /// `‖α_i‖∞`
    pub sup: Vec<f64>,
    /// `‖Z_k α_i‖∞`, indexed `[k][i]`.
    pub z_sup: Vec<Vec<f64>>,
}

impl DriftSpec {
    pub fn zero(geo: &Geometry) -> Self {
        DriftSpec {
            label: "zero".into(),
            exprs: vec![Expr::Const(0.0); geo.generators()],
            sup: vec![0.0; geo.generators()],
            z_sup: vec![vec![0.0; geo.generators()]; geo.family_size()],
        }
    }

    /// `α_i = a·tanh(x_1)` for every `i`, with `‖α_i‖ = |a|` and
    /// `‖Z_kα_i‖ = |a|·|Z_k^1|`.
    pub fn tanh_first(geo: &Geometry, amplitude: f64) -> Result<Self, ConstantsError> {
        if !amplitude.is_finite() {
            return Err(ConstantsError::NonFinite("drift amplitude"));
        }
        let mut z_sup = Vec::with_capacity(geo.family_size());
        for (k, z) in geo.fields().iter().enumerate() {
            let c = z.component(0).as_constant().ok_or(ConstantsError::PresetField { k: k + 1 })?;
            z_sup.push(vec![amplitude.abs() * rat_to_f64(&c).abs(); geo.generators()]);
        }
        Ok(DriftSpec {
            label: format!("tanh:{amplitude}"),
            exprs: vec![Expr::var(0).tanh().scale(amplitude); geo.generators()],
            sup: vec![amplitude.abs(); geo.generators()],
            z_sup,
        })
    }

    /// `zero` or `tanh:<a>`.
    pub fn preset(geo: &Geometry, name: &str) -> Result<Self, ConstantsError> {
        if name == "zero" || name == "0" {
            return Ok(DriftSpec::zero(geo));
        }
        match name.strip_prefix("tanh:").and_then(|a| a.parse::<f64>().ok()) {
            Some(a) => DriftSpec::tanh_first(geo, a),
            None => Err(ConstantsError::Preset(name.to_string())),
        }
    }

    /// Bounds derived by interval enclosure of `α_i` and `Z_kα_i`.
    pub fn certified(geo: &Geometry, exprs: Vec<Expr>) -> Result<Self, ConstantsError> {
        if exprs.len() != geo.generators() {
            return Err(ConstantsError::Shape { what: "drift", expected: geo.generators(), found: exprs.len() });
        }
        let sup = exprs
            .iter()
            .map(|e| e.sup_bound().ok_or_else(|| ConstantsError::MissingBound(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let z_sup = geo
            .fields()
            .iter()
            .map(|z| {
                exprs
                    .iter()
                    .map(|e| {
                        let ze = e.apply_field(z);
                        ze.sup_bound().ok_or_else(|| ConstantsError::MissingBound(ze.to_string()))
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DriftSpec { label: "custom".into(), exprs, sup, z_sup })
    }

    pub fn is_zero(&self) -> bool {
        self.exprs.iter().all(Expr::is_zero)
    }

    fn validate(&self, geo: &Geometry) -> Result<(), ConstantsError> {
        let m = geo.generators();
        let n = geo.family_size();
        if self.exprs.len() != m || self.sup.len() != m {
            return Err(ConstantsError::Shape { what: "drift", expected: m, found: self.exprs.len().min(self.sup.len()) });
        }
        if self.z_sup.len() != n || self.z_sup.iter().any(|r| r.len() != m) {
            return Err(ConstantsError::Shape {
                what: "drift derivative bounds",
                expected: n * m,
                found: self.z_sup.iter().map(Vec::len).sum(),
            });
        }
        if self.sup.iter().chain(self.z_sup.iter().flatten()).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ConstantsError::NonFinite("drift bounds"));
        }
        if let Some(e) = self.exprs.iter().find(|e| e.min_vars() > geo.ambient_dim()) {
            return Err(ConstantsError::MissingBound(format!("{e} uses coordinates beyond the ambient dimension")));
        }
        Ok(())
    }
}

/// Operator `𝓛 = ΣX_i² − βD + ΣG_ij X_iX_j + Σα_iX_i` on a geometry.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub geometry: Geometry,
    pub beta: f64,
    /// `m×m`, row-major.
    pub g: Vec<f64>,
    pub drift: DriftSpec,
}

impl ModelSpec {
    pub fn new(geometry: Geometry, beta: f64, g: Vec<f64>, drift: DriftSpec) -> Result<Self, ConstantsError> {
        let m = geometry.generators();
        if g.len() != m * m {
            return Err(ConstantsError::Shape { what: "G", expected: m * m, found: g.len() });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(ConstantsError::NonFinite("G"));
        }
        if !beta.is_finite() {
            return Err(ConstantsError::NonFinite("beta"));
        }
        if beta < 0.0 {
            return Err(ConstantsError::NegativeBeta(beta));
        }
        drift.validate(&geometry)?;
        let spec = ModelSpec { geometry, beta, g, drift };
        delta_of_g(&spec.g, m)?;
        Ok(spec)
    }

    /// Zero drift, `G = 0`.
    pub fn plain(geometry: Geometry, beta: f64) -> Result<Self, ConstantsError> {
        let m = geometry.generators();
        let drift = DriftSpec::zero(&geometry);
        ModelSpec::new(geometry, beta, vec![0.0; m * m], drift)
    }

    pub fn m(&self) -> usize {
        self.geometry.generators()
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self, ConstantsError> {
        ModelSpec::new(self.geometry.clone(), beta, self.g.clone(), self.drift.clone())
    }

    pub fn g_is_zero(&self) -> bool {
        self.g.iter().all(|v| *v == 0.0)
    }

    /// `G* = (G + Gᵀ)/2`, row-major.
    pub fn g_sym(&self) -> Vec<f64> {
        let m = self.m();
        let mut s = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                s[i * m + j] = 0.5 * (self.g[i * m + j] + self.g[j * m + i]);
            }
        }
        s
    }

    /// `G^aSym = (G − Gᵀ)/2`, row-major.
    pub fn g_antisym(&self) -> Vec<f64> {
        let m = self.m();
        let mut s = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                s[i * m + j] = 0.5 * (self.g[i * m + j] - self.g[j * m + i]);
            }
        }
        s
    }

    pub fn to_record(&self) -> Result<ModelRecord, ConstantsError> {
        let geometry = match geometry::by_name(self.geometry.name()) {
            Ok(g) if g.fields() == self.geometry.fields() => GeometrySource::Name(self.geometry.name().to_string()),
            _ => GeometrySource::Record(Box::new(self.geometry.to_record()?)),
        };
        let drift = if self.drift.label == "custom" {
            DriftRecord::Custom {
                exprs: self.drift.exprs.iter().map(|e| e.to_string()).collect(),
                sup: Some(self.drift.sup.clone()),
                z_sup: Some(self.drift.z_sup.clone()),
            }
        } else {
            DriftRecord::Preset(self.drift.label.clone())
        };
        let m = self.m();
        Ok(ModelRecord { geometry, beta: self.beta, g: Some(self.g.chunks(m).map(<[f64]>::to_vec).collect()), alpha: Some(drift) })
    }

    pub fn from_record(rec: &ModelRecord) -> Result<Self, ConstantsError> {
        let geo = match &rec.geometry {
            GeometrySource::Name(n) => geometry::by_name(n)?,
            GeometrySource::Record(r) => Geometry::from_record(r)?,
        };
        let m = geo.generators();
        let g = match &rec.g {
            None => vec![0.0; m * m],
            Some(rows) => {
                if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                    return Err(ConstantsError::Shape { what: "G", expected: m * m, found: rows.iter().map(Vec::len).sum() });
                }
                rows.concat()
            }
        };
        let drift = match &rec.alpha {
            None => DriftSpec::zero(&geo),
            Some(DriftRecord::Preset(p)) => DriftSpec::preset(&geo, p)?,
            Some(DriftRecord::Custom { exprs, sup, z_sup }) => {
                let parsed = exprs.iter().map(|s| Expr::parse(s, geo.ambient_dim())).collect::<Result<Vec<_>, _>>()?;
                match (sup, z_sup) {
                    (Some(s), Some(z)) => DriftSpec { label: "custom".into(), exprs: parsed, sup: s.clone(), z_sup: z.clone() },
                    _ => DriftSpec::certified(&geo, parsed)?,
                }
            }
        };
        ModelSpec::new(geo, rec.beta, g, drift)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeometrySource {
    Name(String),
    Record(Box<GeometryRecord>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DriftRecord {
    Preset(String),
    Custom {
        exprs: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sup: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        z_sup: Option<Vec<Vec<f64>>>,
    },
}

/// JSON form of a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    pub geometry: GeometrySource,
    pub beta: f64,
    #[serde(default, rename = "G", skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<DriftRecord>,
}

/// `δ = λ_min(G* + I)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaReport {
    pub delta: f64,
    pub residual: f64,
    #[serde(skip)]
    pub exact: Option<Rational>,
}

fn exact(v: f64) -> Rational {
    f64_to_rat(v).expect("finite input checked at construction")
}

/// Smallest eigenvalue of `(G+Gᵀ)/2 + I` for row-major `m×m` G.
pub fn delta_of_g(g: &[f64], m: usize) -> Result<DeltaReport, ConstantsError> {
    if g.len() != m * m {
        return Err(ConstantsError::Shape { what: "G", expected: m * m, found: g.len() });
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(ConstantsError::NonFinite("G"));
    }
    let diagonal = (0..m).all(|i| (0..m).all(|j| i == j || exact(g[i * m + j]) + exact(g[j * m + i]) == Rational::zero()));
    if diagonal {
        let d = (0..m).map(|i| exact(g[i * m + i]) + rat_int(1)).min().unwrap_or_else(|| rat_int(1));
        let df = rat_to_f64(&d);
        if d <= Rational::zero() {
            return Err(ConstantsError::NotPositiveDefinite { delta: df });
        }
        return Ok(DeltaReport { delta: df, residual: 0.0, exact: Some(d) });
    }
    let a = DMatrix::from_fn(m, m, |i, j| 0.5 * (g[i * m + j] + g[j * m + i]) + if i == j { 1.0 } else { 0.0 });
    let eig = SymmetricEigen::new(a.clone());
    let (idx, delta) = eig.eigenvalues.iter().cloned().enumerate().min_by(|a, b| a.1.total_cmp(&b.1)).expect("m > 0");
    let v = eig.eigenvectors.column(idx);
    let residual = (&a * v - v * delta).norm() / a.norm().max(1.0);
    if residual > EIGEN_RESIDUAL_TOL {
        return Err(ConstantsError::EigenResidual(residual));
    }
    if delta <= 0.0 {
        return Err(ConstantsError::NotPositiveDefinite { delta });
    }
    Ok(DeltaReport { delta, residual, exact: None })
}

/// Exact ingredients of κ for one structure tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaTerms {
    pub lambda_star: Rational,
    pub c1: Rational,
    pub c2: Rational,
    pub c3: Rational,
    pub eta: Rational,
    pub delta: DeltaReport,
}

impl KappaTerms {
    /// `C1 + C2 + η + C3/δ` as `f64`.
    pub fn offset_f64(&self) -> f64 {
        match self.offset_exact() {
            Some(o) => rat_to_f64(&o),
            None => rat_to_f64(&self.c1) + rat_to_f64(&self.c2) + rat_to_f64(&self.eta) + rat_to_f64(&self.c3) / self.delta.delta,
        }
    }

    pub fn offset_exact(&self) -> Option<Rational> {
        self.delta.exact.as_ref().map(|d| &self.c1 + &self.c2 + &self.eta + &self.c3 / d)
    }
}

fn abs_g_plus_i(spec: &ModelSpec) -> Vec<Rational> {
    let m = spec.m();
    (0..m * m)
        .map(|ij| {
            let v = exact(spec.g[ij]) + if ij / m == ij % m { rat_int(1) } else { rat_int(0) };
            v.abs()
        })
        .collect()
}

fn g_plus_i(spec: &ModelSpec) -> Vec<Rational> {
    let m = spec.m();
    (0..m * m).map(|ij| exact(spec.g[ij]) + if ij / m == ij % m { rat_int(1) } else { rat_int(0) }).collect()
}

/// `G* + I` exactly.
fn gsym_plus_i(spec: &ModelSpec) -> Vec<Rational> {
    let m = spec.m();
    let half = Rational::new(1.into(), 2.into());
    (0..m * m)
        .map(|ij| {
            let (i, j) = (ij / m, ij % m);
            (exact(spec.g[i * m + j]) + exact(spec.g[j * m + i])) * &half + if i == j { rat_int(1) } else { rat_int(0) }
        })
        .collect()
}

/// `sup_k Σ_{n,i,j,l} |G_ij+δ_ij| (|c_kil||c_ljn| + |c_nil||c_ljk|)`
fn c1_pairing(c: &StructureTensor, gabs: &[Rational]) -> Rational {
    let (n, m) = (c.n(), c.m());
    let mut best = Rational::zero();
    for k in 0..n {
        let mut s = Rational::zero();
        for i in 0..m {
            for j in 0..m {
                let w = &gabs[i * m + j];
                if w.is_zero() {
                    continue;
                }
                for l in 0..n {
                    for nn in 0..n {
                        let t = c.get(k, i, l).abs() * c.get(l, j, nn).abs() + c.get(nn, i, l).abs() * c.get(l, j, k).abs();
                        s += w * t;
                    }
                }
            }
        }
        best = best.max(s);
    }
    best
}

/// `Σ_{k,j,l} (Σ_i (G+I)_ij c_kil)² + Σ_{l,j,n} c_ljn²`; equals `2Σc²` at `G = 0`.
fn c1_square(c: &StructureTensor, gpi: &[Rational]) -> Rational {
    let (n, m) = (c.n(), c.m());
    let mut s = Rational::zero();
    for k in 0..n {
        for j in 0..m {
            for l in 0..n {
                let mut a = Rational::zero();
                for i in 0..m {
                    a += &gpi[i * m + j] * c.get(k, i, l);
                }
                s += &a * &a;
            }
        }
    }
    for l in 0..n {
        for j in 0..m {
            for nn in 0..n {
                s += c.get(l, j, nn) * c.get(l, j, nn);
            }
        }
    }
    s
}

/// `sup_k Σ_{i,l} ‖α_i‖ (|c_kil| + |c_lik|)`
fn c2_drift(c: &StructureTensor, sup: &[Rational]) -> Rational {
    let (n, m) = (c.n(), c.m());
    (0..n)
        .map(|k| {
            let mut s = Rational::zero();
            for i in 0..m {
                for l in 0..n {
                    s += &sup[i] * (c.get(k, i, l).abs() + c.get(l, i, k).abs());
                }
            }
            s
        })
        .max()
        .unwrap_or_else(Rational::zero)
}

/// `2 Σ_{k,l,j} [Σ_i (δ_ij + G*_ij) c_kil]²`
fn c3_young(c: &StructureTensor, gs: &[Rational]) -> Rational {
    let (n, m) = (c.n(), c.m());
    let mut s = Rational::zero();
    for k in 0..n {
        for l in 0..n {
            for j in 0..m {
                let mut a = Rational::zero();
                for i in 0..m {
                    a += &gs[i * m + j] * c.get(k, i, l);
                }
                s += &a * &a;
            }
        }
    }
    s * rat_int(2)
}

/// `max_k Σ_i ‖Z_kα_i‖ + max_i Σ_k ‖Z_kα_i‖`
fn eta_drift(z_sup: &[Vec<Rational>]) -> Rational {
    let by_k = z_sup.iter().map(|row| row.iter().sum::<Rational>()).max().unwrap_or_else(Rational::zero);
    let m = z_sup.first().map_or(0, Vec::len);
    let by_i = (0..m).map(|i| z_sup.iter().map(|row| row[i].clone()).sum::<Rational>()).max().unwrap_or_else(Rational::zero);
    by_k + by_i
}

fn drift_bounds(spec: &ModelSpec) -> (Vec<Rational>, Vec<Vec<Rational>>) {
    let sup = spec.drift.sup.iter().map(|v| exact(*v)).collect();
    let z = spec.drift.z_sup.iter().map(|r| r.iter().map(|v| exact(*v)).collect()).collect();
    (sup, z)
}

fn terms_for(spec: &ModelSpec, c: &StructureTensor) -> Result<KappaTerms, ConstantsError> {
    let delta = delta_of_g(&spec.g, spec.m())?;
    let (sup, z) = drift_bounds(spec);
    Ok(KappaTerms {
        lambda_star: spec.geometry.lambda_star(),
        c1: c1_pairing(c, &abs_g_plus_i(spec)),
        c2: c2_drift(c, &sup),
        c3: c3_young(c, &gsym_plus_i(spec)),
        eta: eta_drift(&z),
        delta,
    })
}

/// Exact ingredients of κ for the geometry's own structure tensor.
pub fn kappa_terms(spec: &ModelSpec) -> Result<KappaTerms, ConstantsError> {
    terms_for(spec, spec.geometry.structure())
}

/// `κ(β) = slope·β − offset` in exact arithmetic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactAffine {
    pub slope: String,
    pub offset: String,
    pub kappa: String,
    pub b0: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaReport {
    pub variant: String,
    pub beta: f64,
    pub lambda_star: f64,
    pub delta: f64,
    pub delta_residual: f64,
    pub c1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c1_pairing: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c1_square: Option<f64>,
    pub c2: f64,
    pub c3: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c4: Option<f64>,
    pub eta: f64,
    pub kappa: f64,
    pub b0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<ExactAffine>,
    #[serde(skip)]
    pub kappa_exact: Option<Rational>,
    #[serde(skip)]
    pub offset_exact: Option<Rational>,
}

impl KappaReport {
    /// κ at another β with the same constants.
    pub fn kappa_at(&self, beta: f64) -> f64 {
        match &self.offset_exact {
            Some(o) => rat_to_f64(&(rat_int(2) * exact_lambda(self) * exact(beta) - o)),
            None => 2.0 * self.lambda_star * beta - self.offset(),
        }
    }

    pub fn offset(&self) -> f64 {
        self.c1 + self.c2 + self.eta + self.c3 / self.delta + self.c4.unwrap_or(0.0)
    }
}

fn exact_lambda(r: &KappaReport) -> Rational {
    exact(r.lambda_star)
}

fn report(variant: &str, spec: &ModelSpec, t: &KappaTerms, c1_used: Rational, extra: Option<Rational>) -> KappaReport {
    let ls = &t.lambda_star;
    let beta = exact(spec.beta);
    let extra_f = extra.as_ref().map(rat_to_f64);
    let (kappa_exact, offset_exact, exact_form) = match &t.delta.exact {
        Some(d) => {
            let offset = &c1_used + &t.c2 + &t.eta + &t.c3 / d + extra.clone().unwrap_or_else(Rational::zero);
            let slope = rat_int(2) * ls;
            let kappa = &slope * &beta - &offset;
            let b0 = &offset / &slope;
            let form = ExactAffine { slope: slope.to_string(), offset: offset.to_string(), kappa: kappa.to_string(), b0: b0.to_string() };
            (Some(kappa), Some(offset), Some(form))
        }
        None => (None, None, None),
    };
    let lambda_star = rat_to_f64(ls);
    let offset_f = match &offset_exact {
        Some(o) => rat_to_f64(o),
        None => rat_to_f64(&c1_used) + rat_to_f64(&t.c2) + rat_to_f64(&t.eta) + rat_to_f64(&t.c3) / t.delta.delta + extra_f.unwrap_or(0.0),
    };
    let kappa = match &kappa_exact {
        Some(k) => rat_to_f64(k),
        None => 2.0 * lambda_star * spec.beta - offset_f,
    };
    KappaReport {
        variant: variant.to_string(),
        beta: spec.beta,
        lambda_star,
        delta: t.delta.delta,
        delta_residual: t.delta.residual,
        c1: rat_to_f64(&c1_used),
        c1_pairing: None,
        c1_square: None,
        c2: rat_to_f64(&t.c2),
        c3: rat_to_f64(&t.c3),
        c4: extra_f,
        eta: rat_to_f64(&t.eta),
        kappa,
        b0: offset_f / (2.0 * lambda_star),
        exact: exact_form,
        kappa_exact,
        offset_exact,
    }
}

/// `κ = 2βλ_* − C1 − C2 − η − C3/δ`.
pub fn kappa(spec: &ModelSpec) -> Result<KappaReport, ConstantsError> {
    let t = kappa_terms(spec)?;
    let c1 = t.c1.clone();
    Ok(report("standard", spec, &t, c1, None))
}

/// κ̄ with `C̄1 = min(C1, C1')`, where `C1'` uses the square-completion pairing.
pub fn kappa_optimal(spec: &ModelSpec) -> Result<KappaReport, ConstantsError> {
    let t = kappa_terms(spec)?;
    let alt = c1_square(spec.geometry.structure(), &g_plus_i(spec));
    let used = t.c1.clone().min(alt.clone());
    let mut r = report("optimal", spec, &t, used, None);
    r.c1_pairing = Some(rat_to_f64(&t.c1));
    r.c1_square = Some(rat_to_f64(&alt));
    Ok(r)
}

/// Structure "constants" given as polynomials `c_{kjl}(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyStructureTensor {
    n: usize,
    m: usize,
    nvars: usize,
    c: Vec<Poly>,
}

impl PolyStructureTensor {
    pub fn zeros(n: usize, m: usize, nvars: usize) -> Self {
        PolyStructureTensor { n, m, nvars, c: vec![Poly::zero(nvars); n * m * n] }
    }

    pub fn from_constant(t: &StructureTensor, nvars: usize) -> Self {
        let mut p = PolyStructureTensor::zeros(t.n(), t.m(), nvars);
        for (k, j, l, v) in t.nonzero() {
            p.set(k, j, l, Poly::constant(nvars, v));
        }
        p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, k: usize, j: usize, l: usize) -> &Poly {
        &self.c[(k * self.m + j) * self.n + l]
    }

    pub fn set(&mut self, k: usize, j: usize, l: usize, p: Poly) {
        let idx = (k * self.m + j) * self.n + l;
        self.c[idx] = p;
    }

    pub fn eval(&self, x: &[Rational]) -> Result<StructureTensor, PolyError> {
        let mut t = StructureTensor::zeros(self.n, self.m);
        for k in 0..self.n {
            for j in 0..self.m {
                for l in 0..self.n {
                    let v = self.get(k, j, l).eval(x)?;
                    if !v.is_zero() {
                        t.set(k, j, l, v);
                    }
                }
            }
        }
        Ok(t)
    }
}

/// `κ(x) = 2βλ_* − C1(x) − C2(x) − η − C3(x)/δ − C4(x)` with
/// `C4(x) = sup_k Σ_{j,l} (|X_j c_kjl(x)| + |X_j c_ljk(x)|)`.
pub fn kappa_pointwise(spec: &ModelSpec, c: &PolyStructureTensor, x: &[f64]) -> Result<KappaReport, ConstantsError> {
    let geo = &spec.geometry;
    if c.n() != geo.family_size() || c.m() != geo.generators() || c.nvars != geo.ambient_dim() {
        return Err(ConstantsError::Shape {
            what: "structure polynomials",
            expected: geo.family_size() * geo.generators() * geo.family_size(),
            found: c.c.len(),
        });
    }
    if x.len() != geo.ambient_dim() {
        return Err(ConstantsError::Shape { what: "point", expected: geo.ambient_dim(), found: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ConstantsError::NonFinite("point"));
    }
    let xr: Vec<Rational> = x.iter().map(|v| exact(*v)).collect();
    let at = c.eval(&xr)?;
    let t = terms_for(spec, &at)?;
    let n = c.n();
    let mut c4 = Rational::zero();
    for k in 0..n {
        let mut s = Rational::zero();
        for (j, xj) in geo.generator_fields().iter().enumerate() {
            for l in 0..n {
                s += xj.apply(c.get(k, j, l))?.eval(&xr)?.abs();
                s += xj.apply(c.get(l, j, k))?.eval(&xr)?.abs();
            }
        }
        c4 = c4.max(s);
    }
    let c1 = t.c1.clone();
    Ok(report("pointwise", spec, &t, c1, Some(c4)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LqReport {
    pub q: f64,
    pub beta: f64,
    pub lambda_star: f64,
    /// `max_k Σ_{i,l,m} |c_kil c_lim|`
    pub pair_row: f64,
    /// `max_m Σ_{i,l,k} |c_kil c_lim|`
    pub pair_col: f64,
    /// `Σ_{k,i,l} c_kil²`
    pub square_sum: f64,
    pub c1: f64,
    pub c2: f64,
    pub kappa_q: f64,
    pub beta_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_q_exact: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_threshold_exact: Option<String>,
}

/// `κ' = −C1 − C2` for the `l_q` gradient bound (`G = 0`, zero drift).
pub fn kappa_q(spec: &ModelSpec, q: f64) -> Result<LqReport, ConstantsError> {
    if !q.is_finite() || q <= 1.0 {
        return Err(ConstantsError::Q(q));
    }
    if !spec.g_is_zero() || !spec.drift.is_zero() {
        return Err(ConstantsError::LqCoupling);
    }
    let c = spec.geometry.structure();
    let (n, m) = (c.n(), c.m());
    let mut row = vec![Rational::zero(); n];
    let mut col = vec![Rational::zero(); n];
    let mut sq = Rational::zero();
    for k in 0..n {
        for i in 0..m {
            for l in 0..n {
                let a = c.get(k, i, l);
                if a.is_zero() {
                    continue;
                }
                sq += a * a;
                for mm in 0..n {
                    let p = (a * c.get(l, i, mm)).abs();
                    row[k] += &p;
                    col[mm] += &p;
                }
            }
        }
    }
    let a = row.into_iter().max().unwrap_or_else(Rational::zero);
    let b = col.into_iter().max().unwrap_or_else(Rational::zero);
    let qr = exact(q);
    let one = rat_int(1);
    let half = Rational::new(1.into(), 2.into());
    let ls = spec.geometry.lambda_star();
    let c1 = &qr * (&half * &a + &half * &b - exact(spec.beta) * &ls);
    let c2 = &qr / (&qr - &one) * &sq;
    let kq = -(&c1) - &c2;
    let thr = (&half * &a + &half * &b + &sq / (&qr - &one)) / &ls;
    Ok(LqReport {
        q,
        beta: spec.beta,
        lambda_star: rat_to_f64(&ls),
        pair_row: rat_to_f64(&a),
        pair_col: rat_to_f64(&b),
        square_sum: rat_to_f64(&sq),
        c1: rat_to_f64(&c1),
        c2: rat_to_f64(&c2),
        kappa_q: rat_to_f64(&kq),
        beta_threshold: rat_to_f64(&thr),
        kappa_q_exact: Some(kq.to_string()),
        beta_threshold_exact: Some(thr.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{abelian, grusin, heisenberg, martinet};
    use crate::polyfield::StructureTensor;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn plain(g: Geometry, beta: f64) -> ModelSpec {
        ModelSpec::plain(g, beta).unwrap()
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta_of_g(&[0.0; 4], 2).unwrap().delta, 1.0);
        assert_eq!(delta_of_g(&[0.5, 0.0, 0.0, 0.5], 2).unwrap().delta, 1.5);
        let anti = delta_of_g(&[0.0, 0.7, -0.7, 0.0], 2).unwrap();
        assert_eq!(anti.delta, 1.0);
        assert_eq!(anti.exact, Some(rat_int(1)));
        let full = delta_of_g(&[0.0, 0.5, 0.5, 0.0], 2).unwrap();
        assert_relative_eq!(full.delta, 0.5, epsilon = 1e-14);
        assert!(full.exact.is_none() && full.residual <= EIGEN_RESIDUAL_TOL);
        assert!(matches!(delta_of_g(&[-1.5, 0.0, 0.0, 0.0], 2), Err(ConstantsError::NotPositiveDefinite { .. })));
        assert!(matches!(delta_of_g(&[0.0, 2.0, 2.0, 0.0], 2), Err(ConstantsError::NotPositiveDefinite { .. })));
    }

    #[test]
    fn heisenberg_kappa_is_two_beta_minus_four() {
        for beta in [0.5, 2.0, 3.0, 7.25] {
            let r = kappa(&plain(heisenberg(), beta)).unwrap();
            assert_eq!((r.c1, r.c2, r.eta, r.c3, r.delta), (0.0, 0.0, 0.0, 4.0, 1.0));
            assert_eq!(r.kappa_exact, Some(exact(2.0 * beta - 4.0)));
            assert_eq!(r.b0, 2.0);
        }
    }

    #[test]
    fn abelian_kappa_is_two_beta() {
        for dim in [1, 3] {
            let r = kappa(&plain(abelian(dim), 1.5)).unwrap();
            assert_eq!(r.kappa, 3.0);
            let o = kappa_optimal(&plain(abelian(dim), 1.5)).unwrap();
            assert_eq!((o.c1_pairing, o.c1_square), (Some(0.0), Some(0.0)));
        }
    }

    /// Direct enumeration of every index tuple, written independently of the
    /// library's grouped sums.
    fn brute_force_offset(c: &StructureTensor, g: &[f64]) -> f64 {
        let (n, m) = (c.n(), c.m());
        let cf = |k: usize, j: usize, l: usize| rat_to_f64(c.get(k, j, l));
        let id = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
        let mut c1: f64 = 0.0;
        for k in 0..n {
            let mut acc = 0.0;
            for nn in 0..n {
                for i in 0..m {
                    for j in 0..m {
                        for l in 0..n {
                            acc += (g[i * m + j] + id(i, j)).abs()
                                * (cf(k, i, l).abs() * cf(l, j, nn).abs() + cf(nn, i, l).abs() * cf(l, j, k).abs());
                        }
                    }
                }
            }
            c1 = c1.max(acc);
        }
        let mut c3 = 0.0;
        for k in 0..n {
            for l in 0..n {
                for j in 0..m {
                    let mut inner = 0.0;
                    for i in 0..m {
                        inner += (id(i, j) + 0.5 * (g[i * m + j] + g[j * m + i])) * cf(k, i, l);
                    }
                    c3 += 2.0 * inner * inner;
                }
            }
        }
        // only called with G* = 0, so δ = 1
        c1 + c3
    }

    #[test]
    fn martinet_against_brute_force() {
        let spec = plain(martinet(), 4.0);
        let r = kappa(&spec).unwrap();
        let offset = brute_force_offset(spec.geometry.structure(), &spec.g);
        assert_relative_eq!(r.kappa, 2.0 * 4.0 - offset, epsilon = 1e-12);
        assert!(r.c1 > 0.0 && r.c3 > 0.0);
        let anti = ModelSpec::new(martinet(), 4.0, vec![0.0, 0.3, -0.3, 0.0], DriftSpec::zero(&martinet())).unwrap();
        let ra = kappa(&anti).unwrap();
        let offset = brute_force_offset(anti.geometry.structure(), &anti.g);
        assert_relative_eq!(ra.kappa, 8.0 - offset, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_kappa_at_zero_coupling() {
        // κ = 2βλ_* − η − sup_k{Σ_{n,j,l}(|c_kjl||c_ljn| + |c_njl||c_ljk|) + Σ_{i,l}|α_i|(|c_kil|+|c_lik|)} − 2Σc²
        for geo in [heisenberg(), grusin(), martinet(), abelian(2)] {
            let spec = plain(geo, 3.0);
            let c = spec.geometry.structure();
            let (n, m) = (c.n(), c.m());
            let cf = |k: usize, j: usize, l: usize| rat_to_f64(c.get(k, j, l));
            let mut sup: f64 = 0.0;
            for k in 0..n {
                let mut s = 0.0;
                for nn in 0..n {
                    for j in 0..m {
                        for l in 0..n {
                            s += cf(k, j, l).abs() * cf(l, j, nn).abs() + cf(nn, j, l).abs() * cf(l, j, k).abs();
                        }
                    }
                }
                sup = sup.max(s);
            }
            let sq: f64 = c.nonzero().iter().map(|(_, _, _, v)| rat_to_f64(v).powi(2)).sum();
            let ls = rat_to_f64(&spec.geometry.lambda_star());
            let display = 2.0 * 3.0 * ls - sup - 2.0 * sq;
            assert_relative_eq!(kappa(&spec).unwrap().kappa, display, epsilon = 1e-12);
        }
    }

    #[test]
    fn optimal_variant() {
        let o = kappa_optimal(&plain(heisenberg(), 3.0)).unwrap();
        assert_eq!((o.c1_pairing, o.c1_square, o.c1), (Some(0.0), Some(4.0), 0.0));
        assert_eq!(o.kappa, 2.0);
        let m = kappa_optimal(&plain(martinet(), 3.0)).unwrap();
        let std = kappa(&plain(martinet(), 3.0)).unwrap();
        assert!(m.kappa >= std.kappa);
        assert_eq!(m.c1, m.c1_pairing.unwrap().min(m.c1_square.unwrap()));
    }

    #[test]
    fn optimal_on_dense_synthetic_tensor() {
        // random dense c on a 3-field/2-generator family, evaluated directly
        let mut rng = 12345u64;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng >> 33) % 7) as i64 - 3
        };
        let mut t = StructureTensor::zeros(3, 2);
        for k in 0..3 {
            for j in 0..2 {
                for l in 0..3 {
                    t.set(k, j, l, rat_int(next()));
                }
            }
        }
        let gpi = vec![rat_int(1), rat_int(0), rat_int(0), rat_int(1)];
        let pairing = c1_pairing(&t, &gpi);
        let square = c1_square(&t, &gpi);
        let sq: Rational = t.nonzero().iter().map(|(_, _, _, v)| v * v).sum();
        assert_eq!(square, rat_int(2) * sq);
        assert!(pairing.clone().min(square.clone()) <= pairing.max(square));
    }

    #[test]
    fn drift_terms() {
        let h = heisenberg();
        let d = DriftSpec::tanh_first(&h, 0.5).unwrap();
        assert_eq!(d.z_sup, vec![vec![0.5, 0.5], vec![0.0, 0.0], vec![0.0, 0.0]]);
        let spec = ModelSpec::new(h.clone(), 3.0, vec![0.0; 4], d).unwrap();
        let r = kappa(&spec).unwrap();
        // η = max_k Σ_i + max_i Σ_k = 1 + 0.5; C2 = sup_k Σ_{i,l} 0.5(|c_kil|+|c_lik|): k=3 gives 0.5·2
        assert_eq!(r.eta, 1.5);
        assert_eq!(r.c2, 1.0);
        assert_eq!(r.kappa, 6.0 - 4.0 - 1.5 - 1.0);
        let cert = DriftSpec::certified(&h, vec![Expr::var(0).tanh().scale(0.5); 2]).unwrap();
        assert_eq!(cert.sup, vec![0.5, 0.5]);
        assert_eq!(cert.z_sup, vec![vec![0.5, 0.5], vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert!(DriftSpec::certified(&h, vec![Expr::var(0); 2]).is_err());
        assert!(matches!(DriftSpec::preset(&h, "cubic"), Err(ConstantsError::Preset(_))));
    }

    #[test]
    fn threshold_consistency() {
        for spec in [
            plain(heisenberg(), 1.0),
            plain(martinet(), 1.0),
            ModelSpec::new(heisenberg(), 1.0, vec![0.2, 0.5, -0.1, 0.4], DriftSpec::tanh_first(&heisenberg(), 0.3).unwrap()).unwrap(),
        ] {
            let b0 = kappa(&spec).unwrap().b0;
            for eps in [1e-6, 1e-3, 1.0] {
                assert!(kappa(&spec.with_beta(b0 + eps).unwrap()).unwrap().kappa > 0.0);
            }
        }
    }

    #[test]
    fn pointwise_with_constant_tensor_is_exact() {
        let spec = plain(martinet(), 2.5);
        let pc = PolyStructureTensor::from_constant(spec.geometry.structure(), 3);
        let base = kappa(&spec).unwrap();
        for x in [[0.0, 0.0, 0.0], [1.5, -2.0, 0.25]] {
            let p = kappa_pointwise(&spec, &pc, &x).unwrap();
            assert_eq!(p.c4, Some(0.0));
            assert_eq!(p.kappa_exact, base.kappa_exact);
        }
        let hs = plain(heisenberg(), 3.0);
        let hp = PolyStructureTensor::from_constant(hs.geometry.structure(), 3);
        assert_eq!(kappa_pointwise(&hs, &hp, &[0.3, 0.1, -4.0]).unwrap().kappa, 2.0);
    }

    #[test]
    fn pointwise_c4_matches_finite_differences() {
        let spec = plain(heisenberg(), 3.0);
        let mut pc = PolyStructureTensor::from_constant(spec.geometry.structure(), 3);
        let c123 = Poly::from_terms(3, vec![(vec![0, 0, 0], rat_int(1)), (vec![0, 1, 0], rat_int(1))]).unwrap();
        pc.set(0, 1, 2, c123.clone());
        let r = kappa_pointwise(&spec, &pc, &[0.0, 0.0, 0.0]).unwrap();
        // FD of c along each generator at the origin
        let h = 1e-6;
        let mut best: f64 = 0.0;
        for k in 0..3 {
            let mut s = 0.0;
            for (j, xj) in spec.geometry.generator_fields().iter().enumerate() {
                let dir = xj.eval_f64(&[0.0, 0.0, 0.0]);
                let fd = |p: &Poly| {
                    let plus: Vec<f64> = dir.iter().map(|d| d * h).collect();
                    let minus: Vec<f64> = dir.iter().map(|d| -d * h).collect();
                    (p.eval_f64(&plus) - p.eval_f64(&minus)) / (2.0 * h)
                };
                for l in 0..3 {
                    s += fd(pc.get(k, j, l)).abs() + fd(pc.get(l, j, k)).abs();
                }
            }
            best = best.max(s);
        }
        assert_relative_eq!(r.c4.unwrap(), best, epsilon = 1e-8);
        assert_eq!(r.c4, Some(1.0));
    }

    #[test]
    fn lq_examples() {
        let r = kappa_q(&plain(heisenberg(), 3.0), 2.0).unwrap();
        assert_eq!(r.kappa_q, 2.0);
        assert_eq!(r.c2, 4.0);
        assert_eq!(kappa_q(&plain(heisenberg(), 3.0), 1.5).unwrap().beta_threshold, 4.0);
        for q in [1.2, 2.0, 5.0] {
            let a = kappa_q(&plain(abelian(2), 1.5), q).unwrap();
            assert_relative_eq!(a.kappa_q, q * 1.5, epsilon = 1e-15);
        }
        assert!(matches!(kappa_q(&plain(heisenberg(), 3.0), 1.0), Err(ConstantsError::Q(_))));
        let coupled = ModelSpec::new(heisenberg(), 3.0, vec![0.1, 0.0, 0.0, 0.1], DriftSpec::zero(&heisenberg())).unwrap();
        assert!(matches!(kappa_q(&coupled, 2.0), Err(ConstantsError::LqCoupling)));
        // κ' > 0 strictly above the threshold
        let t = kappa_q(&plain(martinet(), 1.0), 1.7).unwrap().beta_threshold;
        assert!(kappa_q(&plain(martinet(), t + 1e-6), 1.7).unwrap().kappa_q > 0.0);
    }

    #[test]
    fn model_record_round_trip() {
        let spec =
            ModelSpec::new(heisenberg(), 2.0, vec![0.0, 0.5, -0.5, 0.0], DriftSpec::tanh_first(&heisenberg(), 0.2).unwrap()).unwrap();
        let text = serde_json::to_string(&spec.to_record().unwrap()).unwrap();
        let back = ModelSpec::from_record(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.g, spec.g);
        assert_eq!(back.drift, spec.drift);
        let custom: ModelRecord = serde_json::from_str(r#"{"geometry":"grusin","beta":1.0,"alpha":{"exprs":["sin(x1)","0"]}}"#).unwrap();
        let s = ModelSpec::from_record(&custom).unwrap();
        assert_eq!(s.drift.sup, vec![1.0, 0.0]);
        assert!(serde_json::from_str::<ModelRecord>(r#"{"geometry":"grusin","beta":1.0,"gamma":2}"#).is_err());
    }

    proptest! {
        #[test]
        fn kappa_slope_is_exactly_two_lambda_star(b1 in 0.0f64..20.0, b2 in 0.0f64..20.0, which in 0usize..4) {
            let geo = [heisenberg(), grusin(), martinet(), abelian(2)][which].clone();
            let ls = geo.lambda_star();
            let k1 = kappa(&plain(geo.clone(), b1)).unwrap().kappa_exact.unwrap();
            let k2 = kappa(&plain(geo, b2)).unwrap().kappa_exact.unwrap();
            prop_assert_eq!(k2 - k1, rat_int(2) * ls * (exact(b2) - exact(b1)));
        }
    }
}
