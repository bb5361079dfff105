//! Catalog sub-Riemannian geometries, the H-type gauge and the Lyapunov cutoff.

use std::f64::consts::PI;

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::polyfield::{
    dilation_eigenvalues, rat, rat_int, rat_to_f64, rational_from_record, rational_record, structure_constants, Poly, PolyError, Rational,
    RecordError, StructureTensor, TermRecord, VectorField,
};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("unknown geometry `{0}` (expected heisenberg, grusin, martinet or abelian<N>)")]
    Unknown(String),
    #[error("geometry record is inconsistent: {0}")]
    Inconsistent(String),
    #[error("H-type gauge needs an even horizontal dimension and one vertical direction, got m={m}, l={l}")]
    UnsupportedGauge { m: usize, l: usize },
    #[error("gauge is not smooth at the origin")]
    Origin,
    #[error("point has {found} coordinates, expected {expected}")]
    PointDimension { expected: usize, found: usize },
    #[error("geometry `{0}` has no homogeneous gauge (dilation is not diagonal-linear)")]
    NoGauge(String),
}

/// Distance-from-origin used for Ω-classes and Lyapunov functions.
#[derive(Debug, Clone, PartialEq)]
pub enum GaugeKind {
    /// Folland–Kaplan gauge of a Heisenberg-type group.
    HType(HTypeGauge),
    /// `(Σ_a |x_a|^{2W/w_a})^{1/(2W)}` for graded weights `w_a`, `W = max w_a`.
    Homogeneous(Vec<u32>),
    None,
}

/// A validated geometry: generators, adapted family, dilation and the exact
/// structure data derived from them.
#[derive(Debug, Clone)]
pub struct Geometry {
    name: String,
    m: usize,
    fields: Vec<VectorField>,
    dilation: VectorField,
    lambda: Vec<Rational>,
    structure: StructureTensor,
    gauge: GaugeKind,
}

impl Geometry {
    /// Validates the family (first `m` fields are the generators) and computes
    /// `c_{kjl}` and `λ_k` exactly.
    pub fn new(name: &str, fields: Vec<VectorField>, m: usize, dilation: VectorField) -> Result<Self, GeometryError> {
        let dim = dilation.ambient_dim();
        if let Some(f) = fields.iter().find(|f| f.ambient_dim() != dim) {
            return Err(PolyError::DimensionMismatch { expected: dim, found: f.ambient_dim() }.into());
        }
        if m == 0 || m > fields.len() {
            return Err(PolyError::GeneratorCount { m, n: fields.len() }.into());
        }
        let structure = structure_constants(&fields, m)?;
        let lambda = dilation_eigenvalues(&fields, &dilation)?;
        let gauge = match diagonal_weights(&dilation) {
            Some(w) => GaugeKind::Homogeneous(w),
            None => GaugeKind::None,
        };
        Ok(Geometry { name: name.to_string(), m, fields, dilation, lambda, structure, gauge })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ambient_dim(&self) -> usize {
        self.dilation.ambient_dim()
    }

    /// Number of generators `m`.
    pub fn generators(&self) -> usize {
        self.m
    }

    /// Size `n` of the adapted family.
    pub fn family_size(&self) -> usize {
        self.fields.len()
    }

    /// The adapted family `Z_1..Z_n`; the first `m` entries are `X_1..X_m`.
    pub fn fields(&self) -> &[VectorField] {
        &self.fields
    }

    pub fn generator_fields(&self) -> &[VectorField] {
        &self.fields[..self.m]
    }

    pub fn dilation(&self) -> &VectorField {
        &self.dilation
    }

    pub fn lambda(&self) -> &[Rational] {
        &self.lambda
    }

    /// `λ_* = min_k λ_k`.
    pub fn lambda_star(&self) -> Rational {
        self.lambda.iter().min().cloned().unwrap_or_else(Rational::zero)
    }

    pub fn structure(&self) -> &StructureTensor {
        &self.structure
    }

    pub fn gauge(&self) -> &GaugeKind {
        &self.gauge
    }

    /// Gauge distance `d(x)` from the origin.
    pub fn gauge_distance(&self, x: &[f64]) -> Result<f64, GeometryError> {
        if x.len() != self.ambient_dim() {
            return Err(GeometryError::PointDimension { expected: self.ambient_dim(), found: x.len() });
        }
        match &self.gauge {
            GaugeKind::HType(g) => Ok(g.norm(x)),
            GaugeKind::Homogeneous(w) => Ok(homogeneous_norm(w, x)),
            GaugeKind::None => Err(GeometryError::NoGauge(self.name.clone())),
        }
    }

    pub fn to_record(&self) -> Result<GeometryRecord, GeometryError> {
        let fields = self.fields.iter().map(VectorField::to_records).collect::<Result<Vec<_>, _>>()?;
        let lambda =
            self.lambda.iter().map(|l| rational_record(l).map(|(num, den)| RationalRecord { num, den })).collect::<Result<Vec<_>, _>>()?;
        let structure = self
            .structure
            .nonzero()
            .into_iter()
            .map(|(k, j, l, v)| rational_record(&v).map(|(num, den)| StructureRecord { k: k + 1, j: j + 1, l: l + 1, num, den }))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GeometryRecord {
            name: self.name.clone(),
            ambient_dim: self.ambient_dim(),
            generators: self.m,
            fields,
            dilation: self.dilation.to_records()?,
            lambda: Some(lambda),
            structure: Some(structure),
        })
    }

    /// Rebuilds a geometry from JSON, re-deriving `c` and `λ` and checking any
    /// values the record carries against them.
    pub fn from_record(rec: &GeometryRecord) -> Result<Self, GeometryError> {
        let fields = rec.fields.iter().map(|f| VectorField::from_records(f)).collect::<Result<Vec<_>, _>>()?;
        let dilation = VectorField::from_records(&rec.dilation)?;
        if dilation.ambient_dim() != rec.ambient_dim {
            return Err(GeometryError::Inconsistent(format!(
                "ambient_dim {} but dilation has {} components",
                rec.ambient_dim,
                dilation.ambient_dim()
            )));
        }
        let mut geo = Geometry::new(&rec.name, fields, rec.generators, dilation)?;
        if let Some(lambda) = &rec.lambda {
            let given = lambda.iter().map(|r| rational_from_record(r.num, r.den)).collect::<Result<Vec<_>, _>>()?;
            if given != geo.lambda {
                return Err(GeometryError::Inconsistent("lambda does not match [Z_k, D] = λ_k Z_k".into()));
            }
        }
        if let Some(entries) = &rec.structure {
            let mut given = StructureTensor::zeros(geo.family_size(), geo.m);
            for e in entries {
                if e.k == 0 || e.j == 0 || e.l == 0 || e.k > geo.family_size() || e.j > geo.m || e.l > geo.family_size() {
                    return Err(GeometryError::Inconsistent(format!("structure index ({}, {}, {}) out of range", e.k, e.j, e.l)));
                }
                given.set(e.k - 1, e.j - 1, e.l - 1, rational_from_record(e.num, e.den)?);
            }
            if given != geo.structure {
                return Err(GeometryError::Inconsistent("structure constants do not match the fields".into()));
            }
        }
        if rec.name == "heisenberg" && geo.ambient_dim() == 3 {
            geo.gauge = GaugeKind::HType(HTypeGauge::new(2, 1)?);
        }
        Ok(geo)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RationalRecord {
    pub num: i64,
    pub den: i64,
}

/// One non-zero `c_{kjl}` with 1-based indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureRecord {
    pub k: usize,
    pub j: usize,
    pub l: usize,
    pub num: i64,
    pub den: i64,
}

/// JSON form of a [`Geometry`]. `fields[k][i]` lists the terms of component
/// `i` of `Z_{k+1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryRecord {
    pub name: String,
    pub ambient_dim: usize,
    pub generators: usize,
    pub fields: Vec<Vec<Vec<TermRecord>>>,
    pub dilation: Vec<Vec<TermRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<RationalRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<Vec<StructureRecord>>,
}

fn poly(nvars: usize, terms: &[(&[u32], i64, i64)]) -> Poly {
    Poly::from_terms(nvars, terms.iter().map(|(e, n, d)| (e.to_vec(), rat(*n, *d)))).expect("static catalog polynomial")
}

fn field(comps: Vec<Poly>) -> VectorField {
    VectorField::new(comps).expect("static catalog field")
}

fn linear_dilation(weights: &[i64]) -> VectorField {
    let n = weights.len();
    field(
        weights
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let mut e = vec![0; n];
                e[i] = 1;
                Poly::monomial(e, rat_int(w))
            })
            .collect(),
    )
}

/// Heisenberg group on `(x, y, z)`: `X_1 = ∂x − (y/2)∂z`, `X_2 = ∂y + (x/2)∂z`, `Z_3 = ∂z`.
pub fn heisenberg() -> Geometry {
    let x1 = field(vec![Poly::one(3), Poly::zero(3), poly(3, &[(&[0, 1, 0], -1, 2)])]);
    let x2 = field(vec![Poly::zero(3), Poly::one(3), poly(3, &[(&[1, 0, 0], 1, 2)])]);
    let z3 = x1.bracket(&x2).expect("dims agree");
    let mut g = Geometry::new("heisenberg", vec![x1, x2, z3], 2, linear_dilation(&[1, 1, 2])).expect("catalog geometry");
    g.gauge = GaugeKind::HType(HTypeGauge::new(2, 1).expect("m=2, l=1"));
    g
}

/// Grušin plane on `(x, y)`: `X_1 = ∂x`, `X_2 = x∂y`, `Z_3 = ∂y`.
pub fn grusin() -> Geometry {
    let x1 = field(vec![Poly::one(2), Poly::zero(2)]);
    let x2 = field(vec![Poly::zero(2), poly(2, &[(&[1, 0], 1, 1)])]);
    let z3 = x1.bracket(&x2).expect("dims agree");
    Geometry::new("grusin", vec![x1, x2, z3], 2, linear_dilation(&[1, 2])).expect("catalog geometry")
}

/// Martinet distribution on `(x, y, z)`: `X_1 = ∂x − y²∂z`, `X_2 = ∂y`,
/// `Z_3 = [X_1, X_2] = 2y∂z`, `Z_4 = [Z_3, X_2] = −2∂z`.
pub fn martinet() -> Geometry {
    let x1 = field(vec![Poly::one(3), Poly::zero(3), poly(3, &[(&[0, 2, 0], -1, 1)])]);
    let x2 = field(vec![Poly::zero(3), Poly::one(3), Poly::zero(3)]);
    let z3 = x1.bracket(&x2).expect("dims agree");
    let z4 = z3.bracket(&x2).expect("dims agree");
    Geometry::new("martinet", vec![x1, x2, z3, z4], 2, linear_dilation(&[1, 1, 3])).expect("catalog geometry")
}

/// Euclidean `ℝ^N` with `X_i = ∂_i` and `D = Σ x_i ∂_i`; the process is Ornstein–Uhlenbeck.
pub fn abelian(dim: usize) -> Geometry {
    assert!(dim > 0, "abelian geometry needs at least one dimension");
    let fields = (0..dim).map(|i| VectorField::coordinate(dim, i).expect("i < dim")).collect();
    Geometry::new(&format!("abelian{dim}"), fields, dim, linear_dilation(&vec![1; dim])).expect("catalog geometry")
}

/// Looks up `heisenberg`, `grusin`, `martinet`, `abelian` (N=1) or `abelian<N>`.
pub fn by_name(name: &str) -> Result<Geometry, GeometryError> {
    match name {
        "heisenberg" => Ok(heisenberg()),
        "grusin" => Ok(grusin()),
        "martinet" => Ok(martinet()),
        "abelian" => Ok(abelian(1)),
        other => other
            .strip_prefix("abelian")
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&n| (1..=64).contains(&n))
            .map(abelian)
            .ok_or_else(|| GeometryError::Unknown(other.to_string())),
    }
}

/// Weights `w_a` if `D = Σ w_a x_a ∂_a` with positive integer `w_a`.
fn diagonal_weights(d: &VectorField) -> Option<Vec<u32>> {
    let n = d.ambient_dim();
    (0..n)
        .map(|a| {
            let c = d.component(a);
            let mut e = vec![0; n];
            e[a] = 1;
            let w = c.coefficient(&e);
            let lone = Poly::monomial(e, w.clone());
            (c == &lone && w.is_integer() && w >= Rational::one()).then(|| rat_to_f64(&w) as u32)
        })
        .collect()
}

fn homogeneous_norm(weights: &[u32], x: &[f64]) -> f64 {
    let top = weights.iter().copied().max().unwrap_or(1) as f64;
    let p = 2.0 * top;
    let s: f64 = weights.iter().zip(x).map(|(&w, &v)| v.abs().powf(p / w as f64)).sum();
    s.powf(1.0 / p)
}

/// Folland–Kaplan gauge `N(x,t) = (|x|⁴ + 16|t|²)^{1/4}` on the Heisenberg-type
/// group with `m = 2q` horizontal and `l = 1` vertical coordinates.
///
/// Coordinates are `(x_1..x_q, y_1..y_q, t)` with generators
/// `X_i = ∂_{x_i} − (y_i/2)∂_t` and `Y_i = ∂_{y_i} + (x_i/2)∂_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct HTypeGauge {
    m: usize,
    l: usize,
    fields: Vec<VectorField>,
    // ∇_{X_i} X_j, row-major in (i, j)
    covariant: Vec<VectorField>,
}

/// `N`, the sub-gradient `Σ|X_iN|²`, the sub-Laplacian `Σ X_i²N` and `DN` at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaugeValues {
    pub n: f64,
    pub subgrad: f64,
    pub sublap: f64,
    pub dn: f64,
}

/// First and second horizontal derivatives of `N` at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeJet {
    pub n: f64,
    /// `X_i N`
    pub first: Vec<f64>,
    /// `X_i X_j N`, row-major
    pub second: Vec<f64>,
    pub dn: f64,
}

impl HTypeGauge {
    pub fn new(m: usize, l: usize) -> Result<Self, GeometryError> {
        if l != 1 || m == 0 || !m.is_multiple_of(2) {
            return Err(GeometryError::UnsupportedGauge { m, l });
        }
        let q = m / 2;
        let dim = m + 1;
        let mut fields = Vec::with_capacity(m);
        for i in 0..q {
            let mut c = vec![Poly::zero(dim); dim];
            c[i] = Poly::one(dim);
            let mut e = vec![0; dim];
            e[q + i] = 1;
            c[m] = Poly::monomial(e, rat(-1, 2));
            fields.push(field(c));
        }
        for i in 0..q {
            let mut c = vec![Poly::zero(dim); dim];
            c[q + i] = Poly::one(dim);
            let mut e = vec![0; dim];
            e[i] = 1;
            c[m] = Poly::monomial(e, rat(1, 2));
            fields.push(field(c));
        }
        let mut covariant = Vec::with_capacity(m * m);
        for a in &fields {
            for b in &fields {
                covariant.push(a.covariant(b)?);
            }
        }
        Ok(HTypeGauge { m, l, fields, covariant })
    }

    pub fn horizontal_dim(&self) -> usize {
        self.m
    }

    pub fn vertical_dim(&self) -> usize {
        self.l
    }

    pub fn dim(&self) -> usize {
        self.m + self.l
    }

    pub fn fields(&self) -> &[VectorField] {
        &self.fields
    }

    pub fn norm(&self, p: &[f64]) -> f64 {
        let r2: f64 = p[..self.m].iter().map(|v| v * v).sum();
        let t = p[self.m];
        (r2 * r2 + 16.0 * t * t).powf(0.25)
    }

    /// Dilation `(x, t) ↦ (s x, s² t)`.
    pub fn dilate(&self, p: &[f64], s: f64) -> Vec<f64> {
        let mut out = p.to_vec();
        out[..self.m].iter_mut().for_each(|v| *v *= s);
        out[self.m] *= s * s;
        out
    }

    /// Euclidean gradient and Hessian of `N` by the chain rule through `u = N⁴`.
    fn euclidean_jet(&self, p: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let dim = self.dim();
        let m = self.m;
        let r2: f64 = p[..m].iter().map(|v| v * v).sum();
        let t = p[m];
        let u = r2 * r2 + 16.0 * t * t;
        let mut du = vec![0.0; dim];
        for a in 0..m {
            du[a] = 4.0 * r2 * p[a];
        }
        du[m] = 32.0 * t;
        let mut ddu = vec![0.0; dim * dim];
        for a in 0..m {
            for b in 0..m {
                ddu[a * dim + b] = 8.0 * p[a] * p[b] + if a == b { 4.0 * r2 } else { 0.0 };
            }
        }
        ddu[m * dim + m] = 32.0;
        let n = u.powf(0.25);
        let c1 = 0.25 * u.powf(-0.75);
        let c2 = -(3.0 / 16.0) * u.powf(-1.75);
        let grad: Vec<f64> = du.iter().map(|v| c1 * v).collect();
        let mut hess = vec![0.0; dim * dim];
        for a in 0..dim {
            for b in 0..dim {
                hess[a * dim + b] = c1 * ddu[a * dim + b] + c2 * du[a] * du[b];
            }
        }
        (n, grad, hess)
    }

    pub fn jet(&self, p: &[f64]) -> Result<GaugeJet, GeometryError> {
        let dim = self.dim();
        if p.len() != dim {
            return Err(GeometryError::PointDimension { expected: dim, found: p.len() });
        }
        if p.iter().all(|v| *v == 0.0) {
            return Err(GeometryError::Origin);
        }
        let (n, grad, hess) = self.euclidean_jet(p);
        let coeffs: Vec<Vec<f64>> = self.fields.iter().map(|f| f.eval_f64(p)).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let first: Vec<f64> = coeffs.iter().map(|c| dot(c, &grad)).collect();
        let mut second = vec![0.0; self.m * self.m];
        for i in 0..self.m {
            for j in 0..self.m {
                let mut s = 0.0;
                for a in 0..dim {
                    for b in 0..dim {
                        s += coeffs[i][a] * coeffs[j][b] * hess[a * dim + b];
                    }
                }
                s += dot(&self.covariant[i * self.m + j].eval_f64(p), &grad);
                second[i * self.m + j] = s;
            }
        }
        let dn = (0..self.m).map(|a| p[a] * grad[a]).sum::<f64>() + 2.0 * p[self.m] * grad[self.m];
        Ok(GaugeJet { n, first, second, dn })
    }

    /// `N`, `Σ_i|X_iN|²`, `Σ_i X_i²N` and `DN` at a point other than the origin.
    pub fn gauge_identities(&self, p: &[f64]) -> Result<GaugeValues, GeometryError> {
        let jet = self.jet(p)?;
        let subgrad = jet.first.iter().map(|v| v * v).sum();
        let sublap = (0..self.m).map(|i| jet.second[i * self.m + i]).sum();
        Ok(GaugeValues { n: jet.n, subgrad, sublap, dn: jet.dn })
    }
}

/// C² cutoff `g` with `g = 0` on `[0, 1]`, `g(x) = x` for `x ≥ 2`, and the
/// quintic `16s³ − 23s⁴ + 9s⁵` (`s = x − 1`) in between.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CutoffRho;

impl CutoffRho {
    pub const LOWER: f64 = 1.0;
    pub const UPPER: f64 = 2.0;

    pub fn value(&self, x: f64) -> f64 {
        if x <= Self::LOWER {
            0.0
        } else if x >= Self::UPPER {
            x
        } else {
            let s = x - 1.0;
            s * s * s * (16.0 + s * (-23.0 + 9.0 * s))
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        if x <= Self::LOWER {
            0.0
        } else if x >= Self::UPPER {
            1.0
        } else {
            let s = x - 1.0;
            s * s * (48.0 + s * (-92.0 + 45.0 * s))
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        if x <= Self::LOWER || x >= Self::UPPER {
            0.0
        } else {
            let s = x - 1.0;
            s * (96.0 + s * (-276.0 + 180.0 * s))
        }
    }
}

/// `ρ(point) = g(N(point))`.
pub fn cutoff_rho(g: &CutoffRho, gauge: &HTypeGauge, point: &[f64]) -> f64 {
    g.value(gauge.norm(point))
}

/// Lyapunov function `ρ = g(d(x))` used by the boundedness harness.
#[derive(Debug, Clone, PartialEq)]
pub enum LyapunovFunction {
    /// `g(N)` with the H-type gauge.
    HType(HTypeGauge),
    /// `g(|x|)` on Euclidean space of the given dimension.
    Euclidean(usize),
}

impl LyapunovFunction {
    pub fn for_geometry(geo: &Geometry) -> Result<Self, GeometryError> {
        match geo.gauge() {
            GaugeKind::HType(g) => Ok(LyapunovFunction::HType(g.clone())),
            _ if geo.name().starts_with("abelian") => Ok(LyapunovFunction::Euclidean(geo.ambient_dim())),
            _ => Err(GeometryError::NoGauge(geo.name().to_string())),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let d = match self {
            LyapunovFunction::HType(g) => g.norm(x),
            LyapunovFunction::Euclidean(_) => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        };
        CutoffRho.value(d)
    }
}

/// Extremes of `Σ|X_iρ|²` and `Σ X_i²ρ + Σ G_ij X_iX_jρ` over a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovBounds {
    pub max_subgrad: f64,
    pub max_second_order: f64,
    pub min_second_order: f64,
    pub points: usize,
}

/// Scans `{N ≤ radius}` on a grid in gauge-polar coordinates
/// (`|x|² = N² cos φ`, `4t = N² sin φ`, horizontal direction on a circle).
pub fn lyapunov_assumption_bounds(
    gauge: &HTypeGauge,
    g: &CutoffRho,
    gmat: &[f64],
    radius: f64,
    resolution: usize,
) -> Result<LyapunovBounds, GeometryError> {
    let m = gauge.horizontal_dim();
    if gmat.len() != m * m {
        return Err(GeometryError::PointDimension { expected: m * m, found: gmat.len() });
    }
    let res = resolution.max(2);
    let mut out =
        LyapunovBounds { max_subgrad: f64::NEG_INFINITY, max_second_order: f64::NEG_INFINITY, min_second_order: f64::INFINITY, points: 0 };
    for a in 1..=res * 4 {
        let n = radius * a as f64 / (res * 4) as f64;
        for b in 0..=res {
            let phi = -PI / 2.0 + PI * b as f64 / res as f64;
            let r = n * phi.cos().max(0.0).sqrt();
            let t = n * n * phi.sin() / 4.0;
            for c in 0..res {
                let theta = 2.0 * PI * c as f64 / res as f64;
                let mut p = vec![0.0; m + 1];
                // spread the horizontal radius over the first two directions
                p[0] = r * theta.cos();
                p[m / 2] = r * theta.sin();
                p[m] = t;
                if p.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let jet = gauge.jet(&p)?;
                let (g1, g2) = (g.d1(jet.n), g.d2(jet.n));
                let subgrad: f64 = jet.first.iter().map(|v| g1 * g1 * v * v).sum();
                let mut second = 0.0;
                for i in 0..m {
                    for j in 0..m {
                        let w = gmat[i * m + j] + if i == j { 1.0 } else { 0.0 };
                        second += w * (g2 * jet.first[i] * jet.first[j] + g1 * jet.second[i * m + j]);
                    }
                }
                out.max_subgrad = out.max_subgrad.max(subgrad);
                out.max_second_order = out.max_second_order.max(second);
                out.min_second_order = out.min_second_order.min(second);
                out.points += 1;
            }
        }
    }
    Ok(out)
}
