//! Exact polynomial vector fields over the rationals.
//!
//! A [`Poly`] is a sparse multivariate polynomial with [`Rational`]
//! coefficients, stored in graded-lexicographic order. A [`VectorField`] is a
//! first-order operator `Σ_i V^i ∂/∂x_i` with polynomial components. Lie
//! brackets, constant-coefficient decompositions, structure constants and
//! dilation eigenvalues are all computed exactly.

use std::cmp::Ordering;
use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Rational = BigRational;

/// Highest total degree any polynomial may reach.
pub const MAX_DEGREE: u32 = 16;

/// Shorthand for the rational `num/den`.
pub fn rat(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn rat_int(v: i64) -> Rational {
    Rational::from_integer(BigInt::from(v))
}

/// Nearest `f64` to an exact rational.
pub fn rat_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // numerator or denominator overflowed f64; fall back on a scaled division
        let n = r.numer().to_f64().unwrap_or(f64::NAN);
        let d = r.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// Exact rational value of a finite `f64`.
pub fn f64_to_rat(v: f64) -> Option<Rational> {
    Rational::from_float(v)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolyError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("polynomial degree {degree} exceeds the cap of {MAX_DEGREE}")]
    DegreeCap { degree: u32 },
    #[error("variable index {index} out of range for {nvars} variables")]
    VariableOutOfRange { index: usize, nvars: usize },
    #[error("basis fields are linearly dependent over the rationals")]
    LinearlyDependentBasis,
    #[error("field has no constant-coefficient decomposition in the given basis")]
    NoConstantDecomposition,
    #[error("[Z_{k}, X_{j}] has no constant-coefficient decomposition in the Z family")]
    NonConstantStructure { k: usize, j: usize },
    #[error("[Z_{k}, D] is not a rational multiple of Z_{k}")]
    NotEigenvector { k: usize },
    #[error("dilation eigenvalue of Z_{k} is {value}, must be positive")]
    NonPositiveEigenvalue { k: usize, value: String },
    #[error("generator count {m} exceeds family size {n}")]
    GeneratorCount { m: usize, n: usize },
}

/// Exponent multi-index, ordered graded-lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    fn mul(&self, other: &Monomial) -> Monomial {
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sparse polynomial in `nvars` variables with exact rational coefficients.
///
/// Zero coefficients are never stored, so structural equality is polynomial
/// equality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Poly {
    nvars: usize,
    terms: BTreeMap<Monomial, Rational>,
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Poly { nvars, terms: BTreeMap::new() }
    }

    pub fn one(nvars: usize) -> Self {
        Self::constant(nvars, Rational::one())
    }

    pub fn constant(nvars: usize, c: Rational) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::one(nvars), c);
        p
    }

    /// The coordinate function `x_index`.
    pub fn var(nvars: usize, index: usize) -> Result<Self, PolyError> {
        if index >= nvars {
            return Err(PolyError::VariableOutOfRange { index, nvars });
        }
        let mut e = vec![0; nvars];
        e[index] = 1;
        Ok(Self::monomial(e, Rational::one()))
    }

    pub fn monomial(exponents: Vec<u32>, coeff: Rational) -> Self {
        let mut p = Self::zero(exponents.len());
        p.add_term(Monomial(exponents), coeff);
        p
    }

    /// Builds a polynomial from `(exponents, coefficient)` pairs, summing repeats.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Result<Self, PolyError>
    where
        I: IntoIterator<Item = (Vec<u32>, Rational)>,
    {
        let mut p = Self::zero(nvars);
        for (e, c) in terms {
            if e.len() != nvars {
                return Err(PolyError::DimensionMismatch { expected: nvars, found: e.len() });
            }
            let m = Monomial(e);
            if m.degree() > MAX_DEGREE {
                return Err(PolyError::DegreeCap { degree: m.degree() });
            }
            p.add_term(m, c);
        }
        Ok(p)
    }

    fn add_term(&mut self, m: Monomial, c: Rational) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(m) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// The constant value if the polynomial has no non-constant terms.
    pub fn as_constant(&self) -> Option<Rational> {
        match self.terms.len() {
            0 => Some(Rational::zero()),
            1 => {
                let (m, c) = self.terms.iter().next()?;
                (m.degree() == 0).then(|| c.clone())
            }
            _ => None,
        }
    }

    /// Terms in ascending graded-lexicographic order.
    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Rational)> {
        self.terms.iter()
    }

    pub fn coefficient(&self, exponents: &[u32]) -> Rational {
        self.terms.get(&Monomial(exponents.to_vec())).cloned().unwrap_or_else(Rational::zero)
    }

    fn check_dim(&self, other: &Poly) -> Result<(), PolyError> {
        if self.nvars != other.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, found: other.nvars });
        }
        Ok(())
    }

    pub fn add(&self, other: &Poly) -> Result<Poly, PolyError> {
        self.check_dim(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Poly) -> Result<Poly, PolyError> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Poly {
        self.scale(&-Rational::one())
    }

    pub fn scale(&self, s: &Rational) -> Poly {
        if s.is_zero() {
            return Poly::zero(self.nvars);
        }
        Poly { nvars: self.nvars, terms: self.terms.iter().map(|(m, c)| (m.clone(), c * s)).collect() }
    }

    pub fn mul(&self, other: &Poly) -> Result<Poly, PolyError> {
        self.check_dim(other)?;
        let degree = self.degree() + other.degree();
        if !self.is_zero() && !other.is_zero() && degree > MAX_DEGREE {
            return Err(PolyError::DegreeCap { degree });
        }
        let mut out = Poly::zero(self.nvars);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        Ok(out)
    }

    /// Partial derivative with respect to `x_index`.
    pub fn derivative(&self, index: usize) -> Result<Poly, PolyError> {
        if index >= self.nvars {
            return Err(PolyError::VariableOutOfRange { index, nvars: self.nvars });
        }
        let mut out = Poly::zero(self.nvars);
        for (m, c) in &self.terms {
            let e = m.0[index];
            if e == 0 {
                continue;
            }
            let mut exps = m.0.clone();
            exps[index] -= 1;
            out.add_term(Monomial(exps), c * rat_int(e as i64));
        }
        Ok(out)
    }

    pub fn eval(&self, point: &[Rational]) -> Result<Rational, PolyError> {
        if point.len() != self.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, found: point.len() });
        }
        let mut acc = Rational::zero();
        for (m, c) in &self.terms {
            let mut t = c.clone();
            for (x, &e) in point.iter().zip(&m.0) {
                for _ in 0..e {
                    t *= x;
                }
            }
            acc += t;
        }
        Ok(acc)
    }

    /// Floating-point evaluation (coefficients rounded to `f64`).
    pub fn eval_f64(&self, point: &[f64]) -> f64 {
        self.terms.iter().map(|(m, c)| m.0.iter().zip(point).fold(rat_to_f64(c), |acc, (&e, &x)| acc * x.powi(e as i32))).sum()
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        for (i, (m, c)) in self.terms.iter().rev().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{c}")?;
            for (v, &e) in m.0.iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, "*x{}", v + 1)?,
                    _ => write!(f, "*x{}^{}", v + 1, e)?,
                }
            }
        }
        Ok(())
    }
}

/// First-order differential operator `Σ_i V^i ∂/∂x_i` with polynomial components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VectorField {
    components: Vec<Poly>,
}

impl VectorField {
    pub fn new(components: Vec<Poly>) -> Result<Self, PolyError> {
        let n = components.len();
        if let Some(p) = components.iter().find(|p| p.nvars() != n) {
            return Err(PolyError::DimensionMismatch { expected: n, found: p.nvars() });
        }
        Ok(VectorField { components })
    }

    pub fn zero(dim: usize) -> Self {
        VectorField { components: vec![Poly::zero(dim); dim] }
    }

    /// The coordinate field `∂/∂x_index`.
    pub fn coordinate(dim: usize, index: usize) -> Result<Self, PolyError> {
        if index >= dim {
            return Err(PolyError::VariableOutOfRange { index, nvars: dim });
        }
        let mut comps = vec![Poly::zero(dim); dim];
        comps[index] = Poly::one(dim);
        Ok(VectorField { components: comps })
    }

    pub fn ambient_dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Poly] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &Poly {
        &self.components[i]
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(Poly::is_zero)
    }

    pub fn degree(&self) -> u32 {
        self.components.iter().map(Poly::degree).max().unwrap_or(0)
    }

    fn check_dim(&self, other: &VectorField) -> Result<(), PolyError> {
        if self.ambient_dim() != other.ambient_dim() {
            return Err(PolyError::DimensionMismatch { expected: self.ambient_dim(), found: other.ambient_dim() });
        }
        Ok(())
    }

    /// `Σ_i V^i ∂f/∂x_i`.
    pub fn apply(&self, f: &Poly) -> Result<Poly, PolyError> {
        if f.nvars() != self.ambient_dim() {
            return Err(PolyError::DimensionMismatch { expected: self.ambient_dim(), found: f.nvars() });
        }
        let mut acc = Poly::zero(f.nvars());
        for (i, vi) in self.components.iter().enumerate() {
            if vi.is_zero() {
                continue;
            }
            let df = f.derivative(i)?;
            acc = acc.add(&vi.mul(&df)?)?;
        }
        Ok(acc)
    }

    /// Lie bracket `[V, W] = VW − WV`, component-wise `V(W^i) − W(V^i)`.
    pub fn bracket(&self, other: &VectorField) -> Result<VectorField, PolyError> {
        self.check_dim(other)?;
        let comps = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(vi, wi)| self.apply(wi)?.sub(&other.apply(vi)?))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(VectorField { components: comps })
    }

    /// Euclidean covariant derivative `∇_V W`, component-wise `V(W^i)`.
    pub fn covariant(&self, other: &VectorField) -> Result<VectorField, PolyError> {
        self.check_dim(other)?;
        let comps = other.components.iter().map(|wi| self.apply(wi)).collect::<Result<Vec<_>, _>>()?;
        Ok(VectorField { components: comps })
    }

    pub fn add(&self, other: &VectorField) -> Result<VectorField, PolyError> {
        self.check_dim(other)?;
        let comps = self.components.iter().zip(&other.components).map(|(a, b)| a.add(b)).collect::<Result<Vec<_>, _>>()?;
        Ok(VectorField { components: comps })
    }

    pub fn sub(&self, other: &VectorField) -> Result<VectorField, PolyError> {
        self.add(&other.scale(&-Rational::one()))
    }

    pub fn scale(&self, s: &Rational) -> VectorField {
        VectorField { components: self.components.iter().map(|p| p.scale(s)).collect() }
    }

    pub fn eval(&self, point: &[Rational]) -> Result<Vec<Rational>, PolyError> {
        self.components.iter().map(|p| p.eval(point)).collect()
    }

    pub fn eval_f64(&self, point: &[f64]) -> Vec<f64> {
        self.components.iter().map(|p| p.eval_f64(point)).collect()
    }
}

impl fmt::Display for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, p) in self.components.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, ")")
    }
}

/// Exact Gaussian elimination on a dense rational system `A c = b`.
///
/// Requires full column rank; returns `NoConstantDecomposition` when the
/// system is inconsistent.
fn solve_full_rank(mut a: Vec<Vec<Rational>>, mut b: Vec<Rational>, ncols: usize) -> Result<Vec<Rational>, PolyError> {
    let nrows = a.len();
    let mut pivot_row = 0;
    let mut pivots = Vec::with_capacity(ncols);
    for col in 0..ncols {
        let Some(sel) = (pivot_row..nrows).find(|&r| !a[r][col].is_zero()) else {
            return Err(PolyError::LinearlyDependentBasis);
        };
        a.swap(pivot_row, sel);
        b.swap(pivot_row, sel);
        let inv = a[pivot_row][col].recip();
        for c in col..ncols {
            a[pivot_row][c] *= &inv;
        }
        b[pivot_row] *= &inv;
        for r in 0..nrows {
            if r == pivot_row || a[r][col].is_zero() {
                continue;
            }
            let factor = a[r][col].clone();
            for c in col..ncols {
                let delta = &factor * &a[pivot_row][c];
                a[r][c] -= delta;
            }
            let delta = &factor * &b[pivot_row];
            b[r] -= delta;
        }
        pivots.push(pivot_row);
        pivot_row += 1;
    }
    if b[pivot_row..].iter().any(|v| !v.is_zero()) {
        return Err(PolyError::NoConstantDecomposition);
    }
    Ok(pivots.into_iter().map(|r| b[r].clone()).collect())
}

/// Finds the unique constants `c_l` with `W = Σ_l c_l Z_l`.
///
/// Each field is flattened into its vector of (component, monomial)
/// coefficients and the resulting linear system is solved exactly.
pub fn decompose_constant(w: &VectorField, basis: &[VectorField]) -> Result<Vec<Rational>, PolyError> {
    for z in basis {
        w.check_dim(z)?;
    }
    let mut coords: BTreeSet<(usize, Monomial)> = BTreeSet::new();
    for field in basis.iter().chain(std::iter::once(w)) {
        for (i, p) in field.components.iter().enumerate() {
            for (m, _) in p.terms() {
                coords.insert((i, m.clone()));
            }
        }
    }
    let ncols = basis.len();
    let mut a = Vec::with_capacity(coords.len());
    let mut b = Vec::with_capacity(coords.len());
    for (i, m) in &coords {
        a.push(basis.iter().map(|z| z.components[*i].coefficient(m.exponents())).collect());
        b.push(w.components[*i].coefficient(m.exponents()));
    }
    if coords.len() < ncols {
        return Err(PolyError::LinearlyDependentBasis);
    }
    solve_full_rank(a, b, ncols)
}

/// Constants `c_{kjl}` with `[Z_k, X_j] = Σ_l c_{kjl} Z_l`.
///
/// Indices are zero-based: `k, l < n`, `j < m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructureTensor {
    n: usize,
    m: usize,
    c: Vec<Rational>,
}

impl StructureTensor {
    pub fn zeros(n: usize, m: usize) -> Self {
        StructureTensor { n, m, c: vec![Rational::zero(); n * m * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    fn idx(&self, k: usize, j: usize, l: usize) -> usize {
        assert!(k < self.n && j < self.m && l < self.n, "structure index out of range");
        (k * self.m + j) * self.n + l
    }

    pub fn get(&self, k: usize, j: usize, l: usize) -> &Rational {
        &self.c[self.idx(k, j, l)]
    }

    pub fn set(&mut self, k: usize, j: usize, l: usize, v: Rational) {
        let i = self.idx(k, j, l);
        self.c[i] = v;
    }

    /// Non-zero entries as zero-based `(k, j, l, value)`.
    pub fn nonzero(&self) -> Vec<(usize, usize, usize, Rational)> {
        let mut out = Vec::new();
        for k in 0..self.n {
            for j in 0..self.m {
                for l in 0..self.n {
                    let v = self.get(k, j, l);
                    if !v.is_zero() {
                        out.push((k, j, l, v.clone()));
                    }
                }
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().all(Zero::is_zero)
    }

    pub fn max_abs(&self) -> Rational {
        self.c.iter().map(|v| v.abs()).max().unwrap_or_else(Rational::zero)
    }
}

/// Computes `c_{kjl}` for the family `fields` whose first `m` members are the generators.
pub fn structure_constants(fields: &[VectorField], m: usize) -> Result<StructureTensor, PolyError> {
    let n = fields.len();
    if m > n {
        return Err(PolyError::GeneratorCount { m, n });
    }
    let mut tensor = StructureTensor::zeros(n, m);
    for k in 0..n {
        for j in 0..m {
            let br = fields[k].bracket(&fields[j])?;
            let coeffs = decompose_constant(&br, fields).map_err(|e| match e {
                PolyError::NoConstantDecomposition => PolyError::NonConstantStructure { k: k + 1, j: j + 1 },
                other => other,
            })?;
            for (l, c) in coeffs.into_iter().enumerate() {
                tensor.set(k, j, l, c);
            }
        }
    }
    Ok(tensor)
}

/// Reconstructs `Σ_l c_{kjl} Z_l` for one `(k, j)` pair.
pub fn reconstruct(tensor: &StructureTensor, fields: &[VectorField], k: usize, j: usize) -> Result<VectorField, PolyError> {
    let dim = fields.first().map(VectorField::ambient_dim).unwrap_or(0);
    let mut acc = VectorField::zero(dim);
    for (l, z) in fields.iter().enumerate() {
        let c = tensor.get(k, j, l);
        if !c.is_zero() {
            acc = acc.add(&z.scale(c))?;
        }
    }
    Ok(acc)
}

/// Solves `[Z_k, D] = λ_k Z_k` for each field and checks `λ_k > 0`.
pub fn dilation_eigenvalues(fields: &[VectorField], dilation: &VectorField) -> Result<Vec<Rational>, PolyError> {
    let mut out = Vec::with_capacity(fields.len());
    for (k, z) in fields.iter().enumerate() {
        let br = z.bracket(dilation)?;
        let lambda = proportionality(&br, z).ok_or(PolyError::NotEigenvector { k: k + 1 })?;
        if !lambda.is_positive() {
            return Err(PolyError::NonPositiveEigenvalue { k: k + 1, value: lambda.to_string() });
        }
        out.push(lambda);
    }
    Ok(out)
}

/// The rational `λ` with `w = λ z`, if one exists (`z` non-zero).
fn proportionality(w: &VectorField, z: &VectorField) -> Option<Rational> {
    let mut lambda: Option<Rational> = None;
    for (wi, zi) in w.components.iter().zip(&z.components) {
        for (m, zc) in zi.terms() {
            let ratio = wi.coefficient(m.exponents()) / zc;
            match &lambda {
                None => lambda = Some(ratio),
                Some(l) if *l != ratio => return None,
                _ => {}
            }
        }
    }
    let lambda = lambda?;
    (z.scale(&lambda) == *w).then_some(lambda)
}

/// JSON term record: `coefficient · Π x_i^{exponents[i]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermRecord {
    pub exponents: Vec<u32>,
    pub num: i64,
    pub den: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("coefficient {0} does not fit in 64-bit numerator/denominator")]
    Overflow(String),
    #[error("zero denominator in term record")]
    ZeroDenominator,
    #[error(transparent)]
    Poly(#[from] PolyError),
}

pub fn rational_record(r: &Rational) -> Result<(i64, i64), RecordError> {
    let num = r.numer().to_i64().ok_or_else(|| RecordError::Overflow(r.to_string()))?;
    let den = r.denom().to_i64().ok_or_else(|| RecordError::Overflow(r.to_string()))?;
    Ok((num, den))
}

pub fn rational_from_record(num: i64, den: i64) -> Result<Rational, RecordError> {
    if den == 0 {
        return Err(RecordError::ZeroDenominator);
    }
    Ok(rat(num, den))
}

impl Poly {
    /// Term records in graded-lexicographic order.
    pub fn to_records(&self) -> Result<Vec<TermRecord>, RecordError> {
        self.terms
            .iter()
            .map(|(m, c)| {
                let (num, den) = rational_record(c)?;
                Ok(TermRecord { exponents: m.0.clone(), num, den })
            })
            .collect()
    }

    pub fn from_records(nvars: usize, records: &[TermRecord]) -> Result<Poly, RecordError> {
        let terms = records
            .iter()
            .map(|t| Ok((t.exponents.clone(), rational_from_record(t.num, t.den)?)))
            .collect::<Result<Vec<_>, RecordError>>()?;
        Ok(Poly::from_terms(nvars, terms)?)
    }
}

impl VectorField {
    pub fn to_records(&self) -> Result<Vec<Vec<TermRecord>>, RecordError> {
        self.components.iter().map(Poly::to_records).collect()
    }

    pub fn from_records(records: &[Vec<TermRecord>]) -> Result<VectorField, RecordError> {
        let n = records.len();
        let comps = records.iter().map(|r| Poly::from_records(n, r)).collect::<Result<Vec<_>, _>>()?;
        Ok(VectorField::new(comps)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(nvars: usize, terms: &[(&[u32], i64, i64)]) -> Poly {
        Poly::from_terms(nvars, terms.iter().map(|(e, n, d)| (e.to_vec(), rat(*n, *d)))).unwrap()
    }

    fn field(comps: Vec<Poly>) -> VectorField {
        VectorField::new(comps).unwrap()
    }

    fn heis_x1() -> VectorField {
        field(vec![p(3, &[(&[0, 0, 0], 1, 1)]), Poly::zero(3), p(3, &[(&[0, 1, 0], -1, 2)])])
    }

    fn heis_x2() -> VectorField {
        field(vec![Poly::zero(3), p(3, &[(&[0, 0, 0], 1, 1)]), p(3, &[(&[1, 0, 0], 1, 2)])])
    }

    #[test]
    fn apply_coordinate_field() {
        let dx = VectorField::coordinate(2, 0).unwrap();
        let f = p(2, &[(&[2, 1], 1, 1)]);
        assert_eq!(dx.apply(&f).unwrap(), p(2, &[(&[1, 1], 2, 1)]));
    }

    #[test]
    fn apply_heisenberg_x1_to_z() {
        let z = Poly::var(3, 2).unwrap();
        assert_eq!(heis_x1().apply(&z).unwrap(), p(3, &[(&[0, 1, 0], -1, 2)]));
    }

    #[test]
    fn apply_grusin_x2() {
        let x2 = field(vec![Poly::zero(2), Poly::var(2, 0).unwrap()]);
        let f = p(2, &[(&[0, 2], 1, 1)]);
        assert_eq!(x2.apply(&f).unwrap(), p(2, &[(&[1, 1], 2, 1)]));
    }

    #[test]
    fn apply_rejects_dimension_mismatch() {
        let f = Poly::one(2);
        assert!(matches!(heis_x1().apply(&f), Err(PolyError::DimensionMismatch { .. })));
    }

    #[test]
    fn heisenberg_bracket() {
        let br = heis_x1().bracket(&heis_x2()).unwrap();
        assert_eq!(br, VectorField::coordinate(3, 2).unwrap());
    }

    #[test]
    fn self_bracket_vanishes() {
        assert!(heis_x1().bracket(&heis_x1()).unwrap().is_zero());
    }

    #[test]
    fn martinet_bracket() {
        let x1 = field(vec![Poly::one(3), Poly::zero(3), p(3, &[(&[0, 2, 0], -1, 1)])]);
        let x2 = VectorField::coordinate(3, 1).unwrap();
        let br = x1.bracket(&x2).unwrap();
        assert_eq!(br, field(vec![Poly::zero(3), Poly::zero(3), p(3, &[(&[0, 1, 0], 2, 1)])]));
    }

    #[test]
    fn decompose_heisenberg() {
        let z3 = VectorField::coordinate(3, 2).unwrap();
        let basis = [heis_x1(), heis_x2(), z3];
        let w = basis[0].bracket(&basis[1]).unwrap();
        assert_eq!(decompose_constant(&w, &basis).unwrap(), vec![rat_int(0), rat_int(0), rat_int(1)]);
        let zero = VectorField::zero(3);
        assert!(decompose_constant(&zero, &basis).unwrap().iter().all(Zero::is_zero));
    }

    #[test]
    fn decompose_martinet_z3_x2() {
        let x1 = field(vec![Poly::one(3), Poly::zero(3), p(3, &[(&[0, 2, 0], -1, 1)])]);
        let x2 = VectorField::coordinate(3, 1).unwrap();
        let z3 = x1.bracket(&x2).unwrap();
        let z4 = z3.bracket(&x2).unwrap();
        let basis = [x1, x2.clone(), z3.clone(), z4];
        let c = decompose_constant(&z3.bracket(&x2).unwrap(), &basis).unwrap();
        assert_eq!(c, vec![rat_int(0), rat_int(0), rat_int(0), rat_int(1)]);
    }

    #[test]
    fn decompose_detects_non_constant() {
        // x ∂y is not a constant combination of ∂x, ∂y
        let basis = [VectorField::coordinate(2, 0).unwrap(), VectorField::coordinate(2, 1).unwrap()];
        let w = field(vec![Poly::zero(2), Poly::var(2, 0).unwrap()]);
        assert_eq!(decompose_constant(&w, &basis), Err(PolyError::NoConstantDecomposition));
    }

    #[test]
    fn decompose_detects_dependent_basis() {
        let dx = VectorField::coordinate(2, 0).unwrap();
        let basis = [dx.clone(), dx.scale(&rat(2, 1))];
        assert_eq!(decompose_constant(&dx, &basis), Err(PolyError::LinearlyDependentBasis));
    }

    #[test]
    fn structure_failure_reports_witness() {
        // X1 = ∂x, X2 = x ∂y without ∂y in the family: [X1, X2] = ∂y is missing
        let fields = [VectorField::coordinate(2, 0).unwrap(), field(vec![Poly::zero(2), Poly::var(2, 0).unwrap()])];
        assert_eq!(structure_constants(&fields, 2), Err(PolyError::NonConstantStructure { k: 1, j: 2 }));
    }

    #[test]
    fn eigenvalue_failures() {
        let dx = VectorField::coordinate(1, 0).unwrap();
        // D = -x ∂x gives [∂x, D] = -∂x
        let d = field(vec![p(1, &[(&[1], -1, 1)])]);
        assert!(matches!(dilation_eigenvalues(std::slice::from_ref(&dx), &d), Err(PolyError::NonPositiveEigenvalue { k: 1, .. })));
        // D = x^2 ∂x gives [∂x, D] = 2x ∂x
        let d = field(vec![p(1, &[(&[2], 1, 1)])]);
        assert_eq!(dilation_eigenvalues(&[dx], &d), Err(PolyError::NotEigenvector { k: 1 }));
    }

    #[test]
    fn degree_cap_enforced() {
        let a = p(1, &[(&[9], 1, 1)]);
        assert_eq!(a.mul(&a), Err(PolyError::DegreeCap { degree: 18 }));
        assert!(Poly::from_terms(1, vec![(vec![17], rat_int(1))]).is_err());
    }

    #[test]
    fn records_round_trip_in_grlex_order() {
        let f = p(2, &[(&[0, 2], 3, 4), (&[1, 0], -1, 1), (&[0, 0], 5, 1)]);
        let recs = f.to_records().unwrap();
        let degrees: Vec<u32> = recs.iter().map(|r| r.exponents.iter().sum()).collect();
        assert_eq!(degrees, vec![0, 1, 2]);
        assert_eq!(Poly::from_records(2, &recs).unwrap(), f);
    }

    fn arb_poly(nvars: usize) -> impl Strategy<Value = Poly> {
        prop::collection::vec((prop::collection::vec(0u32..=2, nvars), -4i64..=4, 1i64..=3), 0..4).prop_map(move |ts| {
            let ts = ts.into_iter().filter(|(e, _, _)| e.iter().sum::<u32>() <= 3).map(|(e, n, d)| (e, rat(n, d)));
            Poly::from_terms(nvars, ts).unwrap()
        })
    }

    fn arb_field() -> impl Strategy<Value = VectorField> {
        prop::collection::vec(arb_poly(3), 3).prop_map(|c| VectorField::new(c).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn bracket_is_antisymmetric(v in arb_field(), w in arb_field()) {
            let s = v.bracket(&w).unwrap().add(&w.bracket(&v).unwrap()).unwrap();
            prop_assert!(s.is_zero());
        }

        #[test]
        fn jacobi_identity(u in arb_field(), v in arb_field(), w in arb_field()) {
            let a = u.bracket(&v.bracket(&w).unwrap()).unwrap();
            let b = v.bracket(&w.bracket(&u).unwrap()).unwrap();
            let c = w.bracket(&u.bracket(&v).unwrap()).unwrap();
            prop_assert!(a.add(&b).unwrap().add(&c).unwrap().is_zero());
        }

        #[test]
        fn decomposition_reconstructs(c0 in -5i64..5, c1 in -5i64..5, c2 in -5i64..5) {
            let basis = [heis_x1(), heis_x2(), VectorField::coordinate(3, 2).unwrap()];
            let w = basis[0].scale(&rat_int(c0)).add(&basis[1].scale(&rat_int(c1))).unwrap()
                .add(&basis[2].scale(&rat_int(c2))).unwrap();
            prop_assert_eq!(decompose_constant(&w, &basis).unwrap(), vec![rat_int(c0), rat_int(c1), rat_int(c2)]);
        }
    }
}
