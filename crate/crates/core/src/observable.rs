//! Analytic observables `f(x_1..x_N)` as expression trees.
//!
//! Trees are closed under differentiation, so `Z_k f` and `Γ(f)` are built
//! symbolically and evaluated pathwise on any [`Scalar`].

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

use crate::polyfield::{rat_to_f64, Poly, VectorField};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// 0-based coordinate index.
    Var(usize),
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Pow(Box<Expr>, u32),
    Tanh(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    /// `u ↦ e^{−u}`
    ExpNeg(Box<Expr>),
}

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("variable x{index} out of range for {nvars} coordinates")]
    VariableOutOfRange { index: usize, nvars: usize },
}

impl Expr {
    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn sum(items: Vec<Expr>) -> Expr {
        let mut c = 0.0;
        let mut rest = Vec::new();
        for e in items {
            match e {
                Expr::Const(v) => c += v,
                Expr::Add(inner) => {
                    for i in inner {
                        match i {
                            Expr::Const(v) => c += v,
                            other => rest.push(other),
                        }
                    }
                }
                other => rest.push(other),
            }
        }
        if c != 0.0 {
            rest.push(Expr::Const(c));
        }
        match rest.len() {
            0 => Expr::Const(0.0),
            1 => rest.pop().expect("one element"),
            _ => Expr::Add(rest),
        }
    }

    pub fn product(items: Vec<Expr>) -> Expr {
        let mut c = 1.0;
        let mut rest = Vec::new();
        for e in items {
            match e {
                Expr::Const(v) => c *= v,
                Expr::Mul(inner) => {
                    for i in inner {
                        match i {
                            Expr::Const(v) => c *= v,
                            other => rest.push(other),
                        }
                    }
                }
                other => rest.push(other),
            }
        }
        if c == 0.0 {
            return Expr::Const(0.0);
        }
        if c != 1.0 {
            rest.insert(0, Expr::Const(c));
        }
        match rest.len() {
            0 => Expr::Const(1.0),
            1 => rest.pop().expect("one element"),
            _ => Expr::Mul(rest),
        }
    }

    pub fn scale(self, c: f64) -> Expr {
        Expr::product(vec![Expr::Const(c), self])
    }

    pub fn pow(self, n: u32) -> Expr {
        match (n, &self) {
            (0, _) => Expr::Const(1.0),
            (1, _) => self,
            (_, Expr::Const(v)) => Expr::Const(v.powi(n as i32)),
            _ => Expr::Pow(Box::new(self), n),
        }
    }

    pub fn tanh(self) -> Expr {
        match self {
            Expr::Const(v) => Expr::Const(v.tanh()),
            e => Expr::Tanh(Box::new(e)),
        }
    }

    pub fn sin(self) -> Expr {
        match self {
            Expr::Const(v) => Expr::Const(v.sin()),
            e => Expr::Sin(Box::new(e)),
        }
    }

    pub fn cos(self) -> Expr {
        match self {
            Expr::Const(v) => Expr::Const(v.cos()),
            e => Expr::Cos(Box::new(e)),
        }
    }

    pub fn exp_neg(self) -> Expr {
        match self {
            Expr::Const(v) => Expr::Const((-v).exp()),
            e => Expr::ExpNeg(Box::new(e)),
        }
    }

    /// Largest variable index plus one (0 for constants).
    /// Renames `x_i` to `x_{i+offset}`.
    pub fn shift_vars(&self, offset: usize) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => Expr::Var(i + offset),
            Expr::Add(v) => Expr::Add(v.iter().map(|e| e.shift_vars(offset)).collect()),
            Expr::Mul(v) => Expr::Mul(v.iter().map(|e| e.shift_vars(offset)).collect()),
            Expr::Pow(e, n) => Expr::Pow(Box::new(e.shift_vars(offset)), *n),
            Expr::Tanh(e) => Expr::Tanh(Box::new(e.shift_vars(offset))),
            Expr::Sin(e) => Expr::Sin(Box::new(e.shift_vars(offset))),
            Expr::Cos(e) => Expr::Cos(Box::new(e.shift_vars(offset))),
            Expr::ExpNeg(e) => Expr::ExpNeg(Box::new(e.shift_vars(offset))),
        }
    }

    pub fn min_vars(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Add(v) | Expr::Mul(v) => v.iter().map(Expr::min_vars).max().unwrap_or(0),
            Expr::Pow(e, _) | Expr::Tanh(e) | Expr::Sin(e) | Expr::Cos(e) | Expr::ExpNeg(e) => e.min_vars(),
        }
    }

    /// `∂/∂x_i`.
    pub fn derivative(&self, i: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(j) => Expr::Const(if *j == i { 1.0 } else { 0.0 }),
            Expr::Add(v) => Expr::sum(v.iter().map(|e| e.derivative(i)).collect()),
            Expr::Mul(v) => {
                let mut terms = Vec::new();
                for a in 0..v.len() {
                    let da = v[a].derivative(i);
                    if da.is_zero() {
                        continue;
                    }
                    let mut factors: Vec<Expr> = v.iter().enumerate().filter(|(b, _)| *b != a).map(|(_, e)| e.clone()).collect();
                    factors.push(da);
                    terms.push(Expr::product(factors));
                }
                Expr::sum(terms)
            }
            Expr::Pow(e, n) => {
                let de = e.derivative(i);
                if de.is_zero() {
                    return Expr::Const(0.0);
                }
                Expr::product(vec![Expr::Const(*n as f64), e.as_ref().clone().pow(n - 1), de])
            }
            Expr::Tanh(e) => {
                let de = e.derivative(i);
                if de.is_zero() {
                    return Expr::Const(0.0);
                }
                let sech2 = Expr::Const(1.0) - self.clone().pow(2);
                Expr::product(vec![sech2, de])
            }
            Expr::Sin(e) => {
                let de = e.derivative(i);
                if de.is_zero() {
                    return Expr::Const(0.0);
                }
                Expr::product(vec![e.as_ref().clone().cos(), de])
            }
            Expr::Cos(e) => {
                let de = e.derivative(i);
                if de.is_zero() {
                    return Expr::Const(0.0);
                }
                Expr::product(vec![Expr::Const(-1.0), e.as_ref().clone().sin(), de])
            }
            Expr::ExpNeg(e) => {
                let de = e.derivative(i);
                if de.is_zero() {
                    return Expr::Const(0.0);
                }
                Expr::product(vec![Expr::Const(-1.0), self.clone(), de])
            }
        }
    }

    /// `V f = Σ_a V^a ∂_a f`.
    pub fn apply_field(&self, v: &VectorField) -> Expr {
        let terms = (0..v.ambient_dim())
            .filter(|&a| !v.component(a).is_zero())
            .map(|a| Expr::from_poly(v.component(a)) * self.derivative(a))
            .collect();
        Expr::sum(terms)
    }

    /// `Γ(f) = Σ_k |Z_k f|²` for the given family.
    pub fn gamma(&self, fields: &[VectorField]) -> Expr {
        Expr::sum(fields.iter().map(|z| self.apply_field(z).pow(2)).collect())
    }

    pub fn from_poly(p: &Poly) -> Expr {
        let terms = p
            .terms()
            .map(|(mono, c)| {
                let mut f = vec![Expr::Const(rat_to_f64(c))];
                for (i, &e) in mono.exponents().iter().enumerate() {
                    if e > 0 {
                        f.push(Expr::Var(i).pow(e));
                    }
                }
                Expr::product(f)
            })
            .collect();
        Expr::sum(terms)
    }

    pub fn eval<S: Scalar>(&self, x: &[S]) -> S {
        match self {
            Expr::Const(v) => S::cst(*v),
            Expr::Var(i) => x[*i],
            Expr::Add(v) => {
                let mut s = v[0].eval(x);
                for e in &v[1..] {
                    s += e.eval(x);
                }
                s
            }
            Expr::Mul(v) => {
                let mut s = v[0].eval(x);
                for e in &v[1..] {
                    s *= e.eval(x);
                }
                s
            }
            Expr::Pow(e, n) => e.eval(x).powi(*n as i32),
            Expr::Tanh(e) => e.eval(x).tanh(),
            Expr::Sin(e) => e.eval(x).sin(),
            Expr::Cos(e) => e.eval(x).cos(),
            Expr::ExpNeg(e) => (-e.eval(x)).exp(),
        }
    }

    /// Interval enclosure of the range over all of space.
    pub fn range(&self) -> Interval {
        match self {
            Expr::Const(v) => Interval::point(*v),
            Expr::Var(_) => Interval::REAL,
            Expr::Add(v) => v.iter().map(Expr::range).fold(Interval::point(0.0), Interval::add),
            Expr::Mul(v) => v.iter().map(Expr::range).fold(Interval::point(1.0), Interval::mul),
            Expr::Pow(e, n) => e.range().powi(*n),
            Expr::Tanh(e) => {
                let r = e.range();
                Interval::new(r.lo.tanh(), r.hi.tanh())
            }
            Expr::Sin(e) | Expr::Cos(e) => match e.as_const() {
                Some(_) => Interval::point(self.eval(&[0.0f64; 0])),
                None => Interval::new(-1.0, 1.0),
            },
            Expr::ExpNeg(e) => {
                let r = e.range();
                Interval::new((-r.hi).exp(), (-r.lo).exp())
            }
        }
    }

    /// Certified `sup |f|` when the interval enclosure is finite.
    pub fn sup_bound(&self) -> Option<f64> {
        let r = self.range();
        let s = r.lo.abs().max(r.hi.abs());
        s.is_finite().then_some(s)
    }

    pub fn is_bounded(&self) -> bool {
        self.sup_bound().is_some()
    }

    /// Parses `tanh(x1)*sin(x3) + 0.5*x2^2`; `x`, `y`, `z` alias `x1..x3`.
    pub fn parse(src: &str, nvars: usize) -> Result<Expr, ExprError> {
        let mut p = Parser { s: src.as_bytes(), pos: 0, nvars };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.s.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }
}

impl Add for Expr {
    type Output = Expr;
    fn add(self, o: Expr) -> Expr {
        Expr::sum(vec![self, o])
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, o: Expr) -> Expr {
        Expr::product(vec![self, o])
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        self.scale(-1.0)
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, o: Expr) -> Expr {
        self + (-o)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) => {
                if *v < 0.0 {
                    write!(f, "({v})")
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Add(v) => {
                write!(f, "(")?;
                for (i, e) in v.iter().enumerate() {
                    if i > 0 {
                        write!(f, " + ")?;
                    }
                    write!(f, "{e}")?;
                }
                write!(f, ")")
            }
            Expr::Mul(v) => {
                for (i, e) in v.iter().enumerate() {
                    if i > 0 {
                        write!(f, "*")?;
                    }
                    write!(f, "{e}")?;
                }
                Ok(())
            }
            Expr::Pow(e, n) => match e.as_ref() {
                Expr::Var(_) | Expr::Const(_) => write!(f, "{e}^{n}"),
                _ => write!(f, "({e})^{n}"),
            },
            Expr::Tanh(e) => write!(f, "tanh({e})"),
            Expr::Sin(e) => write!(f, "sin({e})"),
            Expr::Cos(e) => write!(f, "cos({e})"),
            Expr::ExpNeg(e) => write!(f, "expneg({e})"),
        }
    }
}

/// Closed interval with possibly infinite ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL: Interval = Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY };

    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    fn is_zero(&self) -> bool {
        self.lo == 0.0 && self.hi == 0.0
    }

    pub fn powi(self, n: u32) -> Interval {
        if n == 0 {
            return Interval::point(1.0);
        }
        let a = self.lo.powi(n as i32);
        let b = self.hi.powi(n as i32);
        if n.is_multiple_of(2) {
            let lo = if self.lo <= 0.0 && self.hi >= 0.0 { 0.0 } else { a.min(b) };
            Interval::new(lo, a.max(b))
        } else {
            Interval::new(a, b)
        }
    }
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, o: Interval) -> Interval {
        Interval::new(self.lo + o.lo, self.hi + o.hi)
    }
}

/// Products with a zero end are zero even against an infinite end.
impl Mul for Interval {
    type Output = Interval;
    fn mul(self, o: Interval) -> Interval {
        if self.is_zero() || o.is_zero() {
            return Interval::point(0.0);
        }
        let prod = |a: f64, b: f64| if a == 0.0 || b == 0.0 { 0.0 } else { a * b };
        let c = [prod(self.lo, o.lo), prod(self.lo, o.hi), prod(self.hi, o.lo), prod(self.hi, o.hi)];
        Interval::new(c.iter().cloned().fold(f64::INFINITY, f64::min), c.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    nvars: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> ExprError {
        ExprError::Parse { pos: self.pos, msg: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut terms = vec![self.term()?];
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let t = self.term()?;
            terms.push(if c == b'-' { -t } else { t });
        }
        Ok(Expr::sum(terms))
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut f = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let g = self.unary()?;
            f = if c == b'*' {
                f * g
            } else {
                match g.as_const() {
                    Some(v) if v != 0.0 => f.scale(1.0 / v),
                    _ => return Err(self.err("division is only allowed by a non-zero constant")),
                }
            };
        }
        Ok(f)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(-self.unary()?)
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            let n: u32 = std::str::from_utf8(&self.s[start..self.pos])
                .ok()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| self.err("expected a non-negative integer exponent"))?;
            return Ok(base.pow(n));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err("expected `)`"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let start = self.pos;
                while self.pos < self.s.len() {
                    let ch = self.s[self.pos];
                    let exp_sign = (ch == b'-' || ch == b'+') && matches!(self.s[self.pos - 1], b'e' | b'E');
                    if ch.is_ascii_digit() || ch == b'.' || ch == b'e' || ch == b'E' || exp_sign {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                std::str::from_utf8(&self.s[start..self.pos])
                    .ok()
                    .and_then(|t| t.parse::<f64>().ok())
                    .map(Expr::Const)
                    .ok_or_else(|| ExprError::Parse { pos: start, msg: "malformed number".into() })
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.s.len() && self.s[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.s[start..self.pos]).expect("ascii");
                if self.peek() == Some(b'(') {
                    self.pos += 1;
                    let arg = self.expr()?;
                    if self.peek() != Some(b')') {
                        return Err(self.err("expected `)`"));
                    }
                    self.pos += 1;
                    return match name {
                        "tanh" => Ok(arg.tanh()),
                        "sin" => Ok(arg.sin()),
                        "cos" => Ok(arg.cos()),
                        "exp" => Ok((-arg).exp_neg()),
                        "expneg" => Ok(arg.exp_neg()),
                        _ => Err(ExprError::Parse { pos: start, msg: format!("unknown function `{name}`") }),
                    };
                }
                let index = match name {
                    "x" => 0,
                    "y" => 1,
                    "z" => 2,
                    _ => name
                        .strip_prefix('x')
                        .and_then(|d| d.parse::<usize>().ok())
                        .filter(|&d| d >= 1)
                        .map(|d| d - 1)
                        .ok_or_else(|| ExprError::Parse { pos: start, msg: format!("unknown identifier `{name}`") })?,
                };
                if index >= self.nvars {
                    return Err(ExprError::VariableOutOfRange { index: index + 1, nvars: self.nvars });
                }
                Ok(Expr::Var(index))
            }
            _ => Err(self.err("expected a number, variable, function or `(`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry;
    use crate::scalar::Dual;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sample() -> Expr {
        Expr::parse("sin(x1)*tanh(x3) + 0.5*x2^2 - exp(-x1*x1)", 3).unwrap()
    }

    #[test]
    fn parse_and_eval() {
        let e = sample();
        let x = [0.3, -0.7, 1.1];
        let want = 0.3f64.sin() * 1.1f64.tanh() + 0.5 * 0.49 - (-0.09f64).exp();
        assert_relative_eq!(e.eval(&x), want, epsilon = 1e-15);
        assert_eq!(Expr::parse("x + y + z", 3).unwrap().eval(&[1.0, 2.0, 4.0]), 7.0);
        assert_eq!(Expr::parse("x1/4", 1).unwrap().eval(&[2.0]), 0.5);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(Expr::parse("x4", 3), Err(ExprError::VariableOutOfRange { .. })));
        assert!(matches!(Expr::parse("foo(x1)", 3), Err(ExprError::Parse { .. })));
        assert!(matches!(Expr::parse("x1/x2", 3), Err(ExprError::Parse { .. })));
        assert!(matches!(Expr::parse("(x1", 3), Err(ExprError::Parse { .. })));
        assert!(matches!(Expr::parse("x1 x2", 3), Err(ExprError::Parse { .. })));
    }

    #[test]
    fn display_round_trips() {
        let e = sample();
        let back = Expr::parse(&e.to_string(), 3).unwrap();
        let x = [0.2, 0.9, -0.4];
        assert_relative_eq!(back.eval(&x), e.eval(&x), epsilon = 1e-14);
    }

    #[test]
    fn derivative_matches_dual_numbers() {
        let e = sample();
        let x = [0.3, -0.7, 1.1];
        for i in 0..3 {
            let d: Vec<Dual<f64>> = (0..3).map(|j| Dual::new(x[j], if i == j { 1.0 } else { 0.0 })).collect();
            assert_relative_eq!(e.derivative(i).eval(&x), e.eval(&d).eps, epsilon = 1e-13);
        }
    }

    #[test]
    fn field_application_on_heisenberg() {
        let h = geometry::heisenberg();
        let z = Expr::var(2);
        assert_eq!(z.apply_field(&h.fields()[2]), Expr::Const(1.0));
        // X_1 z = -y/2
        let x = [0.1, 0.6, -0.2];
        assert_relative_eq!(z.apply_field(&h.fields()[0]).eval(&x), -0.3, epsilon = 1e-15);
        // Γ(x) = 1
        assert_relative_eq!(Expr::var(0).gamma(h.fields()).eval(&x), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn bounds() {
        assert_eq!(Expr::parse("tanh(x1)", 1).unwrap().sup_bound(), Some(1.0));
        assert_eq!(Expr::parse("3*sin(x1*x2)", 2).unwrap().sup_bound(), Some(3.0));
        assert_eq!(Expr::parse("x1", 1).unwrap().sup_bound(), None);
        assert_eq!(Expr::parse("expneg(x1^2)", 1).unwrap().sup_bound(), Some(1.0));
        assert!(!Expr::parse("exp(x1)", 1).unwrap().is_bounded());
        // Γ(tanh x) = sech⁴ bounded on the line
        let g = Expr::parse("tanh(x1)", 1).unwrap().gamma(geometry::abelian(1).fields());
        assert!(g.sup_bound().unwrap() <= 1.0);
    }

    proptest! {
        #[test]
        fn sup_bound_dominates_samples(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let e = Expr::parse("2*tanh(x1)*cos(x2) + sin(x1)^2 - expneg(x2^2)", 2).unwrap();
            let s = e.sup_bound().unwrap();
            prop_assert!(e.eval(&[a, b]).abs() <= s + 1e-12);
        }
    }
}
