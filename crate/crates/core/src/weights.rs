//! Weight functions `phi`, their text syntax, psh certification by
//! construction, and the numeric sub-mean-value test.
//!
//! Variables are laid out as `(t_1..t_r, z_1..z_n)`: base coordinates first,
//! then fiber coordinates. On a plain domain `r = 0`. In the text syntax `w`
//! is an alias for `z`, and a bare `z`, `w` or `t` means index 1.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::Domain;
use crate::error::{LabError, Result};
use crate::poly::Poly;
use crate::scalar::{abs2, cabs, cis, norm, Cx, Real};

/// Default clamp `Phi_max`: values below `-Phi_max` are clamped.
pub const DEFAULT_CLAMP: f64 = 1e3;

/// Variable layout of a weight: `base` t-variables followed by `fiber` z-variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarLayout {
    pub base: usize,
    pub fiber: usize,
}

impl VarLayout {
    pub fn domain(n: usize) -> Self {
        VarLayout { base: 0, fiber: n }
    }

    pub fn family(r: usize, n: usize) -> Self {
        VarLayout { base: r, fiber: n }
    }

    pub fn total(&self) -> usize {
        self.base + self.fiber
    }

    pub fn fiber_range(&self) -> std::ops::Range<usize> {
        self.base..self.base + self.fiber
    }
}

/// Expression tree for a weight. Polynomials live in the layout's variables.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightExpr<T: Real = f64> {
    Const(T),
    /// `Re p` for a holomorphic polynomial `p` (pluriharmonic).
    Re(Poly<T>),
    /// `|p|^2`.
    Abs2(Poly<T>),
    /// `c log|p|`.
    LogAbs { coef: T, poly: Poly<T> },
    /// `log(|p_1|^2 + ... + |p_k|^2)`.
    LogSumAbs2(Vec<Poly<T>>),
    /// Linear combination; negative coefficients on non-harmonic terms are
    /// the escape hatch that drops certification.
    Sum(Vec<(T, WeightExpr<T>)>),
    Max(Vec<WeightExpr<T>>),
    /// `inner(map_1(x), ..., map_k(x))`; `inner` is written in `k` variables.
    Pullback { inner: Box<WeightExpr<T>>, map: Vec<Poly<T>> },
}

impl<T: Real> WeightExpr<T> {
    /// Raw value; may be `-inf` at zeros of logarithmic terms.
    pub fn eval(&self, x: &[Cx<T>]) -> T {
        match self {
            WeightExpr::Const(c) => *c,
            WeightExpr::Re(p) => p.eval(x).re,
            WeightExpr::Abs2(p) => abs2(p.eval(x)),
            WeightExpr::LogAbs { coef, poly } => {
                let a = cabs(poly.eval(x));
                if *coef == T::zero() {
                    T::zero()
                } else if a == T::zero() {
                    if *coef > T::zero() {
                        T::neg_infinity()
                    } else {
                        T::infinity()
                    }
                } else {
                    *coef * a.ln()
                }
            }
            WeightExpr::LogSumAbs2(ps) => {
                let s = ps.iter().fold(T::zero(), |acc, p| acc + abs2(p.eval(x)));
                if s == T::zero() {
                    T::neg_infinity()
                } else {
                    s.ln()
                }
            }
            WeightExpr::Sum(terms) => {
                let mut acc = T::zero();
                for (c, e) in terms {
                    if *c == T::zero() {
                        continue;
                    }
                    acc += *c * e.eval(x);
                }
                acc
            }
            WeightExpr::Max(es) => es.iter().map(|e| e.eval(x)).fold(T::neg_infinity(), |a, b| a.max(b)),
            WeightExpr::Pullback { inner, map } => {
                let y: Vec<Cx<T>> = map.iter().map(|p| p.eval(x)).collect();
                inner.eval(&y)
            }
        }
    }

    fn is_harmonic(&self) -> bool {
        match self {
            WeightExpr::Const(_) | WeightExpr::Re(_) => true,
            WeightExpr::Sum(ts) => ts.iter().all(|(_, e)| e.is_harmonic()),
            WeightExpr::Pullback { inner, .. } => inner.is_harmonic(),
            _ => false,
        }
    }

    /// Maps every variable `i` to `map[i]` in a space of `new_nvars` variables.
    pub fn remap_vars(&self, new_nvars: usize, map: &[usize]) -> Self {
        let rp = |p: &Poly<T>| p.remap(new_nvars, map);
        match self {
            WeightExpr::Const(c) => WeightExpr::Const(*c),
            WeightExpr::Re(p) => WeightExpr::Re(rp(p)),
            WeightExpr::Abs2(p) => WeightExpr::Abs2(rp(p)),
            WeightExpr::LogAbs { coef, poly } => WeightExpr::LogAbs { coef: *coef, poly: rp(poly) },
            WeightExpr::LogSumAbs2(ps) => WeightExpr::LogSumAbs2(ps.iter().map(rp).collect()),
            WeightExpr::Sum(ts) => WeightExpr::Sum(ts.iter().map(|(c, e)| (*c, e.remap_vars(new_nvars, map))).collect()),
            WeightExpr::Max(es) => WeightExpr::Max(es.iter().map(|e| e.remap_vars(new_nvars, map)).collect()),
            WeightExpr::Pullback { inner, map: m } => {
                WeightExpr::Pullback { inner: inner.clone(), map: m.iter().map(rp).collect() }
            }
        }
    }

    /// Syntactic test: every polynomial touching the fiber variables does so
    /// through a single shared fiber monomial inside a modulus.
    fn fiber_rotation_invariant(&self, fiber: std::ops::Range<usize>) -> bool {
        let modulus_ok = |p: &Poly<T>| !p.depends_on(fiber.clone()) || p.shared_exponents(fiber.clone()).is_some();
        match self {
            WeightExpr::Const(_) => true,
            WeightExpr::Re(p) => !p.depends_on(fiber.clone()),
            WeightExpr::Abs2(p) | WeightExpr::LogAbs { poly: p, .. } => modulus_ok(p),
            WeightExpr::LogSumAbs2(ps) => ps.iter().all(modulus_ok),
            WeightExpr::Sum(ts) => ts.iter().all(|(_, e)| e.fiber_rotation_invariant(fiber.clone())),
            WeightExpr::Max(es) => es.iter().all(|e| e.fiber_rotation_invariant(fiber.clone())),
            WeightExpr::Pullback { map, .. } => map.iter().all(|p| !p.depends_on(fiber.clone())),
        }
    }

    /// Top-level terms `c log|p|` with `c > 0` and `p` affine, together with
    /// the remainder. Used to factor forced vanishing out of heavy weights.
    pub fn split_affine_log_terms(&self) -> (Vec<(T, Poly<T>)>, WeightExpr<T>) {
        let mut logs = Vec::new();
        let mut rest = Vec::new();
        fn walk<T: Real>(e: &WeightExpr<T>, scale: T, logs: &mut Vec<(T, Poly<T>)>, rest: &mut Vec<(T, WeightExpr<T>)>) {
            match e {
                WeightExpr::Sum(ts) => {
                    for (c, sub) in ts {
                        walk(sub, scale * *c, logs, rest);
                    }
                }
                WeightExpr::LogAbs { coef, poly } if scale * *coef > T::zero() && poly.is_nonconstant_affine() => {
                    logs.push((scale * *coef, poly.clone()));
                }
                other => rest.push((scale, other.clone())),
            }
        }
        walk(self, T::one(), &mut logs, &mut rest);
        (logs, WeightExpr::Sum(rest))
    }
}

/// True iff the tree uses only psh-preserving constructors. `false` means
/// "not certified", not "not psh".
pub fn certify_psh_symbolic<T: Real>(expr: &WeightExpr<T>) -> bool {
    match expr {
        WeightExpr::Const(_) | WeightExpr::Re(_) | WeightExpr::Abs2(_) | WeightExpr::LogSumAbs2(_) => true,
        WeightExpr::LogAbs { coef, .. } => *coef >= T::zero(),
        WeightExpr::Sum(ts) => ts
            .iter()
            .all(|(c, e)| if *c >= T::zero() { certify_psh_symbolic(e) } else { e.is_harmonic() }),
        WeightExpr::Max(es) => !es.is_empty() && es.iter().all(certify_psh_symbolic),
        WeightExpr::Pullback { inner, .. } => certify_psh_symbolic(inner),
    }
}

/// Result of evaluating a profile at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightValue<T: Real = f64> {
    pub value: T,
    /// The raw value was below `-Phi_max` and has been clamped.
    pub clamped: bool,
    /// The raw value was `-inf` (log of zero).
    pub singular: bool,
}

/// A weight with its clamp and the derived certificate flags.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightProfile<T: Real = f64> {
    pub expr: WeightExpr<T>,
    pub layout: VarLayout,
    pub clamp: T,
    pub psh_certified: bool,
    /// `phi(t, e^{i theta} w) = phi(t, w)`, established syntactically.
    pub s1_invariant_in_fiber: bool,
    pub source: String,
    pub domain: Option<Domain<T>>,
}

impl<T: Real> WeightProfile<T> {
    pub fn new(expr: WeightExpr<T>, layout: VarLayout) -> Self {
        let psh_certified = certify_psh_symbolic(&expr);
        let s1 = layout.fiber > 0 && expr.fiber_rotation_invariant(layout.fiber_range());
        WeightProfile {
            expr,
            layout,
            clamp: T::lit(DEFAULT_CLAMP),
            psh_certified,
            s1_invariant_in_fiber: s1,
            source: String::new(),
            domain: None,
        }
    }

    /// Parses the text syntax, e.g. `"abs2(z1) + 2*logabs(z1 - 0.3)"`.
    pub fn parse(src: &str, layout: VarLayout) -> Result<Self> {
        let expr = parse_weight(src, layout)?;
        let mut p = Self::new(expr, layout);
        p.source = src.trim().to_string();
        Ok(p)
    }

    pub fn zero(layout: VarLayout) -> Self {
        let mut p = Self::new(WeightExpr::Const(T::zero()), layout);
        p.source = "0".into();
        p
    }

    pub fn with_clamp(mut self, clamp: T) -> Self {
        self.clamp = clamp;
        self
    }

    pub fn with_domain(mut self, domain: Domain<T>) -> Self {
        self.domain = Some(domain);
        self
    }

    /// Clamped value without domain checks; the hot path for quadrature.
    #[inline]
    pub fn value(&self, x: &[Cx<T>]) -> T {
        let v = self.expr.eval(x);
        if v < -self.clamp {
            -self.clamp
        } else {
            v
        }
    }

    /// Checked evaluation with clamp and singularity flags.
    pub fn evaluate(&self, x: &[Cx<T>]) -> Result<WeightValue<T>> {
        if x.len() != self.layout.total() {
            return Err(LabError::Precondition(format!(
                "weight expects {} coordinates, got {}",
                self.layout.total(),
                x.len()
            )));
        }
        if let Some(d) = &self.domain {
            let tol = T::lit(1e-12);
            if d.boundary_distance(x) < -tol {
                return Err(LabError::OutsideDomain(format!("{x:?}")));
            }
        }
        let raw = self.expr.eval(x);
        let singular = raw == T::neg_infinity();
        if raw < -self.clamp {
            Ok(WeightValue { value: -self.clamp, clamped: true, singular })
        } else {
            Ok(WeightValue { value: raw, clamped: false, singular: false })
        }
    }

    /// Weight restricted to the fiber over `t` (the slice `phi_t`).
    pub fn slice(&self, t: &[Cx<T>]) -> WeightProfile<T> {
        assert_eq!(t.len(), self.layout.base);
        let n = self.layout.fiber;
        let subs: Vec<Poly<T>> = (0..self.layout.total())
            .map(|i| if i < self.layout.base { Poly::constant(n, t[i]) } else { Poly::var(n, i - self.layout.base) })
            .collect();
        let expr = substitute(&self.expr, &subs);
        let mut p = WeightProfile::new(expr, VarLayout::domain(n));
        p.clamp = self.clamp;
        p.source = format!("{} | t = {:?}", self.source, t);
        p
    }

    /// Adds `extra`, a function of the base variables only, as a new term.
    pub fn plus(&self, coef: T, extra: WeightExpr<T>) -> WeightProfile<T> {
        let expr = WeightExpr::Sum(vec![(T::one(), self.expr.clone()), (coef, extra)]);
        let mut p = WeightProfile::new(expr, self.layout);
        p.clamp = self.clamp;
        p.source = format!("{} + ...", self.source);
        p.domain = self.domain.clone();
        p
    }
}

fn substitute<T: Real>(e: &WeightExpr<T>, subs: &[Poly<T>]) -> WeightExpr<T> {
    let s = |p: &Poly<T>| p.compose(subs);
    match e {
        WeightExpr::Const(c) => WeightExpr::Const(*c),
        WeightExpr::Re(p) => WeightExpr::Re(s(p)),
        WeightExpr::Abs2(p) => WeightExpr::Abs2(s(p)),
        WeightExpr::LogAbs { coef, poly } => WeightExpr::LogAbs { coef: *coef, poly: s(poly) },
        WeightExpr::LogSumAbs2(ps) => WeightExpr::LogSumAbs2(ps.iter().map(s).collect()),
        WeightExpr::Sum(ts) => WeightExpr::Sum(ts.iter().map(|(c, x)| (*c, substitute(x, subs))).collect()),
        WeightExpr::Max(es) => WeightExpr::Max(es.iter().map(|x| substitute(x, subs)).collect()),
        WeightExpr::Pullback { inner, map } => {
            WeightExpr::Pullback { inner: inner.clone(), map: map.iter().map(s).collect() }
        }
    }
}

// ---------------------------------------------------------------------------
// Text syntax

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = i + 1;
        match c {
            ' ' | '\t' | '\n' | '\r' => {
                i += 1;
            }
            '(' => {
                out.push((pos, Tok::LParen));
                i += 1;
            }
            ')' => {
                out.push((pos, Tok::RParen));
                i += 1;
            }
            ',' => {
                out.push((pos, Tok::Comma));
                i += 1;
            }
            '+' => {
                out.push((pos, Tok::Plus));
                i += 1;
            }
            '-' => {
                out.push((pos, Tok::Minus));
                i += 1;
            }
            '*' => {
                out.push((pos, Tok::Star));
                i += 1;
            }
            '/' => {
                out.push((pos, Tok::Slash));
                i += 1;
            }
            '^' => {
                out.push((pos, Tok::Caret));
                i += 1;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let save = i;
                    i += 1;
                    if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                        i += 1;
                    }
                    if i < chars.len() && chars[i].is_ascii_digit() {
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    } else {
                        i = save;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let v: f64 = text
                    .parse()
                    .map_err(|_| LabError::Parse { pos, msg: format!("malformed number '{text}'") })?;
                out.push((pos, Tok::Num(v)));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push((pos, Tok::Ident(chars[start..i].iter().collect())));
            }
            other => return Err(LabError::Parse { pos, msg: format!("unexpected character '{other}'") }),
        }
    }
    Ok(out)
}

/// Untyped syntax tree; resolved into a weight or a polynomial afterwards.
#[derive(Clone, Debug)]
enum Ast {
    Num(f64),
    Name(usize, String),
    Call(usize, String, Vec<Ast>),
    Add(Box<Ast>, Box<Ast>),
    Sub(Box<Ast>, Box<Ast>),
    Mul(usize, Box<Ast>, Box<Ast>),
    Div(usize, Box<Ast>, Box<Ast>),
    Neg(Box<Ast>),
    Pow(usize, Box<Ast>, u32),
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn err<X>(&self, msg: impl Into<String>) -> Result<X> {
        Err(LabError::Parse { pos: self.pos(), msg: msg.into() })
    }

    fn expect(&mut self, t: Tok) -> Result<()> {
        if self.peek() == Some(&t) {
            self.at += 1;
            Ok(())
        } else {
            self.err(format!("expected {t:?}"))
        }
    }

    fn expr(&mut self) -> Result<Ast> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.at += 1;
                    lhs = Ast::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.at += 1;
                    lhs = Ast::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Ast> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    let p = self.pos();
                    self.at += 1;
                    lhs = Ast::Mul(p, Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Tok::Slash) => {
                    let p = self.pos();
                    self.at += 1;
                    lhs = Ast::Div(p, Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Ast> {
        if self.peek() == Some(&Tok::Minus) {
            self.at += 1;
            return Ok(Ast::Neg(Box::new(self.unary()?)));
        }
        if self.peek() == Some(&Tok::Plus) {
            self.at += 1;
        }
        self.power()
    }

    fn power(&mut self) -> Result<Ast> {
        let base = self.atom()?;
        if self.peek() == Some(&Tok::Caret) {
            let p = self.pos();
            self.at += 1;
            match self.peek().cloned() {
                Some(Tok::Num(v)) if v >= 0.0 && v.fract() == 0.0 && v <= 64.0 => {
                    self.at += 1;
                    return Ok(Ast::Pow(p, Box::new(base), v as u32));
                }
                _ => return self.err("exponent must be a nonnegative integer literal"),
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Ast> {
        let p = self.pos();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.at += 1;
                Ok(Ast::Num(v))
            }
            Some(Tok::LParen) => {
                self.at += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.at += 1;
                if self.peek() == Some(&Tok::LParen) {
                    self.at += 1;
                    let mut args = Vec::new();
                    if self.peek() != Some(&Tok::RParen) {
                        args.push(self.expr()?);
                        while self.peek() == Some(&Tok::Comma) {
                            self.at += 1;
                            args.push(self.expr()?);
                        }
                    }
                    self.expect(Tok::RParen)?;
                    Ok(Ast::Call(p, name, args))
                } else {
                    Ok(Ast::Name(p, name))
                }
            }
            Some(t) => self.err(format!("unexpected token {t:?}")),
            None => self.err("unexpected end of input"),
        }
    }
}

fn parse_ast(src: &str) -> Result<Ast> {
    let toks = tokenize(src)?;
    let end = src.chars().count() + 1;
    let mut p = Parser { toks, at: 0, end };
    if p.toks.is_empty() {
        return Err(LabError::Parse { pos: 1, msg: "empty weight expression".into() });
    }
    let e = p.expr()?;
    if p.at != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(e)
}

fn resolve_var(pos: usize, name: &str, layout: VarLayout) -> Result<Option<usize>> {
    let (prefix, idx) = name.split_at(name.find(|c: char| c.is_ascii_digit()).unwrap_or(name.len()));
    let k: usize = if idx.is_empty() {
        1
    } else {
        idx.parse().map_err(|_| LabError::Parse { pos, msg: format!("bad variable '{name}'") })?
    };
    if k == 0 {
        return Err(LabError::Parse { pos, msg: format!("variables are 1-based: '{name}'") });
    }
    match prefix {
        "z" | "w" => {
            if k > layout.fiber {
                return Err(LabError::Parse { pos, msg: format!("'{name}' exceeds the {} fiber variable(s)", layout.fiber) });
            }
            Ok(Some(layout.base + k - 1))
        }
        "t" => {
            if k > layout.base {
                return Err(LabError::Parse { pos, msg: format!("'{name}' exceeds the {} base variable(s)", layout.base) });
            }
            Ok(Some(k - 1))
        }
        _ => Ok(None),
    }
}

fn const_value(ast: &Ast) -> Option<f64> {
    match ast {
        Ast::Num(v) => Some(*v),
        Ast::Name(_, n) if n == "pi" => Some(std::f64::consts::PI),
        Ast::Neg(a) => const_value(a).map(|v| -v),
        Ast::Add(a, b) => Some(const_value(a)? + const_value(b)?),
        Ast::Sub(a, b) => Some(const_value(a)? - const_value(b)?),
        Ast::Mul(_, a, b) => Some(const_value(a)? * const_value(b)?),
        Ast::Div(_, a, b) => Some(const_value(a)? / const_value(b)?),
        Ast::Pow(_, a, k) => Some(const_value(a)?.powi(*k as i32)),
        Ast::Call(_, n, args) if n == "const" && args.len() == 1 => const_value(&args[0]),
        _ => None,
    }
}

fn ast_pos(ast: &Ast) -> usize {
    match ast {
        Ast::Num(_) => 0,
        Ast::Name(p, _) | Ast::Call(p, _, _) | Ast::Mul(p, _, _) | Ast::Div(p, _, _) | Ast::Pow(p, _, _) => *p,
        Ast::Add(a, _) | Ast::Sub(a, _) | Ast::Neg(a) => ast_pos(a),
    }
}

fn to_poly<T: Real>(ast: &Ast, layout: VarLayout) -> Result<Poly<T>> {
    let n = layout.total();
    Ok(match ast {
        Ast::Num(v) => Poly::constant(n, Complex::new(T::lit(*v), T::zero())),
        Ast::Name(p, name) => {
            if name == "i" {
                Poly::constant(n, Complex::new(T::zero(), T::one()))
            } else if name == "pi" {
                Poly::constant(n, Complex::new(T::pi(), T::zero()))
            } else if let Some(i) = resolve_var(*p, name, layout)? {
                Poly::var(n, i)
            } else {
                return Err(LabError::Parse { pos: *p, msg: format!("unknown name '{name}' in polynomial") });
            }
        }
        Ast::Add(a, b) => to_poly::<T>(a, layout)?.add(&to_poly(b, layout)?),
        Ast::Sub(a, b) => to_poly::<T>(a, layout)?.sub(&to_poly(b, layout)?),
        Ast::Mul(_, a, b) => to_poly::<T>(a, layout)?.mul(&to_poly(b, layout)?),
        Ast::Div(p, a, b) => {
            let d = const_value(b).ok_or(LabError::Parse { pos: *p, msg: "polynomials can only be divided by constants".into() })?;
            if d == 0.0 {
                return Err(LabError::Parse { pos: *p, msg: "division by zero".into() });
            }
            to_poly::<T>(a, layout)?.scale(Complex::new(T::lit(1.0 / d), T::zero()))
        }
        Ast::Neg(a) => to_poly::<T>(a, layout)?.scale(Complex::new(-T::one(), T::zero())),
        Ast::Pow(_, a, k) => to_poly::<T>(a, layout)?.pow(*k),
        Ast::Call(p, name, _) => {
            return Err(LabError::Parse { pos: *p, msg: format!("'{name}(...)' is not a holomorphic polynomial") })
        }
    })
}

fn to_weight<T: Real>(ast: &Ast, layout: VarLayout) -> Result<WeightExpr<T>> {
    if let Some(v) = const_value(ast) {
        return Ok(WeightExpr::Const(T::lit(v)));
    }
    Ok(match ast {
        Ast::Add(a, b) => WeightExpr::Sum(vec![(T::one(), to_weight(a, layout)?), (T::one(), to_weight(b, layout)?)]),
        Ast::Sub(a, b) => WeightExpr::Sum(vec![(T::one(), to_weight(a, layout)?), (-T::one(), to_weight(b, layout)?)]),
        Ast::Neg(a) => WeightExpr::Sum(vec![(-T::one(), to_weight(a, layout)?)]),
        Ast::Mul(p, a, b) => match (const_value(a), const_value(b)) {
            (Some(c), None) => WeightExpr::Sum(vec![(T::lit(c), to_weight(b, layout)?)]),
            (None, Some(c)) => WeightExpr::Sum(vec![(T::lit(c), to_weight(a, layout)?)]),
            _ => return Err(LabError::Parse { pos: *p, msg: "weights may only be scaled by constants".into() }),
        },
        Ast::Div(p, a, b) => match const_value(b) {
            Some(c) if c != 0.0 => WeightExpr::Sum(vec![(T::lit(1.0 / c), to_weight(a, layout)?)]),
            _ => return Err(LabError::Parse { pos: *p, msg: "weights may only be divided by nonzero constants".into() }),
        },
        Ast::Call(p, name, args) => {
            let one_poly = || -> Result<Poly<T>> {
                if args.len() != 1 {
                    return Err(LabError::Parse { pos: *p, msg: format!("{name} takes exactly one argument") });
                }
                to_poly(&args[0], layout)
            };
            match name.as_str() {
                "abs2" => WeightExpr::Abs2(one_poly()?),
                "logabs" => WeightExpr::LogAbs { coef: T::one(), poly: one_poly()? },
                "re" => WeightExpr::Re(one_poly()?),
                "im" => WeightExpr::Re(one_poly()?.scale(Complex::new(T::zero(), -T::one()))),
                "logsumabs2" => {
                    if args.is_empty() {
                        return Err(LabError::Parse { pos: *p, msg: "logsumabs2 needs at least one argument".into() });
                    }
                    WeightExpr::LogSumAbs2(args.iter().map(|a| to_poly(a, layout)).collect::<Result<_>>()?)
                }
                "max" => {
                    if args.is_empty() {
                        return Err(LabError::Parse { pos: *p, msg: "max needs at least one argument".into() });
                    }
                    WeightExpr::Max(args.iter().map(|a| to_weight(a, layout)).collect::<Result<_>>()?)
                }
                "pullback" => {
                    if args.len() < 2 {
                        return Err(LabError::Parse { pos: *p, msg: "pullback(expr, p1, ..., pk) needs a map".into() });
                    }
                    let map: Vec<Poly<T>> = args[1..].iter().map(|a| to_poly(a, layout)).collect::<Result<_>>()?;
                    let inner = to_weight(&args[0], VarLayout::domain(map.len()))?;
                    WeightExpr::Pullback { inner: Box::new(inner), map }
                }
                "const" => {
                    return Err(LabError::Parse { pos: *p, msg: "const(...) takes a numeric literal".into() });
                }
                other => return Err(LabError::Parse { pos: *p, msg: format!("unknown node kind '{other}'") }),
            }
        }
        Ast::Name(p, name) => {
            return Err(LabError::Parse {
                pos: *p,
                msg: format!("bare '{name}' is not a weight; wrap holomorphic data in abs2/logabs/re"),
            })
        }
        Ast::Pow(p, _, _) => return Err(LabError::Parse { pos: *p, msg: "powers of weights are not supported".into() }),
        Ast::Num(_) => unreachable!("handled by const_value"),
    })
    .map_err(|e: LabError| match e {
        LabError::Parse { pos: 0, msg } => LabError::Parse { pos: ast_pos(ast), msg },
        e => e,
    })
}

/// Parses a weight expression in the given variable layout.
pub fn parse_weight<T: Real>(src: &str, layout: VarLayout) -> Result<WeightExpr<T>> {
    to_weight(&parse_ast(src)?, layout)
}

/// Parses a holomorphic polynomial, e.g. `"0.2 + 0.2*t"`.
pub fn parse_poly<T: Real>(src: &str, layout: VarLayout) -> Result<Poly<T>> {
    to_poly(&parse_ast(src)?, layout)
}

// ---------------------------------------------------------------------------
// Sub-mean-value test

#[derive(Clone, Debug)]
pub struct SubMeanOptions<T: Real = f64> {
    pub radii: Vec<T>,
    /// Directions in `C^k`; normalized on use.
    pub directions: Vec<Vec<Cx<T>>>,
    pub angular_nodes: usize,
    pub tol: T,
}

impl<T: Real> SubMeanOptions<T> {
    /// Coordinate directions in `C^k` with the default 256 nodes and tolerance 1e-6.
    pub fn coordinate(k: usize, radii: Vec<T>) -> Self {
        SubMeanOptions { radii, directions: coordinate_directions(k), angular_nodes: 256, tol: T::lit(1e-6) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Witness<T: Real = f64> {
    pub radius: T,
    pub direction: usize,
    /// `value(center) - circle average`; positive means a violation.
    pub deficit: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubMeanVerdict<T: Real = f64> {
    pub pass: bool,
    pub center_value: T,
    /// Largest deficit over every tested circle, violating or not.
    pub worst: Option<Witness<T>>,
    /// `(radius, direction)` pairs whose circle left the region.
    pub skipped: Vec<(T, usize)>,
    pub tested: usize,
}

pub fn coordinate_directions<T: Real>(k: usize) -> Vec<Vec<Cx<T>>> {
    (0..k)
        .map(|j| {
            let mut v = vec![Complex::new(T::zero(), T::zero()); k];
            v[j] = Complex::new(T::one(), T::zero());
            v
        })
        .collect()
}

/// Coordinate directions plus `extra` seeded random unit directions.
pub fn direction_panel<T: Real>(k: usize, extra: usize, seed: u64) -> Vec<Vec<Cx<T>>> {
    let mut dirs = coordinate_directions(k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..extra {
        let v: Vec<Cx<T>> = (0..k)
            .map(|_| Complex::new(T::lit(rng.gen_range(-1.0..1.0)), T::lit(rng.gen_range(-1.0..1.0))))
            .collect();
        let nv = norm(&v);
        dirs.push(v.into_iter().map(|z| z / nv).collect());
    }
    dirs
}

/// Mean of `f` over the circle `center + rho e^{i theta} v` by the trapezoid rule.
pub fn circle_average<T: Real>(
    f: &mut impl FnMut(&[Cx<T>]) -> T,
    center: &[Cx<T>],
    dir: &[Cx<T>],
    rho: T,
    nodes: usize,
) -> T {
    let dtheta = T::two_pi() / T::from_usize_lossy(nodes);
    let mut p = center.to_vec();
    let vals: Vec<T> = (0..nodes)
        .map(|k| {
            let e = cis(dtheta * T::from_usize_lossy(k)) * rho;
            for (i, (c, d)) in center.iter().zip(dir).enumerate() {
                p[i] = *c + e * *d;
            }
            f(&p)
        })
        .collect();
    crate::scalar::pairwise_sum(&vals) / T::from_usize_lossy(nodes)
}

/// Checks `value(center) <= circle average + tol` for every radius and
/// direction whose circle stays inside the region.
pub fn test_submeanvalue<T: Real>(
    mut f: impl FnMut(&[Cx<T>]) -> T,
    inside: impl Fn(&[Cx<T>]) -> bool,
    center: &[Cx<T>],
    opts: &SubMeanOptions<T>,
) -> SubMeanVerdict<T> {
    let center_value = f(center);
    let mut verdict = SubMeanVerdict { pass: true, center_value, worst: None, skipped: Vec::new(), tested: 0 };
    let dtheta = T::two_pi() / T::from_usize_lossy(opts.angular_nodes);
    for (di, d) in opts.directions.iter().enumerate() {
        let nd = norm(d);
        let dir: Vec<Cx<T>> = d.iter().map(|z| *z / nd).collect();
        for &rho in &opts.radii {
            let fits = (0..opts.angular_nodes).all(|k| {
                let e = cis(dtheta * T::from_usize_lossy(k)) * rho;
                let p: Vec<Cx<T>> = center.iter().zip(&dir).map(|(c, v)| *c + e * *v).collect();
                inside(&p)
            });
            if !fits {
                verdict.skipped.push((rho, di));
                continue;
            }
            verdict.tested += 1;
            if center_value == T::neg_infinity() {
                continue;
            }
            let avg = circle_average(&mut f, center, &dir, rho, opts.angular_nodes);
            let deficit = if avg == T::neg_infinity() { T::infinity() } else { center_value - avg };
            if verdict.worst.map_or(true, |w| deficit > w.deficit) {
                verdict.worst = Some(Witness { radius: rho, direction: di, deficit });
            }
            if !(deficit <= opts.tol) {
                verdict.pass = false;
            }
        }
    }
    verdict
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cx;

    fn d1() -> VarLayout {
        VarLayout::domain(1)
    }

    #[test]
    fn evaluate_examples() {
        let p = WeightProfile::<f64>::parse("abs2(z)", d1()).unwrap();
        assert!((p.evaluate(&[cx(0.5, 0.0)]).unwrap().value - 0.25).abs() < 1e-15);

        let p = WeightProfile::<f64>::parse("2*logabs(z)", d1()).unwrap();
        let v = p.evaluate(&[cx(0.0, 0.0)]).unwrap();
        assert_eq!(v.value, -DEFAULT_CLAMP);
        assert!(v.singular && v.clamped);

        let p = WeightProfile::<f64>::parse("max(logabs(z), const(-1))", d1()).unwrap();
        let z = cx((-2.0f64).exp(), 0.0);
        assert_eq!(p.evaluate(&[z]).unwrap().value, -1.0);
    }

    #[test]
    fn evaluate_rejects_points_outside_declared_domain() {
        let p = WeightProfile::<f64>::parse("abs2(z)", d1()).unwrap().with_domain(Domain::unit_disc());
        assert!(matches!(p.evaluate(&[cx(1.5, 0.0)]), Err(LabError::OutsideDomain(_))));
    }

    #[test]
    fn certification_examples() {
        let c = |s: &str| WeightProfile::<f64>::parse(s, VarLayout::domain(2)).unwrap().psh_certified;
        assert!(c("abs2(z1) + 2*logabs(z1)"));
        assert!(c("max(logabs(z1), logabs(z2))"));
        assert!(!c("-abs2(z1)"));
        assert!(c("-re(z1) + 3"));
        assert!(!c("abs2(z1) - logsumabs2(1, z2)"));
        assert!(c("pullback(abs2(z1), z1*z2)"));
    }

    #[test]
    fn s1_invariance_flag() {
        let lay = VarLayout::family(1, 1);
        let f = |s: &str| WeightProfile::<f64>::parse(s, lay).unwrap().s1_invariant_in_fiber;
        assert!(f("abs2(t) + abs2(w)"));
        assert!(f("2*re(t) + abs2(w)"));
        assert!(f("abs2((1 + t) * w^2)"));
        assert!(!f("re(w) + abs2(t)"));
        assert!(!f("abs2(t + w)"));
    }

    #[test]
    fn parse_errors_carry_columns() {
        let e = parse_weight::<f64>("abs2(z1) + foo(z1)", d1()).unwrap_err();
        match e {
            LabError::Parse { pos, msg } => {
                assert_eq!(pos, 12);
                assert!(msg.contains("foo"));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_weight::<f64>("abs2(z2)", d1()).is_err());
        assert!(parse_weight::<f64>("abs2(z1) *", d1()).is_err());
        assert!(parse_weight::<f64>("abs2(z1) * abs2(z1)", d1()).is_err());
        assert!(parse_weight::<f64>("", d1()).is_err());
    }

    #[test]
    fn scaling_nodes_are_homogeneous() {
        let base = WeightProfile::<f64>::parse("abs2(z1 - 0.2) + logabs(z1 + 0.5)", d1()).unwrap();
        let scaled = WeightProfile::<f64>::parse("3.5*(abs2(z1 - 0.2) + logabs(z1 + 0.5))", d1()).unwrap();
        for z in [cx(0.1, 0.3), cx(-0.6, 0.2), cx(0.0, -0.9)] {
            assert!((scaled.value(&[z]) - 3.5 * base.value(&[z])).abs() < 1e-13);
        }
    }

    #[test]
    fn slice_matches_joint_evaluation() {
        let p = WeightProfile::<f64>::parse("abs2(t + w) + re(t*w)", VarLayout::family(1, 1)).unwrap();
        let t = cx(0.2, -0.1);
        let s = p.slice(&[t]);
        for z in [cx(0.3, 0.4), cx(-0.5, 0.0)] {
            assert!((s.value(&[z]) - p.value(&[t, z])).abs() < 1e-14);
        }
    }

    #[test]
    fn affine_log_terms_split_out() {
        let e = parse_weight::<f64>("abs2(z) + 2*logabs(z - 0.3)", d1()).unwrap();
        let (logs, rest) = e.split_affine_log_terms();
        assert_eq!(logs.len(), 1);
        assert_eq!(logs[0].0, 2.0);
        let z = [cx(0.1, 0.2)];
        let whole = e.eval(&z);
        let parts = rest.eval(&z) + 2.0 * logs[0].1.eval(&z).norm().ln();
        assert!((whole - parts).abs() < 1e-14);
    }

    #[test]
    fn submean_examples() {
        let opts = SubMeanOptions { radii: vec![0.3], directions: coordinate_directions(1), angular_nodes: 256, tol: 1e-6 };
        let inside = |p: &[Cx<f64>]| p[0].norm() < 1.0;
        let v = test_submeanvalue(|p| abs2(p[0]), inside, &[cx(0.0, 0.0)], &opts);
        assert!(v.pass);
        assert!((v.worst.unwrap().deficit + 0.09).abs() < 1e-14);

        let v = test_submeanvalue(|p| -abs2(p[0]), inside, &[cx(0.0, 0.0)], &opts);
        assert!(!v.pass);
        assert!((v.worst.unwrap().deficit - 0.09).abs() < 1e-14);
    }

    #[test]
    fn log_modulus_is_harmonic_off_the_pole() {
        let mut f = |p: &[Cx<f64>]| p[0].norm().ln();
        let avg = circle_average(&mut f, &[cx(0.5, 0.0)], &[cx(1.0, 0.0)], 0.2, 256);
        assert!((avg - 0.5f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn real_part_is_harmonic() {
        let dirs = direction_panel::<f64>(2, 8, 7);
        let opts = SubMeanOptions { radii: vec![0.1, 0.25], directions: dirs, angular_nodes: 64, tol: 1e-10 };
        let v = test_submeanvalue(|p| (p[0] * 2.0 - p[1]).re, |_| true, &[cx(0.1, 0.2), cx(-0.3, 0.0)], &opts);
        assert!(v.pass);
        assert!(v.worst.unwrap().deficit.abs() < 1e-10);
    }

    #[test]
    fn circles_leaving_the_region_are_skipped() {
        let opts = SubMeanOptions { radii: vec![0.1, 0.9], directions: coordinate_directions(1), angular_nodes: 32, tol: 1e-8 };
        let v = test_submeanvalue(|p| abs2(p[0]), |p| p[0].norm() < 1.0, &[cx(0.5, 0.0)], &opts);
        assert_eq!(v.skipped.len(), 1);
        assert_eq!(v.tested, 1);
    }
}
