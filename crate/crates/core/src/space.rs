//! Truncated weighted holomorphic spaces.
//!
//! A space fixes a quadrature rule, a weight `e^{-s phi}`, an exponent `m`
//! (the integrand is `|u|^{2/m} e^{-s phi}`) and a monomial basis. Top-level
//! terms `c log|p|` of `phi` with `p` affine and vanishing somewhere on the
//! domain force every finite-norm `u` to vanish along `p = 0`; such factors
//! are divided out, so elements are `u = P v` with `P = prod p_i^{k_i}` and `v`
//! a polynomial in the basis. Only the residual weight is ever evaluated.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex;

use crate::basis::{point_evaluation_vector, MonomialBasis};
use crate::domain::{Domain, QuadratureRule};
use crate::error::{LabError, Result};
use crate::gram::{assemble_cached, assemble_gram, GramData, DEFAULT_EPS_RANK};
use crate::poly::Poly;
use crate::scalar::{abs2, cabs, pairwise_sum, Cx, Real};
use crate::weights::{WeightExpr, WeightProfile};

#[derive(Clone, Debug)]
pub struct WeightedSpace<T: Real = f64> {
    pub basis: MonomialBasis,
    pub rule: Arc<QuadratureRule<T>>,
    pub profile: WeightProfile<T>,
    /// Integrand exponent parameter: `p = 2/m`.
    pub m: u32,
    /// Weight scale `s` in `e^{-s phi}`.
    pub scale: T,
    pub eps_rank: T,
    divisor: Vec<(Poly<T>, u32)>,
    log_w: Vec<T>,
    /// Basis values at the nodes as `[Re | Im]`, when small enough to keep.
    cache: Option<Arc<DMatrix<T>>>,
}

/// Largest cached node-value table, in real entries.
const CACHE_LIMIT: usize = 12_000_000;

/// Bounding polydisc `(center, radii)` of a domain.
fn bounding_polydisc<T: Real>(d: &Domain<T>) -> (Vec<Cx<T>>, Vec<T>) {
    match d {
        Domain::Disc { center, radius } => (vec![*center], vec![*radius]),
        Domain::Annulus { center, outer, .. } => (vec![*center], vec![*outer]),
        Domain::Polydisc { center, radii } => (center.clone(), radii.clone()),
        Domain::Ball { center, radius } => (center.clone(), vec![*radius; center.len()]),
        Domain::Product(fs) => {
            let mut c = Vec::new();
            let mut r = Vec::new();
            for f in fs {
                let (a, b) = bounding_polydisc(f);
                c.extend(a);
                r.extend(b);
            }
            (c, r)
        }
    }
}

/// Whether the zero set of the affine polynomial `p` can meet the closed domain.
fn affine_zero_meets<T: Real>(p: &Poly<T>, d: &Domain<T>) -> bool {
    let n = p.nvars();
    let zero = vec![Complex::new(T::zero(), T::zero()); n];
    let a0 = p.eval(&zero);
    let mut lin = vec![Complex::new(T::zero(), T::zero()); n];
    for (e, c) in p.terms() {
        if let Some(i) = e.iter().position(|&k| k == 1) {
            lin[i] = *c;
        }
    }
    let active: Vec<usize> = (0..n).filter(|&i| lin[i] != Complex::new(T::zero(), T::zero())).collect();
    let tol = T::lit(1e-12);
    if n == 1 && active.len() == 1 {
        let z = -a0 / lin[0];
        return d.boundary_distance(&[z]) >= -tol;
    }
    let (c, r) = bounding_polydisc(d);
    if let Domain::Ball { radius, .. } = d {
        let an = lin.iter().fold(T::zero(), |acc, z| acc + abs2(*z)).sqrt();
        return cabs(p.eval(&c)) <= *radius * an + tol;
    }
    let reach = active.iter().fold(T::zero(), |acc, &i| acc + cabs(lin[i]) * r[i]);
    cabs(p.eval(&c)) <= reach + tol
}

impl<T: Real> WeightedSpace<T> {
    /// General constructor: integrand `|u|^{2/m} e^{-scale * phi}` on `domain`.
    pub fn build(
        domain: &Domain<T>,
        rule: Arc<QuadratureRule<T>>,
        profile: WeightProfile<T>,
        basis: MonomialBasis,
        m: u32,
        scale: T,
    ) -> Result<Self> {
        if m == 0 {
            return Err(LabError::Precondition("exponent m must be >= 1".into()));
        }
        if basis.nvars() != profile.layout.total() || rule.dim() != basis.nvars() {
            return Err(LabError::Precondition(format!(
                "dimension mismatch: basis {}, weight {}, quadrature {}",
                basis.nvars(),
                profile.layout.total(),
                rule.dim()
            )));
        }
        let p = T::lit(2.0) / T::from_u32(m).unwrap();
        let (logs, rest) = profile.expr.split_affine_log_terms();
        let mut divisor = Vec::new();
        let mut residual = Vec::new();
        let mut rest_terms = match rest {
            WeightExpr::Sum(v) => v,
            other => vec![(T::one(), other)],
        };
        for (c, poly) in logs {
            if !affine_zero_meets(&poly, domain) {
                rest_terms.push((c, WeightExpr::LogAbs { coef: T::one(), poly }));
                continue;
            }
            let sc = scale * c;
            let two = T::lit(2.0);
            let k = if sc >= two { ((sc - two) / p).floor().to_u32().unwrap() + 1 } else { 0 };
            let e = sc - p * T::from_u32(k).unwrap();
            if k > 0 {
                divisor.push((poly.clone(), k));
            }
            if e != T::zero() {
                residual.push((e, poly));
            }
        }
        let rest = WeightExpr::Sum(rest_terms);
        let clamp = profile.clamp;
        let log_w: Vec<T> = (0..rule.len())
            .map(|j| {
                let x = rule.node(j);
                let mut v = rest.eval(x);
                if v < -clamp {
                    v = -clamp;
                }
                let mut lw = rule.weights()[j].ln() - scale * v;
                for (e, poly) in &residual {
                    lw -= *e * cabs(poly.eval(x)).ln();
                }
                lw
            })
            .collect();
        let nb = basis.len();
        let cache = (rule.len() * 2 * nb <= CACHE_LIMIT).then(|| {
            let mut bc = DMatrix::<T>::zeros(rule.len(), 2 * nb);
            let mut buf = vec![Complex::new(T::zero(), T::zero()); nb];
            for j in 0..rule.len() {
                basis.eval_into(rule.node(j), &mut buf);
                for (a, v) in buf.iter().enumerate() {
                    bc[(j, a)] = v.re;
                    bc[(j, nb + a)] = v.im;
                }
            }
            Arc::new(bc)
        });
        Ok(WeightedSpace { basis, rule, profile, m, scale, eps_rank: T::lit(DEFAULT_EPS_RANK), divisor, log_w, cache })
    }

    /// Square-integrable space with weight `e^{-phi}`.
    pub fn l2(domain: &Domain<T>, rule: Arc<QuadratureRule<T>>, profile: WeightProfile<T>, basis: MonomialBasis) -> Result<Self> {
        Self::build(domain, rule, profile, basis, 1, T::one())
    }

    /// The m-Bergman space: integrand `|u|^{2/m} e^{-phi/m}`.
    pub fn m_space(
        domain: &Domain<T>,
        rule: Arc<QuadratureRule<T>>,
        profile: WeightProfile<T>,
        basis: MonomialBasis,
        m: u32,
    ) -> Result<Self> {
        let s = T::one() / T::from_u32(m.max(1)).unwrap();
        Self::build(domain, rule, profile, basis, m, s)
    }

    pub fn p(&self) -> T {
        T::lit(2.0) / T::from_u32(self.m).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Forced-vanishing factors `(p_i, k_i)` divided out of every element.
    pub fn divisor(&self) -> &[(Poly<T>, u32)] {
        &self.divisor
    }

    /// `P(z) = prod p_i(z)^{k_i}`.
    pub fn prefactor(&self, z: &[Cx<T>]) -> Cx<T> {
        self.divisor
            .iter()
            .fold(Complex::new(T::one(), T::zero()), |acc, (p, k)| acc * crate::scalar::powi(p.eval(z), *k))
    }

    /// Node log-weights of the reduced problem in `v` (quadrature included).
    pub fn log_weights(&self) -> &[T] {
        &self.log_w
    }

    pub fn eval_vector(&self, z: &[Cx<T>]) -> Vec<Cx<T>> {
        point_evaluation_vector(&self.basis, z)
    }

    /// `u(z) = P(z) sum_alpha a_alpha z^alpha`.
    pub fn eval(&self, a: &[Cx<T>], z: &[Cx<T>]) -> Cx<T> {
        self.prefactor(z) * self.basis.eval_combination(a, z)
    }

    /// Reduced polynomial `v` at every quadrature node.
    pub fn node_values(&self, a: &[Cx<T>]) -> Vec<Cx<T>> {
        let nb = self.basis.len();
        if let Some(bc) = &self.cache {
            let mut coef = DMatrix::<T>::zeros(2 * nb, 2);
            for (i, c) in a.iter().enumerate() {
                coef[(i, 0)] = c.re;
                coef[(i, 1)] = c.im;
                coef[(nb + i, 0)] = -c.im;
                coef[(nb + i, 1)] = c.re;
            }
            let v = &**bc * coef;
            return (0..v.nrows()).map(|j| Complex::new(v[(j, 0)], v[(j, 1)])).collect();
        }
        let mut buf = vec![Complex::new(T::zero(), T::zero()); nb];
        (0..self.rule.len())
            .map(|j| {
                self.basis.eval_into(self.rule.node(j), &mut buf);
                buf.iter().zip(a).fold(Complex::new(T::zero(), T::zero()), |acc, (b, c)| acc + *b * *c)
            })
            .collect()
    }

    /// `ln int |u|^{2/m} e^{-s phi}` from node values of `v`.
    pub fn log_objective_from_values(&self, vals: &[Cx<T>]) -> T {
        let half_p = self.p() * T::lit(0.5);
        let terms: Vec<T> = self
            .log_w
            .iter()
            .zip(vals)
            .map(|(lw, v)| {
                let a = abs2(*v);
                if a == T::zero() {
                    T::neg_infinity()
                } else {
                    *lw + half_p * a.ln()
                }
            })
            .collect();
        log_sum_exp(&terms)
    }

    pub fn log_objective(&self, a: &[Cx<T>]) -> T {
        self.log_objective_from_values(&self.node_values(a))
    }

    /// Gram of the reduced square-integrable problem (exact for `m = 1`).
    pub fn gram(&self) -> Result<GramData<T>> {
        self.gram_with(&self.log_w)
    }

    /// Gram with arbitrary node log-weights (quadrature included).
    pub fn gram_with(&self, log_w: &[T]) -> Result<GramData<T>> {
        match &self.cache {
            Some(bc) => {
                let (g, scale) = assemble_cached(bc, log_w)?;
                GramData::from_matrix(g, scale, self.eps_rank)
            }
            None => assemble_gram(&self.basis, &self.rule, log_w, self.eps_rank),
        }
    }

    /// Majorizer Gram at the iterate with node values `vals`:
    /// weights `w_j max(|v_j|^2, eps)^{p/2 - 1}`, `eps = eps_rel * max |v_j|^2`.
    /// Also returns the fraction of nodes where the floor was active.
    pub fn reweighted_gram(&self, vals: &[Cx<T>], eps_rel: T) -> Result<(GramData<T>, T)> {
        let expo = self.p() * T::lit(0.5) - T::one();
        let top = vals.iter().fold(T::zero(), |a, v| a.max(abs2(*v)));
        let floor = (top * eps_rel).max(T::min_value().unwrap_or(T::lit(1e-300)));
        let mut clamped = 0usize;
        let lw: Vec<T> = self
            .log_w
            .iter()
            .zip(vals)
            .map(|(lw, v)| {
                let mut a = abs2(*v);
                if a < floor {
                    a = floor;
                    clamped += 1;
                }
                *lw + expo * a.ln()
            })
            .collect();
        let g = self.gram_with(&lw)?;
        Ok((g, T::from_usize_lossy(clamped) / T::from_usize_lossy(vals.len().max(1))))
    }
}

/// `ln sum exp(x_i)` with a max offset and pairwise summation.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let top = xs.iter().copied().fold(T::neg_infinity(), |a, b| a.max(b));
    if top == T::neg_infinity() || top == T::infinity() {
        return top;
    }
    let e: Vec<T> = xs.iter().map(|x| (*x - top).exp()).collect();
    top + pairwise_sum(&e).ln()
}
