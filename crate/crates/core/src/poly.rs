//! Sparse holomorphic polynomials in a fixed number of complex variables.

use std::collections::BTreeMap;

use num_complex::Complex;

use crate::scalar::{powi, Cx, Real};

/// `sum_alpha c_alpha x^alpha`, stored sparsely with exponent vectors as keys.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly<T: Real> {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, Cx<T>>,
}

impl<T: Real> Poly<T> {
    pub fn zero(nvars: usize) -> Self {
        Poly { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: Cx<T>) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    /// The coordinate function `x_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        assert!(i < nvars, "variable index out of range");
        let mut e = vec![0; nvars];
        e[i] = 1;
        let mut p = Self::zero(nvars);
        p.add_term(e, Complex::new(T::one(), T::zero()));
        p
    }

    pub fn monomial(exponents: Vec<u32>, c: Cx<T>) -> Self {
        let mut p = Self::zero(exponents.len());
        p.add_term(exponents, c);
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &Cx<T>)> {
        self.terms.iter()
    }

    pub fn add_term(&mut self, exponents: Vec<u32>, c: Cx<T>) {
        assert_eq!(exponents.len(), self.nvars);
        let entry = self.terms.entry(exponents).or_insert(Complex::new(T::zero(), T::zero()));
        *entry += c;
        self.prune();
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| c.re != T::zero() || c.im != T::zero());
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum::<u32>()).max().unwrap_or(0)
    }

    /// True if some term has a positive exponent in a variable of `range`.
    pub fn depends_on(&self, range: std::ops::Range<usize>) -> bool {
        self.terms.keys().any(|e| range.clone().any(|i| e[i] > 0))
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.nvars, other.nvars);
        let mut out = self.clone();
        for (e, c) in &other.terms {
            *out.terms.entry(e.clone()).or_insert(Complex::new(T::zero(), T::zero())) += *c;
        }
        out.prune();
        out
    }

    pub fn scale(&self, s: Cx<T>) -> Self {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c *= s;
        }
        out.prune();
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(Complex::new(-T::one(), T::zero())))
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.nvars, other.nvars);
        let mut out = Self::zero(self.nvars);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                *out.terms.entry(e).or_insert(Complex::new(T::zero(), T::zero())) += *ca * *cb;
            }
        }
        out.prune();
        out
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut acc = Self::constant(self.nvars, Complex::new(T::one(), T::zero()));
        for _ in 0..k {
            acc = acc.mul(self);
        }
        acc
    }

    pub fn eval(&self, x: &[Cx<T>]) -> Cx<T> {
        debug_assert!(x.len() >= self.nvars);
        let mut acc = Complex::new(T::zero(), T::zero());
        for (e, c) in &self.terms {
            let mut m = *c;
            for (i, &k) in e.iter().enumerate() {
                if k > 0 {
                    m *= powi(x[i], k);
                }
            }
            acc += m;
        }
        acc
    }

    /// Re-expresses the polynomial in `new_nvars` variables, sending
    /// variable `i` to variable `map[i]`.
    pub fn remap(&self, new_nvars: usize, map: &[usize]) -> Self {
        assert_eq!(map.len(), self.nvars);
        let mut out = Self::zero(new_nvars);
        for (e, c) in &self.terms {
            let mut ne = vec![0; new_nvars];
            for (i, &k) in e.iter().enumerate() {
                ne[map[i]] += k;
            }
            *out.terms.entry(ne).or_insert(Complex::new(T::zero(), T::zero())) += *c;
        }
        out.prune();
        out
    }

    /// Substitutes `x_i := subs[i]`; the result lives in the variables of `subs`.
    pub fn compose(&self, subs: &[Poly<T>]) -> Self {
        assert_eq!(subs.len(), self.nvars);
        let target = subs.first().map(|p| p.nvars).unwrap_or(0);
        let mut out = Self::zero(target);
        for (e, c) in &self.terms {
            let mut m = Self::constant(target, *c);
            for (i, &k) in e.iter().enumerate() {
                if k > 0 {
                    m = m.mul(&subs[i].pow(k));
                }
            }
            out = out.add(&m);
        }
        out
    }

    /// If every term shares the same exponents on the variables in `range`,
    /// returns that shared exponent slice.
    pub fn shared_exponents(&self, range: std::ops::Range<usize>) -> Option<Vec<u32>> {
        let mut it = self.terms.keys();
        let first: Vec<u32> = it.next().map(|e| e[range.clone()].to_vec())?;
        if it.all(|e| e[range.clone()] == first[..]) {
            Some(first)
        } else {
            None
        }
    }

    /// Affine polynomials `a_0 + sum a_i x_i` with at least one nonzero
    /// linear coefficient; their zero sets are smooth hyperplanes.
    pub fn is_nonconstant_affine(&self) -> bool {
        self.degree() == 1
    }
}
