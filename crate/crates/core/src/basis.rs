//! Total-degree monomial bases in graded lexicographic order.

use num_complex::Complex;

use crate::scalar::{Cx, Real};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonomialBasis {
    nvars: usize,
    degree: u32,
    indices: Vec<Vec<u32>>,
}

/// All exponent vectors of length `n` summing to `k`, lexicographically
/// descending (`x_1^k` first).
fn compositions(n: usize, k: u32, out: &mut Vec<Vec<u32>>) {
    fn rec(n: usize, k: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() + 1 == n {
            prefix.push(k);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for a in (0..=k).rev() {
            prefix.push(a);
            rec(n, k - a, prefix, out);
            prefix.pop();
        }
    }
    if n == 0 {
        if k == 0 {
            out.push(Vec::new());
        }
        return;
    }
    rec(n, k, &mut Vec::with_capacity(n), out);
}

impl MonomialBasis {
    /// Every monomial of total degree `<= degree` in `nvars` variables.
    pub fn total_degree(nvars: usize, degree: u32) -> Self {
        Self::filtered(nvars, degree, |_| true)
    }

    /// Total-degree basis restricted to exponents accepted by `keep`.
    pub fn filtered(nvars: usize, degree: u32, keep: impl Fn(&[u32]) -> bool) -> Self {
        let mut indices = Vec::new();
        for k in 0..=degree {
            let mut layer = Vec::new();
            compositions(nvars, k, &mut layer);
            indices.extend(layer.into_iter().filter(|e| keep(e)));
        }
        MonomialBasis { nvars, degree, indices }
    }

    /// Joint basis in `(t, z)` with `deg_t + deg_z <= joint` and separate caps.
    pub fn joint(base: usize, fiber: usize, joint: u32, cap_t: u32, cap_z: u32) -> Self {
        Self::filtered(base + fiber, joint, |e| {
            e[..base].iter().sum::<u32>() <= cap_t && e[base..].iter().sum::<u32>() <= cap_z
        })
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<u32>] {
        &self.indices
    }

    pub fn position(&self, e: &[u32]) -> Option<usize> {
        self.indices.iter().position(|x| x == e)
    }

    fn max_exponent(&self) -> usize {
        self.indices.iter().flat_map(|e| e.iter().copied()).max().unwrap_or(0) as usize
    }

    /// Writes `x^alpha` for every basis element into `out`.
    pub fn eval_into<T: Real>(&self, x: &[Cx<T>], out: &mut [Cx<T>]) {
        let w = self.max_exponent() + 1;
        let one = Complex::new(T::one(), T::zero());
        let mut pows = vec![one; self.nvars * w];
        for (i, xi) in x.iter().take(self.nvars).enumerate() {
            for k in 1..w {
                pows[i * w + k] = pows[i * w + k - 1] * *xi;
            }
        }
        for (o, e) in out.iter_mut().zip(&self.indices) {
            let mut v = one;
            for (i, &k) in e.iter().enumerate() {
                if k > 0 {
                    v *= pows[i * w + k as usize];
                }
            }
            *o = v;
        }
    }

    /// Sum of `a_alpha x^alpha`.
    pub fn eval_combination<T: Real>(&self, a: &[Cx<T>], x: &[Cx<T>]) -> Cx<T> {
        let c = point_evaluation_vector(self, x);
        c.iter().zip(a).fold(Complex::new(T::zero(), T::zero()), |acc, (ci, ai)| acc + *ci * *ai)
    }
}

/// `c_alpha = z^alpha`, so that `u(z) = sum_alpha a_alpha c_alpha`.
pub fn point_evaluation_vector<T: Real>(basis: &MonomialBasis, z: &[Cx<T>]) -> Vec<Cx<T>> {
    let mut out = vec![Complex::new(T::zero(), T::zero()); basis.len()];
    basis.eval_into(z, &mut out);
    out
}

/// Number of monomials of total degree `<= d` in `n` variables.
pub fn dimension(n: usize, d: u32) -> usize {
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for i in 1..=n as u128 {
        num *= d as u128 + i;
        den *= i;
    }
    (num / den) as usize
}
