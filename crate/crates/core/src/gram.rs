//! Weighted Gram matrices, their equilibrated pivoted Cholesky factorization
//! and the constrained minimal-norm solves built on it.
//!
//! Convention: `G_{ab} = sum_j w_j conj(b_a(x_j)) b_b(x_j)` so that
//! `||u||^2 = a^H G a` for `u = sum a_b b_b`. Matrices are stored divided by
//! `exp(log_scale)` to keep very heavy or very light weights representable.

use nalgebra::DMatrix;
use num_complex::Complex;
use rayon::prelude::*;

use crate::basis::MonomialBasis;
use crate::domain::QuadratureRule;
use crate::error::{LabError, Result};
use crate::scalar::{abs2, Cx, Real};

/// Default relative rank threshold.
pub const DEFAULT_EPS_RANK: f64 = 1e-12;

const CHUNK: usize = 2048;

#[derive(Clone, Debug)]
pub struct GramData<T: Real = f64> {
    matrix: DMatrix<Cx<T>>,
    log_scale: T,
    eq: Vec<T>,
    /// Retained indices in pivot order.
    piv: Vec<usize>,
    /// Lower-triangular factor of the equilibrated matrix on `piv`.
    chol: DMatrix<Cx<T>>,
    eps_rank: T,
}

fn czero<T: Real>() -> Cx<T> {
    Complex::new(T::zero(), T::zero())
}

/// Pivoted Cholesky of a Hermitian PSD matrix with unit-scale diagonal.
/// Returns the retained indices (pivot order) and the `r x r` factor.
fn pivoted_cholesky<T: Real>(a: &DMatrix<Cx<T>>, eps: T) -> (Vec<usize>, DMatrix<Cx<T>>) {
    let n = a.nrows();
    let mut d: Vec<T> = (0..n).map(|i| a[(i, i)].re).collect();
    let top = d.iter().copied().fold(T::zero(), |x, y| x.max(y));
    let mut perm: Vec<usize> = (0..n).collect();
    let mut l = DMatrix::from_element(n, n, czero::<T>());
    let mut rank = 0;
    for k in 0..n {
        let mut best = k;
        for j in k + 1..n {
            if d[perm[j]] > d[perm[best]] {
                best = j;
            }
        }
        if !(d[perm[best]] > eps * top) {
            break;
        }
        perm.swap(k, best);
        let p = perm[k];
        let lpp = d[p].sqrt();
        l[(p, k)] = Complex::new(lpp, T::zero());
        for &i in &perm[k + 1..] {
            let mut s = a[(i, p)];
            for c in 0..k {
                s -= l[(i, c)] * l[(p, c)].conj();
            }
            let v = s / lpp;
            l[(i, k)] = v;
            d[i] -= abs2(v);
        }
        rank = k + 1;
    }
    let piv: Vec<usize> = perm[..rank].to_vec();
    let mut f = DMatrix::from_element(rank, rank, czero::<T>());
    for (r, &i) in piv.iter().enumerate() {
        for c in 0..=r {
            f[(r, c)] = l[(i, c)];
        }
    }
    (piv, f)
}

fn forward<T: Real>(l: &DMatrix<Cx<T>>, b: &mut [Cx<T>]) {
    let n = l.nrows();
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[(i, j)] * b[j];
        }
        b[i] = s / l[(i, i)];
    }
}

fn backward_h<T: Real>(l: &DMatrix<Cx<T>>, b: &mut [Cx<T>]) {
    let n = l.nrows();
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= l[(j, i)].conj() * b[j];
        }
        b[i] = s / l[(i, i)].conj();
    }
}

impl<T: Real> GramData<T> {
    /// Factorizes `exp(log_scale) * matrix`.
    pub fn from_matrix(matrix: DMatrix<Cx<T>>, log_scale: T, eps_rank: T) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(LabError::Precondition("Gram matrix must be square".into()));
        }
        let dmax = (0..n).map(|i| matrix[(i, i)].re).fold(T::zero(), |a, b| a.max(b));
        let eq: Vec<T> = (0..n)
            .map(|i| {
                let g = matrix[(i, i)].re;
                if g > dmax * T::lit(1e-300) && g > T::zero() {
                    T::one() / g.sqrt()
                } else {
                    T::zero()
                }
            })
            .collect();
        let mut a = matrix.clone();
        for j in 0..n {
            for i in 0..n {
                a[(i, j)] = a[(i, j)] * (eq[i] * eq[j]);
            }
        }
        // symmetrize the stored rounding noise away before factorizing
        for j in 0..n {
            for i in 0..j {
                let h = (a[(i, j)] + a[(j, i)].conj()) * T::lit(0.5);
                a[(i, j)] = h;
                a[(j, i)] = h.conj();
            }
            a[(j, j)] = Complex::new(a[(j, j)].re, T::zero());
        }
        let (piv, chol) = pivoted_cholesky(&a, eps_rank);
        Ok(GramData { matrix, log_scale, eq, piv, chol, eps_rank })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.piv.len()
    }

    pub fn retained(&self) -> &[usize] {
        &self.piv
    }

    pub fn eps_rank(&self) -> T {
        self.eps_rank
    }

    /// The stored (scaled) matrix; the true Gram is `exp(log_scale)` times this.
    pub fn matrix(&self) -> &DMatrix<Cx<T>> {
        &self.matrix
    }

    pub fn log_scale(&self) -> T {
        self.log_scale
    }

    /// The true Gram matrix (may overflow for extreme weights).
    pub fn unscaled(&self) -> DMatrix<Cx<T>> {
        let s = self.log_scale.exp();
        self.matrix.map(|z| z * s)
    }

    /// `||u||^2 = a^H G a`, in scaled units.
    pub fn quadratic_form_scaled(&self, a: &[Cx<T>]) -> T {
        let n = self.dim();
        let mut acc = czero::<T>();
        for j in 0..n {
            let mut s = czero::<T>();
            for i in 0..n {
                s += a[i].conj() * self.matrix[(i, j)];
            }
            acc += s * a[j];
        }
        acc.re
    }

    /// `G_RR^{-1} y` on the retained subspace (in equilibrated coordinates).
    fn solve_eq(&self, y: &[Cx<T>]) -> Vec<Cx<T>> {
        let mut b: Vec<Cx<T>> = self.piv.iter().map(|&i| y[i]).collect();
        forward(&self.chol, &mut b);
        backward_h(&self.chol, &mut b);
        b
    }

    /// `c^T G^{-1} conj(c)` on the retained subspace, in scaled units.
    pub fn kernel_scaled(&self, c: &[Cx<T>]) -> T {
        let mut b: Vec<Cx<T>> = self.piv.iter().map(|&i| (c[i] * self.eq[i]).conj()).collect();
        forward(&self.chol, &mut b);
        b.iter().fold(T::zero(), |a, z| a + abs2(*z))
    }

    /// `ln(c^T G^{-1} conj(c))`; `-inf` when `c` misses the retained subspace.
    pub fn log_kernel(&self, c: &[Cx<T>]) -> T {
        let k = self.kernel_scaled(c);
        if k > T::zero() {
            k.ln() - self.log_scale
        } else {
            T::neg_infinity()
        }
    }

    /// Minimal-norm coefficients with `c^T a = 1`, and the scaled kernel value.
    pub fn minimizer(&self, c: &[Cx<T>]) -> Option<(Vec<Cx<T>>, T)> {
        let cc: Vec<Cx<T>> = (0..self.dim()).map(|i| (c[i] * self.eq[i]).conj()).collect();
        let w = self.solve_eq(&cc);
        let k = self.piv.iter().zip(&w).fold(czero::<T>(), |acc, (&i, wi)| acc + cc[i].conj() * *wi).re;
        if !(k > T::zero()) {
            return None;
        }
        let mut a = vec![czero::<T>(); self.dim()];
        for (&i, wi) in self.piv.iter().zip(&w) {
            a[i] = *wi * (self.eq[i] / k);
        }
        Some((a, k))
    }

    /// Minimizes `a^H G a` subject to `C a = b`. Returns the coefficients and
    /// the minimal value in scaled units. Fails with `RankDeficient` when the
    /// constraints are not independent on the retained subspace.
    pub fn constrained_min(&self, rows: &DMatrix<Cx<T>>, b: &[Cx<T>]) -> Result<(Vec<Cx<T>>, T)> {
        let q = rows.nrows();
        let n = self.dim();
        assert_eq!(rows.ncols(), n);
        // Z = A_RR^{-1} C_R^H with C scaled by the equilibration
        let mut z_cols: Vec<Vec<Cx<T>>> = Vec::with_capacity(q);
        for r in 0..q {
            let col: Vec<Cx<T>> = (0..n).map(|i| (rows[(r, i)] * self.eq[i]).conj()).collect();
            z_cols.push(self.solve_eq(&col));
        }
        let mut h = DMatrix::from_element(q, q, czero::<T>());
        for r in 0..q {
            for c in 0..q {
                let mut s = czero::<T>();
                for (k, &i) in self.piv.iter().enumerate() {
                    s += rows[(r, i)] * self.eq[i] * z_cols[c][k];
                }
                h[(r, c)] = s;
            }
        }
        let hd = (0..q).map(|i| h[(i, i)].re).fold(T::zero(), |a, b| a.max(b));
        let inner = GramData::from_matrix(h, T::zero(), self.eps_rank)?;
        if inner.rank() < q || !(hd > T::zero()) {
            return Err(LabError::RankDeficient);
        }
        let y = inner.solve_full(b);
        let mut a = vec![czero::<T>(); n];
        for (k, &i) in self.piv.iter().enumerate() {
            let mut s = czero::<T>();
            for c in 0..q {
                s += z_cols[c][k] * y[c];
            }
            a[i] = s * self.eq[i];
        }
        let value = self.quadratic_form_scaled(&a);
        Ok((a, value))
    }

    /// `G^{-1} y` for a full-rank matrix, in scaled units.
    pub fn solve_full(&self, y: &[Cx<T>]) -> Vec<Cx<T>> {
        let ys: Vec<Cx<T>> = (0..self.dim()).map(|i| y[i] * self.eq[i]).collect();
        let w = self.solve_eq(&ys);
        let mut out = vec![czero::<T>(); self.dim()];
        for (&i, wi) in self.piv.iter().zip(&w) {
            out[i] = *wi * self.eq[i];
        }
        out
    }
}

/// Weighted Gram of `basis` over `rule` with node log-weights `log_w`
/// (which must already include the quadrature weights).
pub fn assemble_gram<T: Real>(
    basis: &MonomialBasis,
    rule: &QuadratureRule<T>,
    log_w: &[T],
    eps_rank: T,
) -> Result<GramData<T>> {
    let (m, log_scale) = assemble_matrix(rule.len(), |i, out| basis.eval_into(rule.node(i), out), basis.len(), log_w)?;
    GramData::from_matrix(m, log_scale, eps_rank)
}

/// Assembly from cached basis values `bc = [Re B | Im B]` (nodes x 2M).
pub fn assemble_cached<T: Real>(bc: &DMatrix<T>, log_w: &[T]) -> Result<(DMatrix<Cx<T>>, T)> {
    let nodes = bc.nrows();
    let nb = bc.ncols() / 2;
    assert_eq!(log_w.len(), nodes);
    let top = check_log_weights(log_w)?;
    if top == T::neg_infinity() {
        return Ok((DMatrix::from_element(nb, nb, czero::<T>()), T::zero()));
    }
    let f: Vec<T> = log_w.iter().map(|l| ((*l - top) * T::lit(0.5)).exp()).collect();
    let mut y = bc.clone();
    for mut col in y.column_iter_mut() {
        for (v, s) in col.iter_mut().zip(&f) {
            *v *= *s;
        }
    }
    let h = y.transpose() * &y;
    Ok((split_to_complex(&h, nb), top))
}

fn check_log_weights<T: Real>(log_w: &[T]) -> Result<T> {
    let bad: Vec<usize> = (0..log_w.len()).filter(|&j| log_w[j] == T::infinity() || log_w[j] != log_w[j]).collect();
    if !bad.is_empty() {
        return Err(LabError::InfiniteWeight { count: bad.len(), nodes: bad.into_iter().take(8).collect() });
    }
    Ok(log_w.iter().copied().fold(T::neg_infinity(), |a, b| a.max(b)))
}

fn split_to_complex<T: Real>(h: &DMatrix<T>, nb: usize) -> DMatrix<Cx<T>> {
    let mut g = DMatrix::from_element(nb, nb, czero::<T>());
    for b in 0..nb {
        for a in 0..nb {
            let re = h[(a, b)] + h[(nb + a, nb + b)];
            let im = h[(a, nb + b)] - h[(nb + a, b)];
            g[(a, b)] = Complex::new(re, im);
        }
    }
    g
}

/// Shared assembly kernel: `eval(j, row)` fills the basis values at node `j`.
pub fn assemble_matrix<T: Real>(
    nodes: usize,
    eval: impl Fn(usize, &mut [Cx<T>]) + Sync,
    nb: usize,
    log_w: &[T],
) -> Result<(DMatrix<Cx<T>>, T)> {
    assert_eq!(log_w.len(), nodes);
    let top = check_log_weights(log_w)?;
    if top == T::neg_infinity() {
        return Ok((DMatrix::from_element(nb, nb, czero::<T>()), T::zero()));
    }
    let starts: Vec<usize> = (0..nodes).step_by(CHUNK).collect();
    let parts: Vec<DMatrix<T>> = starts
        .par_iter()
        .map(|&s| {
            let e = (s + CHUNK).min(nodes);
            let rows = e - s;
            let mut y = DMatrix::<T>::zeros(rows, 2 * nb);
            let mut buf = vec![czero::<T>(); nb];
            for r in 0..rows {
                let j = s + r;
                let f = ((log_w[j] - top) * T::lit(0.5)).exp();
                if f == T::zero() {
                    continue;
                }
                eval(j, &mut buf);
                for (a, v) in buf.iter().enumerate() {
                    y[(r, a)] = v.re * f;
                    y[(r, nb + a)] = v.im * f;
                }
            }
            y.transpose() * &y
        })
        .collect();
    let mut h = DMatrix::<T>::zeros(2 * nb, 2 * nb);
    for p in &parts {
        h += p;
    }
    Ok((split_to_complex(&h, nb), top))
}
