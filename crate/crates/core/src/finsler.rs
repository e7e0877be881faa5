//! Finite-rank Finsler and Hermitian metrics: dual norms, tensor-power
//! norms, Griffiths positivity probes, the multiple extension measurement and
//! the truncated Hodge bundle `t -> H^2(D, e^{-phi_t})`.
//!
//! A Hermitian metric is stored as `|v|^2 = v^H G v`. A functional `c` acts
//! by `c(v) = sum c_i v_i`, so its dual norm is `sqrt(c^T G^{-1} conj(c))`.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::basis::MonomialBasis;
use crate::demailly::{ConstantEntry, ExtensionConstantSeries};
use crate::domain::{Domain, QuadratureRule};
use crate::error::{LabError, Result};
use crate::extension::FamilyWeight;
use crate::gram::{GramData, DEFAULT_EPS_RANK};
use crate::poly::Poly;
use crate::scalar::{abs2, cis, Cx, Real};
use crate::space::{log_sum_exp, WeightedSpace};
use crate::weights::{test_submeanvalue, SubMeanOptions};

fn czero<T: Real>() -> Cx<T> {
    Complex::new(T::zero(), T::zero())
}

fn gaussian<T: Real>(rng: &mut ChaCha8Rng) -> Cx<T> {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let a = 2.0 * std::f64::consts::PI * u2;
    Complex::new(T::lit(r * a.cos()), T::lit(r * a.sin()))
}

fn random_unit<T: Real>(n: usize, rng: &mut ChaCha8Rng) -> Vec<Cx<T>> {
    let v: Vec<Cx<T>> = (0..n).map(|_| gaussian(rng)).collect();
    let s = v.iter().fold(T::zero(), |a, z| a + abs2(*z)).sqrt();
    v.into_iter().map(|z| z / s).collect()
}

fn kron_vec<T: Real>(a: &[Cx<T>], b: &[Cx<T>]) -> Vec<Cx<T>> {
    a.iter().flat_map(|x| b.iter().map(move |y| *x * *y)).collect()
}

fn bilinear<T: Real>(c: &[Cx<T>], v: &[Cx<T>]) -> Cx<T> {
    c.iter().zip(v).fold(czero(), |a, (x, y)| a + *x * *y)
}

/// Positive semidefinite Hermitian metric `|v|^2 = v^H G v`.
#[derive(Clone, Debug)]
pub struct HermitianMetric<T: Real = f64> {
    gram: GramData<T>,
}

impl<T: Real> HermitianMetric<T> {
    /// Rejects non-square, non-Hermitian or indefinite matrices; the
    /// eigenvalue floor is `-1e-12 * max|G_ij|`.
    pub fn new(matrix: DMatrix<Cx<T>>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n {
            return Err(LabError::Precondition("metric matrix must be square and nonempty".into()));
        }
        let scale = matrix.iter().fold(T::zero(), |a, z| a.max(abs2(*z).sqrt()));
        let tol = T::lit(1e-12) * scale;
        for i in 0..n {
            for j in 0..n {
                if abs2(matrix[(i, j)] - matrix[(j, i)].conj()).sqrt() > tol {
                    return Err(LabError::Precondition("metric matrix is not Hermitian".into()));
                }
            }
        }
        let h = (&matrix + matrix.adjoint()) * Complex::new(T::lit(0.5), T::zero());
        let min_eig = h.clone().symmetric_eigenvalues().iter().fold(T::infinity(), |a, b| a.min(*b));
        if min_eig < -tol {
            return Err(LabError::Indefinite { min_eig: min_eig.as_f64(), scale: scale.as_f64() });
        }
        Ok(HermitianMetric { gram: GramData::from_matrix(h, T::zero(), T::lit(DEFAULT_EPS_RANK))? })
    }

    /// Wraps an already factorized Gram matrix (assembled from quadrature).
    pub fn from_gram(gram: GramData<T>) -> Self {
        HermitianMetric { gram }
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity is positive")
    }

    pub fn diagonal(d: &[T]) -> Result<Self> {
        let mut g = DMatrix::from_element(d.len(), d.len(), czero());
        for (i, x) in d.iter().enumerate() {
            g[(i, i)] = Complex::new(*x, T::zero());
        }
        Self::new(g)
    }

    pub fn rank(&self) -> usize {
        self.gram.dim()
    }

    pub fn gram(&self) -> &GramData<T> {
        &self.gram
    }

    pub fn matrix(&self) -> DMatrix<Cx<T>> {
        self.gram.unscaled()
    }

    pub fn norm2(&self, v: &[Cx<T>]) -> T {
        self.gram.quadratic_form_scaled(v) * self.gram.log_scale().exp()
    }

    /// `ln |c|^2_{h*}`; `-inf` for the zero functional.
    pub fn log_dual_norm2(&self, c: &[Cx<T>]) -> T {
        self.gram.log_kernel(c)
    }

    /// The metric on the dual space, `conj(G^{-1})`. Needs full rank.
    pub fn dual(&self) -> Result<Self> {
        let n = self.rank();
        if self.gram.rank() < n {
            return Err(LabError::Precondition("degenerate metric has no Hermitian dual".into()));
        }
        let s = (-self.gram.log_scale()).exp();
        let mut inv = DMatrix::from_element(n, n, czero());
        for k in 0..n {
            let mut e = vec![czero(); n];
            e[k] = Complex::new(T::one(), T::zero());
            for (i, v) in self.gram.solve_full(&e).into_iter().enumerate() {
                inv[(i, k)] = (v * s).conj();
            }
        }
        let inv = (&inv + inv.adjoint()) * Complex::new(T::lit(0.5), T::zero());
        Self::new(inv)
    }

    /// `M` with `conj(G) = M M^H`, dropping directions below the rank floor.
    /// For a metric on `V*` this maps the Euclidean unit ball onto the unit
    /// ball of the primal metric.
    fn whitening(&self) -> DMatrix<Cx<T>> {
        let g = self.matrix().map(|z| z.conj());
        let eig = g.symmetric_eigen();
        let top = eig.eigenvalues.iter().fold(T::zero(), |a, b| a.max(*b));
        let keep: Vec<usize> =
            (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > top * T::lit(DEFAULT_EPS_RANK)).collect();
        let n = self.rank();
        let mut m = DMatrix::from_element(n, keep.len(), czero());
        for (c, &k) in keep.iter().enumerate() {
            let s = eig.eigenvalues[k].sqrt();
            for r in 0..n {
                m[(r, c)] = eig.eigenvectors[(r, k)] * s;
            }
        }
        m
    }
}

pub type NormFn<T> = Arc<dyn Fn(&[Cx<T>]) -> T + Send + Sync>;

/// A metric on `C^rank`: either Hermitian or an arbitrary evaluator of
/// `|v|^2_h` that may return `+inf`.
#[derive(Clone)]
pub enum FinslerMetricModel<T: Real = f64> {
    Hermitian(HermitianMetric<T>),
    General { rank: usize, norm2: NormFn<T> },
}

impl<T: Real> fmt::Debug for FinslerMetricModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FinslerMetricModel::Hermitian(h) => f.debug_tuple("Hermitian").field(&h.matrix()).finish(),
            FinslerMetricModel::General { rank, .. } => f.debug_struct("General").field("rank", rank).finish(),
        }
    }
}

impl<T: Real> FinslerMetricModel<T> {
    pub fn hermitian(matrix: DMatrix<Cx<T>>) -> Result<Self> {
        Ok(FinslerMetricModel::Hermitian(HermitianMetric::new(matrix)?))
    }

    pub fn general(rank: usize, norm2: impl Fn(&[Cx<T>]) -> T + Send + Sync + 'static) -> Self {
        FinslerMetricModel::General { rank, norm2: Arc::new(norm2) }
    }

    /// `|v| = +inf` for every nonzero `v`.
    pub fn infinite(rank: usize) -> Self {
        Self::general(rank, |v: &[Cx<T>]| if v.iter().all(|z| *z == czero()) { T::zero() } else { T::infinity() })
    }

    pub fn rank(&self) -> usize {
        match self {
            FinslerMetricModel::Hermitian(h) => h.rank(),
            FinslerMetricModel::General { rank, .. } => *rank,
        }
    }

    pub fn norm2(&self, v: &[Cx<T>]) -> T {
        match self {
            FinslerMetricModel::Hermitian(h) => h.norm2(v),
            FinslerMetricModel::General { norm2, .. } => norm2(v),
        }
    }

    /// Largest relative violation of `|cv|^2 = |c|^2 |v|^2` over random
    /// samples. Pairs where both sides are infinite count as exact.
    pub fn homogeneity_defect(&self, samples: usize, seed: u64) -> T {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = T::zero();
        for _ in 0..samples {
            let v: Vec<Cx<T>> = (0..self.rank()).map(|_| gaussian(&mut rng)).collect();
            let c: Cx<T> = gaussian(&mut rng);
            let cv: Vec<Cx<T>> = v.iter().map(|z| *z * c).collect();
            let lhs = self.norm2(&cv);
            let rhs = abs2(c) * self.norm2(&v);
            if lhs == T::infinity() && rhs == T::infinity() {
                continue;
            }
            let d = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(T::lit(1e-300));
            if !(d <= worst) {
                worst = d;
            }
        }
        worst
    }
}

/// A section of the dual bundle over a base in `C^r`, with polynomial
/// coefficients `xi_i(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualFunctional<T: Real = f64> {
    pub components: Vec<Poly<T>>,
}

impl<T: Real> DualFunctional<T> {
    pub fn new(components: Vec<Poly<T>>) -> Self {
        DualFunctional { components }
    }

    pub fn constant(base_vars: usize, c: &[Cx<T>]) -> Self {
        DualFunctional { components: c.iter().map(|x| Poly::constant(base_vars, *x)).collect() }
    }

    pub fn rank(&self) -> usize {
        self.components.len()
    }

    pub fn eval(&self, t: &[Cx<T>]) -> Vec<Cx<T>> {
        self.components.iter().map(|p| p.eval(t)).collect()
    }

    /// `xi(t)(v)`, linear in `v`.
    pub fn pair(&self, t: &[Cx<T>], v: &[Cx<T>]) -> Cx<T> {
        bilinear(&self.eval(t), v)
    }
}

/// `sup { |c(v)| : |v|_h <= 1 }`, and `0` when every nonzero vector has
/// infinite length. Hermitian metrics use the closed form; general metrics
/// are searched by seeded sampling plus hill climbing and the result is a
/// lower bound.
pub fn dual_norm<T: Real>(metric: &FinslerMetricModel<T>, c: &[Cx<T>]) -> Result<T> {
    if c.len() != metric.rank() {
        return Err(LabError::Precondition("functional has the wrong rank".into()));
    }
    match metric {
        FinslerMetricModel::Hermitian(h) => {
            let l = h.log_dual_norm2(c);
            Ok(if l == T::neg_infinity() { T::zero() } else { (l * T::lit(0.5)).exp() })
        }
        FinslerMetricModel::General { rank, norm2 } => Ok(general_dual_norm(*rank, norm2.as_ref(), c)),
    }
}

fn general_dual_norm<T: Real>(rank: usize, h: &dyn Fn(&[Cx<T>]) -> T, c: &[Cx<T>]) -> T {
    let ratio = |v: &[Cx<T>]| -> T {
        let num = bilinear(c, v).norm_sqr().sqrt();
        let den = h(v);
        if den == T::infinity() || num == T::zero() {
            T::zero()
        } else if den > T::zero() {
            num / den.sqrt()
        } else {
            T::infinity()
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x6475_616c);
    let mut cands: Vec<Vec<Cx<T>>> = Vec::new();
    for i in 0..rank {
        let mut e = vec![czero(); rank];
        e[i] = Complex::new(T::one(), T::zero());
        cands.push(e);
    }
    cands.push(c.iter().map(|z| z.conj()).collect());
    for _ in 0..2048 {
        cands.push(random_unit(rank, &mut rng));
    }
    let (mut best_v, mut best) = (cands[0].clone(), T::zero());
    for v in cands {
        let r = ratio(&v);
        if r > best {
            best = r;
            best_v = v;
        }
    }
    if best == T::zero() || best == T::infinity() {
        return best;
    }
    let mut step = T::lit(0.1);
    let mut fails = 0;
    while step > T::lit(1e-12) {
        let d: Vec<Cx<T>> = random_unit(rank, &mut rng);
        let v: Vec<Cx<T>> = best_v.iter().zip(&d).map(|(x, y)| *x + *y * step).collect();
        let r = ratio(&v);
        if r > best {
            best = r;
            best_v = v;
            fails = 0;
        } else {
            fails += 1;
            if fails >= 24 {
                step *= T::lit(0.5);
                fails = 0;
            }
        }
    }
    best
}

/// A dense `rank^order` coefficient array; entry `(i_1, .., i_m)` sits at
/// `sum_k i_k rank^(m-k)` (the Kronecker layout).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Real = f64> {
    pub rank: usize,
    pub order: usize,
    pub data: Vec<Cx<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(rank: usize, order: usize, data: Vec<Cx<T>>) -> Result<Self> {
        if order == 0 || data.len() != rank.pow(order as u32) {
            return Err(LabError::Precondition(format!("tensor of rank {rank} and order {order} needs {} entries", rank.pow(order as u32))));
        }
        Ok(Tensor { rank, order, data })
    }

    /// `xi_1 (x) ... (x) xi_m`.
    pub fn decomposable(factors: &[Vec<Cx<T>>]) -> Self {
        let rank = factors[0].len();
        let mut data = vec![Complex::new(T::one(), T::zero())];
        for f in factors {
            assert_eq!(f.len(), rank);
            data = kron_vec(&data, f);
        }
        Tensor { rank, order: factors.len(), data }
    }

    pub fn scale(&self, c: Cx<T>) -> Self {
        Tensor { rank: self.rank, order: self.order, data: self.data.iter().map(|z| *z * c).collect() }
    }

    pub fn frobenius(&self) -> T {
        self.data.iter().fold(T::zero(), |a, z| a + abs2(*z)).sqrt()
    }

    fn digits(&self, mut flat: usize, out: &mut [usize]) {
        for k in (0..self.order).rev() {
            out[k] = flat % self.rank;
            flat /= self.rank;
        }
    }

    /// `xi'(x_1, .., x_m) = xi(M x_1, .., M x_m)` for `M` of shape `rank x k`.
    pub fn transformed(&self, m: &DMatrix<Cx<T>>) -> Self {
        assert_eq!(m.nrows(), self.rank);
        let k = m.ncols();
        let mut cur = self.data.clone();
        // mode-by-mode: shape (k^a, rank, rank^b) -> (k^a, k, rank^b)
        for mode in 0..self.order {
            let before = k.pow(mode as u32);
            let after = self.rank.pow((self.order - mode - 1) as u32);
            let mut next = vec![czero(); before * k * after];
            for a in 0..before {
                for i in 0..self.rank {
                    for b in 0..after {
                        let x = cur[(a * self.rank + i) * after + b];
                        if x == czero() {
                            continue;
                        }
                        for j in 0..k {
                            next[(a * k + j) * after + b] += x * m[(i, j)];
                        }
                    }
                }
            }
            cur = next;
        }
        Tensor { rank: k, order: self.order, data: cur }
    }

    /// Contracts every mode except those in `free` against `xs[mode]`; the
    /// result is indexed by the free modes in increasing order.
    pub fn contract(&self, xs: &[Vec<Cx<T>>], free: &[usize]) -> Vec<Cx<T>> {
        let mut out = vec![czero(); self.rank.pow(free.len() as u32)];
        let mut idx = vec![0usize; self.order];
        for (flat, x) in self.data.iter().enumerate() {
            if *x == czero() {
                continue;
            }
            self.digits(flat, &mut idx);
            let mut w = *x;
            let mut o = 0;
            for (k, &i) in idx.iter().enumerate() {
                if free.contains(&k) {
                    o = o * self.rank + i;
                } else {
                    w *= xs[k][i];
                }
            }
            out[o] += w;
        }
        out
    }

    pub fn eval(&self, xs: &[Vec<Cx<T>>]) -> Cx<T> {
        self.contract(xs, &[])[0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TensorNormOptions<T: Real = f64> {
    pub starts: usize,
    pub tol: T,
    pub max_iter: usize,
    pub seed: u64,
}

impl<T: Real> Default for TensorNormOptions<T> {
    fn default() -> Self {
        TensorNormOptions { starts: 16, tol: T::lit(1e-14), max_iter: 500, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorNormResult<T: Real = f64> {
    /// Best value found; a certified lower bound for the injective norm.
    pub value: T,
    pub converged: bool,
    /// Starts ending within `1e-8` (relative) of the best value.
    pub starts_agreeing: usize,
    /// Dense-grid value, computed for rank 2 only.
    pub grid_value: Option<T>,
}

fn top_singular<T: Real>(a: DMatrix<Cx<T>>) -> (T, Vec<Cx<T>>, Vec<Cx<T>>) {
    let svd = a.svd(true, true);
    let (k, s) = svd.singular_values.iter().enumerate().fold((0, T::neg_infinity()), |acc, (i, s)| if *s > acc.1 { (i, *s) } else { acc });
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let x = (0..u.nrows()).map(|r| u[(r, k)].conj()).collect();
    let y = (0..vt.ncols()).map(|c| vt[(k, c)].conj()).collect();
    (s, x, y)
}

fn sigma_max_2x2<T: Real>(m: &[Cx<T>]) -> T {
    let f = m.iter().fold(T::zero(), |a, z| a + abs2(*z));
    let det = abs2(m[0] * m[3] - m[1] * m[2]);
    let disc = (f * f - T::lit(4.0) * det).max(T::zero()).sqrt();
    ((f + disc) * T::lit(0.5)).sqrt()
}

fn unit2<T: Real>(theta: T, psi: T) -> Vec<Cx<T>> {
    vec![Complex::new(theta.cos(), T::zero()), cis(psi) * theta.sin()]
}

/// Dense direction-grid value of the Euclidean injective norm of a rank-2
/// tensor: grid over all but the last two vectors, exact 2x2 top singular
/// value for those, then pattern-search refinement of the best grid cell.
pub fn rank2_grid_norm<T: Real>(xi: &Tensor<T>) -> T {
    assert_eq!(xi.rank, 2);
    match xi.order {
        1 => return xi.frobenius(),
        2 => return sigma_max_2x2(&xi.data),
        _ => {}
    }
    let free_vecs = xi.order - 2;
    let free = [xi.order - 2, xi.order - 1];
    let value = |params: &[T]| -> T {
        let mut xs: Vec<Vec<Cx<T>>> = params.chunks(2).map(|p| unit2(p[0], p[1])).collect();
        xs.push(vec![czero(); 2]);
        xs.push(vec![czero(); 2]);
        sigma_max_2x2(&xi.contract(&xs, &free))
    };
    let (nt, np) = if free_vecs == 1 { (128usize, 256usize) } else { (24, 48) };
    let ht = T::frac_pi_2() / T::from_usize_lossy(nt - 1);
    let hp = T::two_pi() / T::from_usize_lossy(np);
    let cells = nt * np;
    let total = cells.pow(free_vecs as u32);
    let (mut best, mut best_p) = (T::neg_infinity(), vec![T::zero(); 2 * free_vecs]);
    let mut p = vec![T::zero(); 2 * free_vecs];
    for flat in 0..total {
        let mut r = flat;
        for v in 0..free_vecs {
            let c = r % cells;
            r /= cells;
            p[2 * v] = ht * T::from_usize_lossy(c / np);
            p[2 * v + 1] = hp * T::from_usize_lossy(c % np);
        }
        let f = value(&p);
        if f > best {
            best = f;
            best_p = p.clone();
        }
    }
    let mut h = ht.max(hp);
    while h > T::lit(1e-11) {
        let mut improved = false;
        for i in 0..best_p.len() {
            for s in [h, -h] {
                let mut q = best_p.clone();
                q[i] += s;
                let f = value(&q);
                if f > best {
                    best = f;
                    best_p = q;
                    improved = true;
                }
            }
        }
        if !improved {
            h *= T::lit(0.5);
        }
    }
    best
}

/// The injective tensor-power norm of `xi` in `(V*)^{(x)m}`:
/// `sup |xi(u_1, .., u_m)|` over `|u_i|_h <= 1`, where `dual_metric` is the
/// metric `h*` on `V*`. Alternating maximization over pairs of slots, each
/// step an exact top singular pair.
pub fn injective_tensor_norm<T: Real>(
    dual_metric: &HermitianMetric<T>,
    xi: &Tensor<T>,
    opts: &TensorNormOptions<T>,
) -> Result<TensorNormResult<T>> {
    if xi.rank != dual_metric.rank() {
        return Err(LabError::Precondition("tensor rank does not match the metric".into()));
    }
    if xi.rank > 4 || xi.order > 4 {
        return Err(LabError::Precondition("injective tensor norms are limited to rank <= 4 and order <= 4".into()));
    }
    let w = xi.transformed(&dual_metric.whitening());
    let k = w.rank;
    if k == 0 || w.frobenius() == T::zero() {
        return Ok(TensorNormResult { value: T::zero(), converged: true, starts_agreeing: opts.starts.max(1), grid_value: None });
    }
    if w.order == 1 {
        let v = w.frobenius();
        return Ok(TensorNormResult { value: v, converged: true, starts_agreeing: opts.starts.max(1), grid_value: Some(v) });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut finals = Vec::new();
    let mut best = (T::neg_infinity(), false);
    for _ in 0..opts.starts.max(1) {
        let mut xs: Vec<Vec<Cx<T>>> = (0..w.order).map(|_| random_unit(k, &mut rng)).collect();
        let mut val = w.eval(&xs).norm_sqr().sqrt();
        let mut converged = false;
        for _ in 0..opts.max_iter {
            let prev = val;
            for a in 0..w.order - 1 {
                let free = [a, a + 1];
                let c = w.contract(&xs, &free);
                let mat = DMatrix::from_fn(k, k, |i, j| c[i * k + j]);
                let (s, x, y) = top_singular(mat);
                xs[a] = x;
                xs[a + 1] = y;
                val = s;
            }
            if val - prev <= opts.tol * val {
                converged = true;
                break;
            }
        }
        finals.push(val);
        if val > best.0 {
            best = (val, converged);
        }
    }
    let agreeing = finals.iter().filter(|v| best.0 - **v <= T::lit(1e-8) * best.0).count();
    let grid_value = if k == 2 { Some(rank2_grid_norm(&w)) } else { None };
    Ok(TensorNormResult { value: best.0, converged: best.1, starts_agreeing: agreeing, grid_value })
}

/// The Hermitian tensor-power norm `sqrt(xi^H H^{(x)m} xi)`, for comparison.
pub fn hermitian_tensor_norm<T: Real>(dual_metric: &HermitianMetric<T>, xi: &Tensor<T>) -> Result<T> {
    if xi.rank != dual_metric.rank() {
        return Err(LabError::Precondition("tensor rank does not match the metric".into()));
    }
    Ok(xi.transformed(&dual_metric.whitening()).frobenius())
}

pub type MetricGenerator<T> = Arc<dyn Fn(&[Cx<T>]) -> Result<HermitianMetric<T>> + Send + Sync>;

/// Hermitian metrics over a base domain, either grid-sampled or produced by
/// a generator (which can also be sampled onto a grid).
#[derive(Clone)]
pub struct HermitianField<T: Real = f64> {
    pub base: Domain<T>,
    pub rank: usize,
    generator: Option<MetricGenerator<T>>,
    samples: Vec<(Vec<Cx<T>>, HermitianMetric<T>)>,
}

impl<T: Real> fmt::Debug for HermitianField<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HermitianField")
            .field("base", &self.base)
            .field("rank", &self.rank)
            .field("generated", &self.generator.is_some())
            .field("samples", &self.samples.len())
            .finish()
    }
}

impl<T: Real> HermitianField<T> {
    pub fn generated(
        base: Domain<T>,
        rank: usize,
        generator: impl Fn(&[Cx<T>]) -> Result<HermitianMetric<T>> + Send + Sync + 'static,
    ) -> Self {
        HermitianField { base, rank, generator: Some(Arc::new(generator)), samples: Vec::new() }
    }

    pub fn sampled(base: Domain<T>, samples: Vec<(Vec<Cx<T>>, HermitianMetric<T>)>) -> Result<Self> {
        let rank = samples.first().map(|s| s.1.rank()).unwrap_or(0);
        if samples.iter().any(|s| s.1.rank() != rank) {
            return Err(LabError::Precondition("sampled metrics differ in rank".into()));
        }
        Ok(HermitianField { base, rank, generator: None, samples })
    }

    /// `G(t) = e^{-|t|^2 ... }`-style fields: a constant metric times `e^{-f(t)}`.
    pub fn scaled_constant(base: Domain<T>, g0: HermitianMetric<T>, f: impl Fn(&[Cx<T>]) -> T + Send + Sync + 'static) -> Self {
        let rank = g0.rank();
        let m0 = g0.matrix();
        Self::generated(base, rank, move |t| HermitianMetric::new(m0.map(|z| z * f(t).neg().exp())))
    }

    pub fn has_generator(&self) -> bool {
        self.generator.is_some()
    }

    pub fn samples(&self) -> &[(Vec<Cx<T>>, HermitianMetric<T>)] {
        &self.samples
    }

    pub fn at(&self, t: &[Cx<T>]) -> Result<HermitianMetric<T>> {
        if let Some(g) = &self.generator {
            if !self.base.contains(t) {
                return Err(LabError::OutsideDomain(format!("{t:?}")));
            }
            return g(t);
        }
        self.samples
            .iter()
            .find(|s| s.0.as_slice() == t)
            .map(|s| s.1.clone())
            .ok_or_else(|| LabError::Precondition(format!("no sample of the field at {t:?}")))
    }

    /// Evaluates the generator on `grid` and stores the samples.
    pub fn materialize(mut self, grid: &[Vec<Cx<T>>]) -> Result<Self> {
        let metrics: Result<Vec<HermitianMetric<T>>> = grid.par_iter().map(|t| self.at(t)).collect();
        self.samples = grid.iter().cloned().zip(metrics?).collect();
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PositivityRow<T: Real = f64> {
    pub point: Vec<Cx<T>>,
    pub section: usize,
    pub log_dual_norm: T,
    /// Largest `value - circle average`; `None` when no circle fit.
    pub worst_deficit: Option<T>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PositivityReport<T: Real = f64> {
    pub rows: Vec<PositivityRow<T>>,
    /// `(section, point)` pairs where the section vanishes.
    pub skipped: Vec<(usize, Vec<Cx<T>>)>,
    pub pass: bool,
}

impl<T: Real> PositivityReport<T> {
    pub fn worst_deficit(&self) -> Option<T> {
        self.rows.iter().filter_map(|r| r.worst_deficit).fold(None, |a: Option<T>, d| Some(a.map_or(d, |x| x.max(d))))
    }
}

fn point_key<T: Real>(t: &[Cx<T>]) -> Vec<(u64, u64)> {
    t.iter().map(|z| (z.re.as_f64().to_bits(), z.im.as_f64().to_bits())).collect()
}

/// Sub-mean-value test of `t -> ln |xi(t)|_{h*}` at every grid point inside
/// the base, for each section. Needs a generated field.
pub fn griffiths_positivity_test<T: Real>(
    field: &HermitianField<T>,
    sections: &[DualFunctional<T>],
    grid: &[Vec<Cx<T>>],
    opts: &SubMeanOptions<T>,
) -> Result<PositivityReport<T>> {
    if !field.has_generator() {
        return Err(LabError::Precondition("positivity testing needs a field that can be evaluated off the grid".into()));
    }
    if sections.iter().any(|s| s.rank() != field.rank) {
        return Err(LabError::Precondition("section rank does not match the field".into()));
    }
    let pts: Vec<&Vec<Cx<T>>> = grid.iter().filter(|t| field.base.contains(t)).collect();
    let per_point: Vec<Vec<(Option<PositivityRow<T>>, usize)>> = pts
        .par_iter()
        .map(|t| {
            let mut cache: HashMap<Vec<(u64, u64)>, Option<HermitianMetric<T>>> = HashMap::new();
            let mut out = Vec::new();
            for (si, sec) in sections.iter().enumerate() {
                let mut f = |p: &[Cx<T>]| -> T {
                    let key = point_key(p);
                    let g = cache.entry(key).or_insert_with(|| field.at(p).ok());
                    match g {
                        Some(g) => g.log_dual_norm2(&sec.eval(p)) * T::lit(0.5),
                        None => T::lit(f64::NAN),
                    }
                };
                let center = f(t);
                if center == T::neg_infinity() {
                    out.push((None, si));
                    continue;
                }
                let v = test_submeanvalue(&mut f, |p| field.base.contains(p), t, opts);
                out.push((
                    Some(PositivityRow {
                        point: (*t).clone(),
                        section: si,
                        log_dual_norm: center,
                        worst_deficit: v.worst.map(|w| w.deficit),
                        pass: v.pass,
                    }),
                    si,
                ));
            }
            out
        })
        .collect();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (t, list) in pts.iter().zip(per_point) {
        for (row, si) in list {
            match row {
                Some(r) => rows.push(r),
                None => skipped.push((si, (*t).clone())),
            }
        }
    }
    rows.sort_by_key(|r| r.section);
    let pass = rows.iter().all(|r| r.pass);
    Ok(PositivityReport { rows, skipped, pass })
}

/// The truncated Hodge bundle: `G(t)` is the Gram matrix of the degree-`d`
/// monomials in `L^2(D, e^{-phi_t})`. The weight must be bounded on the
/// quadrature nodes of every slice that is evaluated.
pub fn hodge_bundle_model<T: Real>(
    fw: &FamilyWeight<T>,
    degree: u32,
    fiber_rule: Arc<QuadratureRule<T>>,
    grid: &[Vec<Cx<T>>],
) -> Result<HermitianField<T>> {
    let n = fw.family.fiber_dim();
    let basis = MonomialBasis::total_degree(n, degree);
    let rank = basis.len();
    let fiber = fw.family.fiber.clone();
    let fw2 = fw.clone();
    let generator = move |t: &[Cx<T>]| -> Result<HermitianMetric<T>> {
        let slice = fw2.slice(t);
        for j in 0..fiber_rule.len() {
            if slice.evaluate(fiber_rule.node(j))?.clamped {
                return Err(LabError::Precondition("weight is unbounded on the fiber".into()));
            }
        }
        let space = WeightedSpace::build(&fiber, fiber_rule.clone(), slice, basis.clone(), 1, T::one())?;
        if !space.divisor().is_empty() {
            return Err(LabError::Precondition("weight is unbounded on the fiber".into()));
        }
        Ok(HermitianMetric::from_gram(space.gram()?))
    };
    HermitianField::generated(fw.family.base.clone(), rank, generator).materialize(grid)
}

/// The evaluation functional `u -> u(z)` on the truncated fiber space.
pub fn evaluation_functional<T: Real>(fiber_dim: usize, degree: u32, z: &[Cx<T>]) -> Vec<Cx<T>> {
    crate::basis::point_evaluation_vector(&MonomialBasis::total_degree(fiber_dim, degree), z)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultipleExtensionOptions<T: Real = f64> {
    pub p: T,
    pub m_list: Vec<u32>,
    pub degree: u32,
    /// Random unit directions tried at each anchor on top of the axes.
    pub extra_directions: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: T,
}

impl<T: Real> Default for MultipleExtensionOptions<T> {
    fn default() -> Self {
        MultipleExtensionOptions {
            p: T::lit(2.0),
            m_list: vec![1, 2, 3],
            degree: 8,
            extra_directions: 2,
            seed: 0,
            max_iter: 200,
            tol: T::lit(1e-10),
        }
    }
}

struct NodeData<T: Real> {
    /// `ln w_j`.
    log_w: Vec<T>,
    basis_vals: Vec<Vec<Cx<T>>>,
    metrics: Vec<DMatrix<Cx<T>>>,
}

fn kron_power<T: Real>(h: &DMatrix<Cx<T>>, m: u32) -> DMatrix<Cx<T>> {
    let mut out = h.clone();
    for _ in 1..m {
        out = out.kronecker(h);
    }
    out
}

/// Gram of sections `f = sum_{a, I} c_{aI} b_a e_I` with node norm
/// `f^H K_j f`, `K_j = H_j^{(x)m}`, and extra node log-weights.
fn section_gram<T: Real>(nd: &NodeData<T>, m: u32, extra: &[T]) -> Result<(GramData<T>, Vec<T>, Vec<DMatrix<Cx<T>>>)> {
    let nb = nd.basis_vals[0].len();
    let mut ks = Vec::with_capacity(nd.metrics.len());
    let mut lw = Vec::with_capacity(nd.metrics.len());
    for (j, h) in nd.metrics.iter().enumerate() {
        let k = kron_power(h, m);
        let s = (0..k.nrows()).map(|i| k[(i, i)].re).fold(T::zero(), |a, b| a.max(b));
        if !(s > T::zero()) {
            return Err(LabError::Precondition("bundle metric vanishes at a quadrature node".into()));
        }
        lw.push(nd.log_w[j] + s.ln() + extra[j]);
        ks.push(k.map(|z| z / s));
    }
    let r = ks[0].nrows();
    let top = lw.iter().fold(T::neg_infinity(), |a, b| a.max(*b));
    let dim = nb * r;
    const CH: usize = 64;
    let chunks: Vec<DMatrix<Cx<T>>> = (0..ks.len())
        .collect::<Vec<_>>()
        .par_chunks(CH)
        .map(|js| {
            let mut g = DMatrix::from_element(dim, dim, czero());
            for &j in js {
                let w = (lw[j] - top).exp();
                let b = &nd.basis_vals[j];
                for a in 0..nb {
                    let ca = b[a].conj() * w;
                    for bb in 0..nb {
                        let f = ca * b[bb];
                        for i in 0..r {
                            for k in 0..r {
                                g[(a * r + i, bb * r + k)] += f * ks[j][(i, k)];
                            }
                        }
                    }
                }
            }
            g
        })
        .collect();
    let mut g = DMatrix::from_element(dim, dim, czero());
    for c in chunks {
        g += c;
    }
    let scales: Vec<T> = lw.iter().zip(extra).map(|(l, e)| *l - *e).collect();
    Ok((GramData::from_matrix(g, top, T::lit(DEFAULT_EPS_RANK))?, scales, ks))
}

/// `ln f_j^H K_j f_j` at every node (with `K_j` unnormalized via `scales`).
fn node_log_norms<T: Real>(nd: &NodeData<T>, coeffs: &[Cx<T>], r: usize, ks: &[DMatrix<Cx<T>>], scales: &[T]) -> Vec<T> {
    let nb = nd.basis_vals[0].len();
    (0..ks.len())
        .map(|j| {
            let mut f = vec![czero::<T>(); r];
            for a in 0..nb {
                for i in 0..r {
                    f[i] += nd.basis_vals[j][a] * coeffs[a * r + i];
                }
            }
            let mut q = czero::<T>();
            for i in 0..r {
                for k in 0..r {
                    q += f[i].conj() * ks[j][(i, k)] * f[k];
                }
            }
            // scales hold ln w_j + ln s_j; remove the quadrature weight
            q.re.max(T::zero()).ln() + scales[j] - nd.log_w[j]
        })
        .collect()
}

/// Measures the multiple `L^p` extension constants of a Hermitian bundle
/// over `D`: for each anchor `z`, unit `a` in `E_z` and `m`, the minimal
/// `int_D |f|^p` over polynomial sections of `E^{(x)m}` with `f(z) = a^{(x)m}`.
/// The pointwise norm on `E^{(x)m}` is the Hermitian tensor norm, which
/// agrees with the injective one on the decomposable value `a^{(x)m}`.
pub fn check_multiple_extension<T: Real>(
    field: &HermitianField<T>,
    rule: &QuadratureRule<T>,
    anchors: &[Vec<Cx<T>>],
    opts: &MultipleExtensionOptions<T>,
) -> Result<ExtensionConstantSeries<T>> {
    let r = field.rank;
    let n = field.base.dimension();
    let basis = MonomialBasis::total_degree(n, opts.degree);
    let nb = basis.len();
    for &m in &opts.m_list {
        let big = r.pow(m);
        if m == 0 || big > 256 || big * nb > 2048 {
            return Err(LabError::Precondition(format!(
                "tensor power m = {m} of rank {r} with {nb} monomials exceeds the desk-scale cap"
            )));
        }
    }
    let mut nd = NodeData { log_w: Vec::new(), basis_vals: Vec::new(), metrics: Vec::new() };
    for j in 0..rule.len() {
        let z = rule.node(j);
        nd.log_w.push(rule.weights()[j].ln());
        let mut b = vec![czero(); nb];
        basis.eval_into(z, &mut b);
        nd.basis_vals.push(b);
        nd.metrics.push(field.at(z)?.matrix());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut entries = Vec::new();
    let half_p = opts.p * T::lit(0.5);
    for &m in &opts.m_list {
        let big = r.pow(m);
        let zero_extra = vec![T::zero(); rule.len()];
        let (g2, scales, ks) = section_gram(&nd, m, &zero_extra)?;
        for (ai, z0) in anchors.iter().enumerate() {
            let h0 = field.at(z0)?;
            let mut dirs: Vec<Vec<Cx<T>>> = (0..r)
                .map(|i| {
                    let mut e = vec![czero(); r];
                    e[i] = Complex::new(T::one(), T::zero());
                    e
                })
                .collect();
            for _ in 0..opts.extra_directions {
                dirs.push(random_unit(r, &mut rng));
            }
            let b0 = crate::basis::point_evaluation_vector(&basis, z0);
            let mut rows = DMatrix::from_element(big, nb * big, czero());
            for i in 0..big {
                for a in 0..nb {
                    rows[(i, a * big + i)] = b0[a];
                }
            }
            let mut log_c = T::neg_infinity();
            let mut all_conv = true;
            for d in dirs {
                let len = h0.norm2(&d).sqrt();
                if !(len > T::zero()) || len == T::infinity() {
                    continue;
                }
                let a: Vec<Cx<T>> = d.iter().map(|z| *z / len).collect();
                let mut target = vec![Complex::new(T::one(), T::zero())];
                for _ in 0..m {
                    target = kron_vec(&target, &a);
                }
                let (coeffs, v2) = g2.constrained_min(&rows, &target)?;
                let mut lc = v2.ln() + g2.log_scale();
                if (half_p - T::one()).abs() > T::lit(1e-15) {
                    let objective = |c: &[Cx<T>]| -> (T, Vec<T>) {
                        let ln = node_log_norms(&nd, c, big, &ks, &scales);
                        let terms: Vec<T> = ln.iter().zip(&nd.log_w).map(|(q, w)| *w + half_p * *q).collect();
                        (log_sum_exp(&terms), ln)
                    };
                    let (mut obj, mut ln) = objective(&coeffs);
                    let mut conv = false;
                    for _ in 0..opts.max_iter {
                        let lmax = ln.iter().fold(T::neg_infinity(), |a, b| a.max(*b));
                        let floor = lmax + T::lit(1e-14).ln();
                        let extra: Vec<T> = ln.iter().map(|q| (half_p - T::one()) * q.max(floor)).collect();
                        let (gk, _, _) = section_gram(&nd, m, &extra)?;
                        let (next, _) = gk.constrained_min(&rows, &target)?;
                        let (o2, l2) = objective(&next);
                        let change = (obj - o2).abs();
                        if o2 <= obj {
                            obj = o2;
                            ln = l2;
                        }
                        if change < opts.tol {
                            conv = true;
                            break;
                        }
                    }
                    all_conv &= conv;
                    lc = obj;
                }
                log_c = log_c.max(lc);
            }
            entries.push(ConstantEntry { m, anchor: ai, log_c, converged: all_conv });
        }
    }
    Ok(ExtensionConstantSeries { anchors: anchors.to_vec(), m_list: opts.m_list.clone(), entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cx;

    fn herm(rows: &[&[(f64, f64)]]) -> HermitianMetric<f64> {
        let n = rows.len();
        HermitianMetric::new(DMatrix::from_fn(n, n, |i, j| cx(rows[i][j].0, rows[i][j].1))).unwrap()
    }

    #[test]
    fn dual_norm_examples() {
        let h = FinslerMetricModel::Hermitian(HermitianMetric::diagonal(&[4.0, 9.0]).unwrap());
        let e1 = [cx(1.0, 0.0), cx(0.0, 0.0)];
        assert!((dual_norm(&h, &e1).unwrap() - 0.5f64).abs() < 1e-14);
        assert_eq!(dual_norm(&h, &[cx(0.0, 0.0), cx(0.0, 0.0)]).unwrap(), 0.0);
        let inf = FinslerMetricModel::<f64>::infinite(2);
        assert_eq!(dual_norm(&inf, &e1).unwrap(), 0.0);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let m: DMatrix<Cx<f64>> = DMatrix::from_row_slice(2, 2, &[cx(1.0, 0.0), cx(2.0, 0.0), cx(2.0, 0.0), cx(1.0, 0.0)]);
        assert!(matches!(HermitianMetric::new(m), Err(LabError::Indefinite { .. })));
    }

    #[test]
    fn general_evaluator_matches_closed_form() {
        let g = herm(&[&[(2.0, 0.0), (0.5, 0.3)], &[(0.5, -0.3), (1.0, 0.0)]]);
        let g2 = g.clone();
        let general = FinslerMetricModel::general(2, move |v: &[Cx<f64>]| g2.norm2(v));
        let c = [cx(0.3, -0.2), cx(1.1, 0.4)];
        let exact = dual_norm(&FinslerMetricModel::Hermitian(g), &c).unwrap();
        let approx = dual_norm(&general, &c).unwrap();
        assert!(approx <= exact * (1.0 + 1e-12));
        assert!((approx - exact).abs() < 1e-6 * exact);
    }

    #[test]
    fn identity_tensor_has_unit_norm() {
        let mut data = vec![cx(0.0, 0.0); 4];
        data[0] = cx(1.0, 0.0);
        data[3] = cx(1.0, 0.0);
        let xi = Tensor::<f64>::new(2, 2, data).unwrap();
        let r = injective_tensor_norm(&HermitianMetric::identity(2), &xi, &TensorNormOptions::default()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
        assert!((r.grid_value.unwrap() - 1.0).abs() < 1e-12);
        let h = hermitian_tensor_norm(&HermitianMetric::identity(2), &xi).unwrap();
        assert!((h - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn kron_layout_matches_decomposable() {
        let a = vec![cx(1.0f64, 2.0), cx(0.5, 0.0)];
        let b = vec![cx(0.0, 1.0), cx(3.0, 0.0)];
        let t = Tensor::decomposable(&[a.clone(), b.clone()]);
        assert_eq!(t.data[1], a[0] * b[1]);
        assert_eq!(t.data[2], a[1] * b[0]);
        let x: Vec<Vec<Cx<f64>>> = vec![vec![cx(0.3, 0.1), cx(-0.2, 0.5)], vec![cx(1.0, 0.0), cx(0.1, -0.1)]];
        let direct = bilinear(&a, &x[0]) * bilinear(&b, &x[1]);
        assert!((t.eval(&x) - direct).norm() < 1e-14);
    }

    #[test]
    fn sigma_closed_form() {
        let m = [cx(1.0f64, 0.5), cx(0.2, 0.0), cx(-0.3, 0.1), cx(0.7, -0.4)];
        let a = DMatrix::from_row_slice(2, 2, &m);
        let s: f64 = a.singular_values().max();
        assert!((sigma_max_2x2(&m) - s).abs() < 1e-12);
    }
}
