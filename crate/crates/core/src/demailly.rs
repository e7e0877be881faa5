//! The regularizing sequence `phi_m = (1/m) log K_{m phi, p}`, extension
//! constants `C_m(z0)`, the two-sided sandwich bound and the growth-rate
//! classification of weights.
//!
//! `K_{m phi, p}(z) = 1 / min { int |f|^p e^{-m phi} : f(z) = 1 }` with
//! `p = 2/k`. The minimization reuses the m-kernel engine with exponent `k`
//! and weight scale `m`, so `ln K_{m phi, p} = ln K_engine / k`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::basis::MonomialBasis;
use crate::bergman::{KernelSolver, SolverOptions};
use crate::domain::{ball_volume, Domain, QuadratureRule};
use crate::error::{LabError, Result};
use crate::scalar::{cis, Cx, Real};
use crate::space::WeightedSpace;
use crate::weights::WeightProfile;

/// `degree(m) = min(d_max, d0 + 2m)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DegreePolicy {
    pub d0: u32,
    pub d_max: u32,
}

impl DegreePolicy {
    pub fn degree(&self, m: u32) -> u32 {
        (self.d0 + 2 * m).min(self.d_max)
    }

    pub fn fixed(d: u32) -> Self {
        DegreePolicy { d0: d, d_max: d }
    }
}

/// Everything needed to evaluate `K_{m phi, p}` for a range of `m`.
#[derive(Clone, Debug)]
pub struct Regularizer<T: Real = f64> {
    pub domain: Domain<T>,
    pub rule: Arc<QuadratureRule<T>>,
    pub profile: WeightProfile<T>,
    /// `p = 2/k`.
    pub k: u32,
    pub degree: DegreePolicy,
    pub opts: SolverOptions<T>,
}

/// `phi_m` sampled on a grid.
#[derive(Clone, Debug)]
pub struct RegularizationField<T: Real = f64> {
    pub m: u32,
    pub degree: u32,
    pub points: Vec<Vec<Cx<T>>>,
    /// `phi_m(z)`; `-inf` where the kernel vanishes.
    pub values: Vec<T>,
    pub converged: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstantEntry<T: Real = f64> {
    pub m: u32,
    pub anchor: usize,
    /// `ln C_m(z0)`; `+inf` when the kernel vanishes at the anchor.
    pub log_c: T,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct ExtensionConstantSeries<T: Real = f64> {
    pub anchors: Vec<Vec<Cx<T>>>,
    pub m_list: Vec<u32>,
    pub entries: Vec<ConstantEntry<T>>,
}

impl<T: Real> ExtensionConstantSeries<T> {
    /// `g_m = (1/m) ln max_{z0} C_m(z0)` and the maximizing anchor.
    pub fn growth(&self, m: u32) -> Option<(T, usize)> {
        self.entries
            .iter()
            .filter(|e| e.m == m)
            .fold(None, |acc: Option<(T, usize)>, e| match acc {
                Some((v, _)) if v >= e.log_c => acc,
                _ => Some((e.log_c, e.anchor)),
            })
            .map(|(v, a)| (v / T::from_u32(m).unwrap(), a))
    }

    /// `ln max_{z0} C_m(z0)`.
    pub fn log_max_constant(&self, m: u32) -> Option<T> {
        self.growth(m).map(|(g, _)| g * T::from_u32(m).unwrap())
    }

    pub fn all_converged(&self, m: u32) -> bool {
        self.entries.iter().filter(|e| e.m == m).all(|e| e.converged)
    }
}

impl<T: Real> Regularizer<T> {
    pub fn solver(&self, m: u32) -> Result<KernelSolver<T>> {
        let n = self.domain.dimension();
        let basis = MonomialBasis::total_degree(n, self.degree.degree(m));
        let space = WeightedSpace::build(
            &self.domain,
            self.rule.clone(),
            self.profile.clone(),
            basis,
            self.k,
            T::from_u32(m).unwrap(),
        )?;
        KernelSolver::new(space)
    }

    /// `ln K_{m phi, p}(z)` and the solver convergence flag.
    pub fn log_kernel(&self, solver: &KernelSolver<T>, z: &[Cx<T>]) -> Result<(T, bool)> {
        let kv = solver.kernel(z, &self.opts)?;
        Ok((kv.log_value / T::from_u32(self.k).unwrap(), kv.converged()))
    }

    /// `phi_m(z) = (1/m) ln K_{m phi, p}(z)` on `grid`.
    pub fn demailly_step(&self, m: u32, grid: &[Vec<Cx<T>>]) -> Result<RegularizationField<T>> {
        let solver = self.solver(m)?;
        let mf = T::from_u32(m).unwrap();
        let vals: Vec<Result<(T, bool)>> = grid.par_iter().map(|z| self.log_kernel(&solver, z)).collect();
        let mut values = Vec::with_capacity(grid.len());
        let mut converged = Vec::with_capacity(grid.len());
        for v in vals {
            let (lk, c) = v?;
            values.push(lk / mf);
            converged.push(c);
        }
        Ok(RegularizationField { m, degree: self.degree.degree(m), points: grid.to_vec(), values, converged })
    }

    /// `C_m(z0) = e^{m phi(z0)} / K_{m phi, p}(z0)` for every anchor and `m`.
    pub fn measure_extension_constants(&self, anchors: &[Vec<Cx<T>>], m_list: &[u32]) -> Result<ExtensionConstantSeries<T>> {
        let mut phis = Vec::with_capacity(anchors.len());
        for a in anchors {
            let v = self.profile.evaluate(a)?;
            if v.clamped {
                return Err(LabError::Precondition(format!("weight is clamped at anchor {a:?}")));
            }
            phis.push(v.value);
        }
        let mut entries = Vec::new();
        for &m in m_list {
            let field = self.demailly_step(m, anchors)?;
            let mf = T::from_u32(m).unwrap();
            for (i, (phi_m, conv)) in field.values.iter().zip(&field.converged).enumerate() {
                let log_k = *phi_m * mf;
                let log_c = if log_k == T::neg_infinity() { T::infinity() } else { mf * phis[i] - log_k };
                entries.push(ConstantEntry { m, anchor: i, log_c, converged: *conv });
            }
        }
        Ok(ExtensionConstantSeries { anchors: anchors.to_vec(), m_list: m_list.to_vec(), entries })
    }

    /// Sandwich slacks for every `m` in `m_list` on `grid`.
    ///
    /// The constant is the largest `C_m(z0)` over the anchors and the valid
    /// grid points; points closer than `r(m) = e^{-sqrt(m)/n}` to the
    /// boundary are skipped.
    pub fn sandwich_bounds(&self, grid: &[Vec<Cx<T>>], anchors: &[Vec<Cx<T>>], m_list: &[u32]) -> Result<SandwichReport<T>> {
        let n = self.domain.dimension();
        let nf = T::from_usize_lossy(n);
        let mut rows = Vec::new();
        let mut skipped = Vec::new();
        for &m in m_list {
            let mf = T::from_u32(m).unwrap();
            let r = (-mf.sqrt() / nf).exp();
            let valid: Vec<usize> = (0..grid.len()).filter(|&i| self.domain.boundary_distance(&grid[i]) > r).collect();
            skipped.extend((0..grid.len()).filter(|i| !valid.contains(i)).map(|i| (m, i)));
            let mut pts: Vec<Vec<Cx<T>>> = valid.iter().map(|&i| grid[i].clone()).collect();
            pts.extend(anchors.iter().cloned());
            let field = self.demailly_step(m, &pts)?;
            let mut log_c = T::neg_infinity();
            for (z, phi_m) in pts.iter().zip(&field.values) {
                let phi = self.profile.value(z);
                let lc = if *phi_m == T::neg_infinity() { T::infinity() } else { mf * (phi - *phi_m) };
                log_c = log_c.max(lc);
            }
            let log_vol = ball_volume(n, r).ln();
            for (slot, &i) in valid.iter().enumerate() {
                let z = &grid[i];
                let phi_m = field.values[slot];
                let phi = self.profile.value(z);
                let lower = phi_m - (phi - log_c / mf);
                let sup = sup_on_ball(&self.profile, z, r, 0);
                let upper = sup - log_vol / mf - phi_m;
                rows.push(SandwichRow { point: i, m, radius: r, lower_slack: lower, upper_slack: upper, log_c });
            }
        }
        Ok(SandwichReport { rows, skipped })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SandwichRow<T: Real = f64> {
    pub point: usize,
    pub m: u32,
    pub radius: T,
    /// `phi_m - (phi - ln C_m / m)`.
    pub lower_slack: T,
    /// `sup_{B(z,r)} phi - (1/m) ln vol B(z,r) - phi_m`.
    pub upper_slack: T,
    pub log_c: T,
}

#[derive(Clone, Debug)]
pub struct SandwichReport<T: Real = f64> {
    pub rows: Vec<SandwichRow<T>>,
    /// `(m, grid index)` pairs too close to the boundary.
    pub skipped: Vec<(u32, usize)>,
}

impl<T: Real> SandwichReport<T> {
    pub fn worst_slack(&self) -> T {
        self.rows.iter().fold(T::infinity(), |a, r| a.min(r.lower_slack).min(r.upper_slack))
    }

    pub fn violations(&self, tol: T) -> Vec<&SandwichRow<T>> {
        self.rows.iter().filter(|r| r.lower_slack < -tol || r.upper_slack < -tol).collect()
    }
}

/// Sampled `sup_{B(z,r)} phi` over 512 points plus the center: a lower
/// bound for the true supremum.
pub fn sup_on_ball<T: Real>(profile: &WeightProfile<T>, z: &[Cx<T>], r: T, seed: u64) -> T {
    let n = z.len();
    let mut best = profile.value(z);
    if n == 1 {
        for i in 1..=16 {
            let rho = r * T::from_usize_lossy(i) / T::lit(16.0);
            for j in 0..32 {
                let th = T::two_pi() * T::from_usize_lossy(j) / T::lit(32.0);
                best = best.max(profile.value(&[z[0] + cis(th) * rho]));
            }
        }
        return best;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..512 {
        let v: Vec<Cx<T>> = (0..n)
            .map(|_| Complex::new(T::lit(rng.gen_range(-1.0..1.0)), T::lit(rng.gen_range(-1.0..1.0))))
            .collect();
        let nv = crate::scalar::norm(&v);
        let rad = r * T::lit(rng.gen::<f64>().powf(1.0 / (2 * n) as f64));
        let p: Vec<Cx<T>> = z.iter().zip(&v).map(|(a, b)| *a + *b * (rad / nv)).collect();
        best = best.max(profile.value(&p));
    }
    best
}

/// Default anchors: the center and two rings of four points at angles
/// `pi/4 + k pi/2`, scaled by the domain's first radius.
pub fn default_anchors<T: Real>(domain: &Domain<T>) -> Vec<Vec<Cx<T>>> {
    let n = domain.dimension();
    let (center, radius) = match domain {
        Domain::Disc { center, radius } => (vec![*center], *radius),
        Domain::Polydisc { center, radii } => (center.clone(), radii.iter().copied().fold(T::infinity(), |a, b| a.min(b))),
        Domain::Ball { center, radius } => (center.clone(), *radius),
        Domain::Annulus { center, inner, outer } => {
            let mid = (*inner + *outer) * T::lit(0.5);
            return (0..8)
                .map(|k| vec![*center + cis(T::pi() / T::lit(4.0) + T::pi() * T::lit(0.25 * k as f64)) * mid])
                .collect();
        }
        Domain::Product(_) => (vec![Complex::new(T::zero(), T::zero()); n], T::one()),
    };
    let mut out = vec![center.clone()];
    for rr in [0.3, 0.6] {
        for k in 0..4 {
            let e = cis(T::pi() / T::lit(4.0) + T::pi() * T::lit(0.5 * k as f64)) * (radius * T::lit(rr));
            let mut p = center.clone();
            p[0] += e;
            out.push(p);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict<T: Real = f64> {
    PshConsistent { limit: T },
    NonPsh { anchor: usize, limit: T },
    Inconclusive { reason: String },
}

impl<T: Real> Verdict<T> {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::PshConsistent { .. } => "psh-consistent",
            Verdict::NonPsh { .. } => "non-psh",
            Verdict::Inconclusive { .. } => "inconclusive",
        }
    }
}

/// Least-squares fit of `g_m = a + b/m + c ln(m)/m` over the last `m_tail`
/// entries; fewer parameters are used when there are too few points.
/// Returns the extrapolated limit `a`.
pub fn extrapolate_growth<T: Real>(ms: &[u32], gs: &[T]) -> T {
    let k = ms.len();
    let cols = k.min(3);
    if cols == 0 {
        return T::lit(f64::NAN);
    }
    let mut a = DMatrix::<f64>::zeros(k, cols);
    let mut b = DVector::<f64>::zeros(k);
    for (i, (&m, g)) in ms.iter().zip(gs).enumerate() {
        let mf = m as f64;
        a[(i, 0)] = 1.0;
        if cols > 1 {
            a[(i, 1)] = 1.0 / mf;
        }
        if cols > 2 {
            a[(i, 2)] = mf.ln() / mf;
        }
        b[i] = g.as_f64();
    }
    let svd = a.svd(true, true);
    match svd.solve(&b, 1e-14) {
        Ok(x) => T::lit(x[0]),
        Err(_) => T::lit(f64::NAN),
    }
}

pub fn classify_weight<T: Real>(series: &ExtensionConstantSeries<T>, m_tail: usize, threshold: T) -> Verdict<T> {
    let mut ms: Vec<u32> = series.m_list.clone();
    ms.sort_unstable();
    ms.dedup();
    if ms.len() < m_tail || m_tail == 0 {
        return Verdict::Inconclusive { reason: format!("need {m_tail} values of m, have {}", ms.len()) };
    }
    let tail = &ms[ms.len() - m_tail..];
    if let Some(m) = tail.iter().find(|&&m| !series.all_converged(m)) {
        return Verdict::Inconclusive { reason: format!("kernel solve did not converge at m = {m}") };
    }
    let mut gs = Vec::with_capacity(tail.len());
    for &m in tail {
        match series.growth(m) {
            Some((g, a)) if g == T::infinity() => return Verdict::NonPsh { anchor: a, limit: T::infinity() },
            Some((g, _)) => gs.push(g),
            None => return Verdict::Inconclusive { reason: format!("no entries for m = {m}") },
        }
    }
    let limit = extrapolate_growth(tail, &gs);
    if limit != limit {
        return Verdict::Inconclusive { reason: "growth fit failed".into() };
    }
    if limit <= threshold {
        Verdict::PshConsistent { limit }
    } else {
        let (_, anchor) = series.growth(*tail.last().unwrap()).unwrap();
        Verdict::NonPsh { anchor, limit }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::build_quadrature;
    use crate::scalar::cx;
    use crate::weights::VarLayout;
    use std::f64::consts::PI;

    fn reg(src: &str, d: DegreePolicy) -> Regularizer<f64> {
        let domain = Domain::unit_disc();
        let rule = Arc::new(build_quadrature(&domain, 48, 96).unwrap());
        let profile = WeightProfile::parse(src, VarLayout::domain(1)).unwrap();
        Regularizer { domain, rule, profile, k: 1, degree: d, opts: SolverOptions::default() }
    }

    #[test]
    fn flat_weight_step_matches_closed_form() {
        let r = reg("0", DegreePolicy::fixed(30));
        let z = vec![cx(0.3, 0.2)];
        for m in [1, 3] {
            let f = r.demailly_step(m, std::slice::from_ref(&z)).unwrap();
            let exact = -(PI * (1.0 - 0.13f64).powi(2)).ln() / m as f64;
            assert!((f.values[0] - exact).abs() < 1e-9, "m={m}");
        }
    }

    #[test]
    fn gaussian_constants() {
        let r = reg("abs2(z)", DegreePolicy { d0: 6, d_max: 30 });
        let s = r.measure_extension_constants(&[vec![cx(0.0, 0.0)]], &[1, 2, 5]).unwrap();
        for e in &s.entries {
            let m = e.m as f64;
            let exact = PI * (1.0 - (-m).exp()) / m;
            assert!((e.log_c.exp() - exact).abs() < 1e-10 * exact);
        }
    }

    #[test]
    fn growth_fit_recovers_limit() {
        let ms = [5u32, 6, 7, 8];
        let gs: Vec<f64> = ms.iter().map(|&m| 1.0 + 1.1 / m as f64 - (m as f64).ln() / m as f64).collect();
        assert!((extrapolate_growth(&ms, &gs) - 1.0).abs() < 1e-10);
        assert_eq!(extrapolate_growth(&[4u32], &[0.3f64]), 0.3);
    }

    #[test]
    fn degree_policy() {
        let p = DegreePolicy { d0: 8, d_max: 20 };
        assert_eq!(p.degree(1), 10);
        assert_eq!(p.degree(10), 20);
    }

    #[test]
    fn anchors_avoid_the_real_axis() {
        let a = default_anchors(&Domain::<f64>::unit_disc());
        assert_eq!(a.len(), 9);
        assert!(a.iter().all(|p| (p[0] - cx(0.3, 0.0)).norm() > 0.1));
    }
}
