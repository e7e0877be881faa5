//! Families of weighted domains: relative m-Bergman kernels `K_{m,t}(z)`,
//! plurisubharmonicity probes along holomorphic sections, fiber-product
//! powers and the integral minimum principle.
//!
//! Slice spaces use the m-Bergman normalization `int |u|^{2/m} e^{-phi_t/m}`,
//! so adding `c(t)` to the weight multiplies `K_{m,t}` by `e^{c(t)}`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::basis::MonomialBasis;
use crate::bergman::{KernelSolver, SolverOptions};
use crate::domain::{BaseFiberFamily, Domain, HolomorphicSection, QuadratureRule};
use crate::error::{LabError, Result};
use crate::extension::FamilyWeight;
use crate::scalar::{cis, Cx, Real};
use crate::space::{log_sum_exp, WeightedSpace};
use crate::weights::{direction_panel, test_submeanvalue, SubMeanOptions, VarLayout, WeightExpr, WeightProfile};

/// Evaluates `ln K_{m,t}(z)` with slice spaces of a fixed degree.
#[derive(Clone, Debug)]
pub struct SliceKernels<T: Real = f64> {
    pub fw: FamilyWeight<T>,
    pub m: u32,
    pub degree: u32,
    pub rule: Arc<QuadratureRule<T>>,
    pub opts: SolverOptions<T>,
}

impl<T: Real> SliceKernels<T> {
    pub fn solver(&self, t: &[Cx<T>]) -> Result<KernelSolver<T>> {
        if !self.fw.family.base.contains(t) {
            return Err(LabError::OutsideDomain(format!("{t:?}")));
        }
        let basis = MonomialBasis::total_degree(self.fw.family.fiber_dim(), self.degree);
        let space = WeightedSpace::m_space(&self.fw.family.fiber, self.rule.clone(), self.fw.slice(t), basis, self.m)?;
        KernelSolver::new(space)
    }

    /// `(ln K_{m,t}(z), converged)`.
    pub fn log_kernel(&self, t: &[Cx<T>], z: &[Cx<T>]) -> Result<(T, bool)> {
        let kv = self.solver(t)?.kernel(z, &self.opts)?;
        let conv = kv.converged();
        Ok((kv.log_value, conv))
    }
}

#[derive(Clone, Debug)]
pub struct RelativeKernelField<T: Real = f64> {
    pub m: u32,
    pub degree: u32,
    pub base_points: Vec<Vec<Cx<T>>>,
    pub fiber_points: Vec<Vec<Cx<T>>>,
    /// `ln K_{m,t}(z)`, row-major in `(t, z)`.
    pub values: Vec<T>,
    pub converged: Vec<bool>,
}

impl<T: Real> RelativeKernelField<T> {
    pub fn value(&self, ti: usize, zi: usize) -> T {
        self.values[ti * self.fiber_points.len() + zi]
    }
}

/// `ln K_{m,t}(z)` on `base_grid x fiber_grid`, one slice solver per `t`.
pub fn relative_m_bergman_field<T: Real>(
    kernels: &SliceKernels<T>,
    base_grid: &[Vec<Cx<T>>],
    fiber_grid: &[Vec<Cx<T>>],
) -> Result<RelativeKernelField<T>> {
    let rows: Result<Vec<Vec<(T, bool)>>> = base_grid
        .par_iter()
        .map(|t| {
            let s = kernels.solver(t)?;
            fiber_grid
                .iter()
                .map(|z| {
                    let kv = s.kernel(z, &kernels.opts)?;
                    let conv = kv.converged();
                    Ok((kv.log_value, conv))
                })
                .collect()
        })
        .collect();
    let mut values = Vec::new();
    let mut converged = Vec::new();
    for row in rows? {
        for (v, c) in row {
            values.push(v);
            converged.push(c);
        }
    }
    Ok(RelativeKernelField {
        m: kernels.m,
        degree: kernels.degree,
        base_points: base_grid.to_vec(),
        fiber_points: fiber_grid.to_vec(),
        values,
        converged,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SectionRow<T: Real = f64> {
    pub t: Vec<Cx<T>>,
    pub z: Vec<Cx<T>>,
    pub log_k: T,
    pub worst_deficit: Option<T>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SectionVerdict<T: Real = f64> {
    pub section: usize,
    pub rows: Vec<SectionRow<T>>,
    /// Base points whose test circles carry the graph too close to the
    /// fiber boundary.
    pub skipped: Vec<Vec<Cx<T>>>,
    pub pass: bool,
}

fn circle_points<T: Real>(center: &[Cx<T>], opts: &SubMeanOptions<T>) -> Vec<Vec<Cx<T>>> {
    let mut out = Vec::new();
    let dtheta = T::two_pi() / T::from_usize_lossy(opts.angular_nodes);
    for d in &opts.directions {
        let nd = d.iter().fold(T::zero(), |a, z| a + z.norm_sqr()).sqrt();
        for &rho in &opts.radii {
            for k in 0..opts.angular_nodes {
                let e = cis(dtheta * T::from_usize_lossy(k)) * rho;
                out.push(center.iter().zip(d).map(|(c, v)| *c + e * *v / nd).collect());
            }
        }
    }
    out
}

/// Sub-mean-value test of `t -> ln K_{m,t}(s(t))` for each section at each
/// base point. A point is skipped when some test circle maps the graph
/// closer to the fiber boundary than the largest radius.
pub fn psh_field_test<T: Real>(
    kernels: &SliceKernels<T>,
    sections: &[HolomorphicSection<T>],
    base_points: &[Vec<Cx<T>>],
    opts: &SubMeanOptions<T>,
) -> Result<Vec<SectionVerdict<T>>> {
    let fiber = &kernels.fw.family.fiber;
    let base = &kernels.fw.family.base;
    let rmax = opts.radii.iter().fold(T::zero(), |a, b| a.max(*b));
    let mut out = Vec::new();
    for (si, s) in sections.iter().enumerate() {
        if s.components.len() != fiber.dimension() {
            return Err(LabError::Precondition("section has the wrong fiber dimension".into()));
        }
        let per: Vec<Option<Result<SectionRow<T>>>> = base_points
            .par_iter()
            .map(|t| {
                let mut probe = circle_points(t, opts);
                probe.retain(|p| base.contains(p));
                probe.push(t.clone());
                if s.graph_margin(fiber, &probe) < rmax {
                    return None;
                }
                let mut failure = None;
                let mut f = |p: &[Cx<T>]| -> T {
                    match kernels.log_kernel(p, &s.eval(p)) {
                        Ok((v, _)) => v,
                        Err(e) => {
                            failure.get_or_insert(e);
                            T::lit(f64::NAN)
                        }
                    }
                };
                let v = test_submeanvalue(&mut f, |p| base.contains(p), t, opts);
                if let Some(e) = failure {
                    return Some(Err(e));
                }
                Some(Ok(SectionRow {
                    t: t.clone(),
                    z: s.eval(t),
                    log_k: v.center_value,
                    worst_deficit: v.worst.map(|w| w.deficit),
                    pass: v.pass,
                }))
            })
            .collect();
        let mut rows = Vec::new();
        let mut skipped = Vec::new();
        for (t, r) in base_points.iter().zip(per) {
            match r {
                Some(r) => rows.push(r?),
                None => skipped.push(t.clone()),
            }
        }
        let pass = rows.iter().all(|r| r.pass);
        out.push(SectionVerdict { section: si, rows, skipped, pass });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointRow<T: Real = f64> {
    pub point: Vec<Cx<T>>,
    pub log_k: T,
    pub worst_deficit: Option<T>,
    pub pass: bool,
}

/// Direction panel for joint tests in `C^{r+n}`: coordinate directions plus
/// `extra` seeded random unit directions.
pub fn joint_options<T: Real>(dim: usize, radii: Vec<T>, extra: usize, seed: u64, angular_nodes: usize, tol: T) -> SubMeanOptions<T> {
    SubMeanOptions { radii, directions: direction_panel(dim, extra, seed), angular_nodes, tol }
}

/// Sub-mean-value test of `(t, z) -> ln K_{m,t}(z)` along complex lines
/// through each joint point.
pub fn joint_psh_test<T: Real>(
    kernels: &SliceKernels<T>,
    points: &[Vec<Cx<T>>],
    opts: &SubMeanOptions<T>,
) -> Result<Vec<JointRow<T>>> {
    let fam = &kernels.fw.family;
    let r = fam.base_dim();
    let inside = |p: &[Cx<T>]| fam.base.contains(&p[..r]) && fam.fiber.contains(&p[r..]);
    points
        .par_iter()
        .map(|p| {
            let mut failure = None;
            let mut f = |q: &[Cx<T>]| -> T {
                match kernels.log_kernel(&q[..r], &q[r..]) {
                    Ok((v, _)) => v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        T::lit(f64::NAN)
                    }
                }
            };
            let v = test_submeanvalue(&mut f, inside, p, opts);
            if let Some(e) = failure {
                return Err(e);
            }
            Ok(JointRow { point: p.clone(), log_k: v.center_value, worst_deficit: v.worst.map(|w| w.deficit), pass: v.pass })
        })
        .collect()
}

/// The fiber product `Omega_k` of a product family: fiber `D^k` with weight
/// `phi_k(t, z_1, .., z_k) = sum_i phi(t, z_i)`.
#[derive(Clone, Debug)]
pub struct FiberPowerFamily<T: Real = f64> {
    pub source: FamilyWeight<T>,
    pub k: usize,
    pub power: FamilyWeight<T>,
}

/// Builds `Omega_k`; the joint fiber dimension `k n` is capped at 6.
pub fn fiber_product_power<T: Real>(fw: &FamilyWeight<T>, k: usize) -> Result<FiberPowerFamily<T>> {
    let r = fw.family.base_dim();
    let n = fw.family.fiber_dim();
    if k == 0 || k * n > 6 {
        return Err(LabError::Precondition(format!("fiber power k = {k} of dimension {n} exceeds the cap k n <= 6")));
    }
    let fiber = if k == 1 { fw.family.fiber.clone() } else { Domain::Product(vec![fw.family.fiber.clone(); k]) };
    let family = BaseFiberFamily::new(fw.family.base.clone(), fiber)?;
    let total = r + k * n;
    let terms: Vec<(T, WeightExpr<T>)> = (0..k)
        .map(|i| {
            let map: Vec<usize> = (0..r + n).map(|v| if v < r { v } else { r + i * n + (v - r) }).collect();
            (T::one(), fw.profile.expr.remap_vars(total, &map))
        })
        .collect();
    let expr = if k == 1 { fw.profile.expr.clone() } else { WeightExpr::Sum(terms) };
    let mut profile = WeightProfile::new(expr, VarLayout::family(r, k * n));
    profile.clamp = fw.profile.clamp;
    profile.source = format!("fiber power {k} of {}", fw.profile.source);
    Ok(FiberPowerFamily { source: fw.clone(), k, power: FamilyWeight::new(family, profile)? })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReducedWeight<T: Real = f64> {
    pub points: Vec<Vec<Cx<T>>>,
    /// `phi~(t) = -ln int_{D} e^{-phi(t, w)} dw`.
    pub values: Vec<T>,
    /// Worst sub-mean deficit per point; `None` when no circle fit.
    pub worst_deficit: Vec<Option<T>>,
    pub pass: Vec<bool>,
    pub quadrature_nodes: usize,
}

impl<T: Real> ReducedWeight<T> {
    pub fn passes(&self) -> bool {
        self.pass.iter().all(|p| *p)
    }
}

fn is_reinhardt<T: Real>(d: &Domain<T>) -> bool {
    let zero = |c: &Cx<T>| *c == Cx::new(T::zero(), T::zero());
    match d {
        Domain::Disc { center, .. } | Domain::Annulus { center, .. } => zero(center),
        Domain::Polydisc { center, .. } => center.iter().all(zero),
        Domain::Ball { center, .. } => center.iter().all(zero),
        Domain::Product(fs) => fs.iter().all(is_reinhardt),
    }
}

/// `phi~(t) = -ln int_{D} e^{-phi(t, .)}`.
pub fn reduced_weight_value<T: Real>(fw: &FamilyWeight<T>, rule: &QuadratureRule<T>, t: &[Cx<T>]) -> T {
    let mut x = t.to_vec();
    let r = t.len();
    x.resize(r + rule.dim(), Cx::new(T::zero(), T::zero()));
    let terms: Vec<T> = (0..rule.len())
        .map(|j| {
            x[r..].copy_from_slice(rule.node(j));
            rule.weights()[j].ln() - fw.profile.value(&x)
        })
        .collect();
    -log_sum_exp(&terms)
}

/// Computes `phi~` on `base_grid` and tests it for sub-mean-value at each
/// point. Needs a fiber-rotation-invariant weight and a Reinhardt fiber.
pub fn minimum_principle_field<T: Real>(
    fw: &FamilyWeight<T>,
    rule: &QuadratureRule<T>,
    base_grid: &[Vec<Cx<T>>],
    opts: &SubMeanOptions<T>,
) -> Result<ReducedWeight<T>> {
    if !fw.profile.s1_invariant_in_fiber {
        return Err(LabError::Precondition(
            "minimum principle needs phi(t, e^{i theta} w) = phi(t, w); the weight is not fiber-rotation invariant".into(),
        ));
    }
    if !is_reinhardt(&fw.family.fiber) {
        return Err(LabError::Precondition("minimum principle needs a Reinhardt fiber centred at the origin".into()));
    }
    let base = &fw.family.base;
    let rows: Vec<(T, Option<T>, bool)> = base_grid
        .par_iter()
        .map(|t| {
            let f = |p: &[Cx<T>]| reduced_weight_value(fw, rule, p);
            let v = test_submeanvalue(f, |p| base.contains(p), t, opts);
            (v.center_value, v.worst.map(|w| w.deficit), v.pass)
        })
        .collect();
    Ok(ReducedWeight {
        points: base_grid.to_vec(),
        values: rows.iter().map(|r| r.0).collect(),
        worst_deficit: rows.iter().map(|r| r.1).collect(),
        pass: rows.iter().map(|r| r.2).collect(),
        quadrature_nodes: rule.len(),
    })
}
