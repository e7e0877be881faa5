//! Minimal extensions from a fiber `{t0} x D` to a product family `U x D`.
//!
//! The square-integrable case is a linear-constraint least-norm problem. For
//! `m >= 2` the `L^{2/m}` extension is reached by re-solving weighted
//! square-integrable extension problems with weight `e^{-phi} |F_k|^{2/m - 2}`.
//! Hölder's inequality gives, with `B_k` the minimal weighted norm of step k,
//! `A_{k+1} <= B_k^{1/m} A_k^{1 - 1/m}`, which the trace records.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex;

use crate::basis::MonomialBasis;
use crate::domain::{BaseFiberFamily, QuadratureRule};
use crate::error::{LabError, Result};
use crate::poly::Poly;
use crate::scalar::{powi, Cx, Real};
use crate::space::WeightedSpace;
use crate::weights::WeightProfile;

/// A weight on `U x D` in the layout `(t, z)`.
#[derive(Clone, Debug)]
pub struct FamilyWeight<T: Real = f64> {
    pub family: BaseFiberFamily<T>,
    pub profile: WeightProfile<T>,
}

impl<T: Real> FamilyWeight<T> {
    pub fn new(family: BaseFiberFamily<T>, profile: WeightProfile<T>) -> Result<Self> {
        let lay = profile.layout;
        if lay.base != family.base_dim() || lay.fiber != family.fiber_dim() {
            return Err(LabError::Precondition(format!(
                "weight layout ({}, {}) does not match family ({}, {})",
                lay.base,
                lay.fiber,
                family.base_dim(),
                family.fiber_dim()
            )));
        }
        Ok(FamilyWeight { family, profile })
    }

    /// `phi_t = phi(t, .)`.
    pub fn slice(&self, t: &[Cx<T>]) -> WeightProfile<T> {
        self.profile.slice(t)
    }
}

#[derive(Clone, Debug)]
pub struct ExtensionProblem<T: Real = f64> {
    pub t0: Vec<Cx<T>>,
    /// Fiber datum `u(z)`, a polynomial in the fiber variables.
    pub datum: Poly<T>,
    pub joint_degree: u32,
    pub cap_t: u32,
    pub cap_z: u32,
    pub m: u32,
}

#[derive(Clone, Debug)]
pub struct Extension<T: Real = f64> {
    pub basis: MonomialBasis,
    pub coefficients: Vec<Cx<T>>,
    /// `ln int_Omega |F|^{2/m} e^{-phi}` (with `m = 1` for the L² problem).
    pub log_joint: T,
    /// `ln int_{fiber} |u|^{2/m} e^{-phi_{t0}}`.
    pub log_fiber: T,
    /// Largest `|F(t0, z) - u(z)|` over the fiber nodes.
    pub residual: T,
}

impl<T: Real> Extension<T> {
    pub fn ratio(&self) -> T {
        (self.log_joint - self.log_fiber).exp()
    }
}

#[derive(Clone, Debug)]
pub struct IterationTrace<T: Real = f64> {
    pub m: u32,
    /// `A_k = int_Omega |F_k|^{2/m} e^{-phi}`, starting with the L² extension.
    pub a: Vec<T>,
    /// `B_k`: minimal value of the weighted problem solved at step k.
    pub c_hat: Vec<T>,
    pub clamp_fraction: Vec<T>,
    /// `int_{fiber} |u|^{2/m} e^{-phi_{t0}}`.
    pub fiber_integral: T,
    pub converged: bool,
    /// More than 10% of nodes hit the reweighting floor at some step.
    pub degraded: bool,
}

impl<T: Real> IterationTrace<T> {
    pub fn ratios(&self) -> Vec<T> {
        self.a.iter().map(|a| *a / self.fiber_integral).collect()
    }

    pub fn step_ratios(&self) -> Vec<T> {
        self.c_hat.iter().map(|c| *c / self.fiber_integral).collect()
    }

    /// `max_k [ln A_{k+1} - ln B_k - (1 - 1/m)(ln A_k - ln B_k)]`; nonpositive
    /// up to rounding whenever the floor was inactive.
    pub fn worst_model_excess(&self) -> T {
        let q = T::one() - T::one() / T::from_u32(self.m).unwrap();
        let mut worst = T::neg_infinity();
        for k in 0..self.c_hat.len() {
            let (a0, a1, c) = (self.a[k].ln(), self.a[k + 1].ln(), self.c_hat[k].ln());
            worst = worst.max(a1 - c - q * (a0 - c));
        }
        worst
    }
}

/// `A_k` of the scalar recursion `A_{k+1} = A_k (C/A_k)^{1/m}`:
/// `ln A_k - ln C = (1 - 1/m)^k (ln A_0 - ln C)`.
pub fn iteration_model(a0: f64, c: f64, m: u32, k: u32) -> f64 {
    let q = 1.0 - 1.0 / m as f64;
    (c.ln() + q.powi(k as i32) * (a0.ln() - c.ln())).exp()
}

pub struct ExtensionSolver<T: Real = f64> {
    pub fw: FamilyWeight<T>,
    pub problem: ExtensionProblem<T>,
    joint: WeightedSpace<T>,
    fiber: WeightedSpace<T>,
    fiber_coeffs: Vec<Cx<T>>,
    rows: DMatrix<Cx<T>>,
    rhs: Vec<Cx<T>>,
}

impl<T: Real> ExtensionSolver<T> {
    pub fn new(
        fw: FamilyWeight<T>,
        problem: ExtensionProblem<T>,
        joint_rule: Arc<QuadratureRule<T>>,
        fiber_rule: Arc<QuadratureRule<T>>,
    ) -> Result<Self> {
        let r = fw.family.base_dim();
        let n = fw.family.fiber_dim();
        if problem.t0.len() != r || problem.datum.nvars() != n {
            return Err(LabError::Precondition("anchor or datum has the wrong dimension".into()));
        }
        if problem.m == 0 {
            return Err(LabError::Precondition("m must be >= 1".into()));
        }
        if fw.family.base.boundary_distance(&problem.t0) <= T::zero() {
            return Err(LabError::OutsideDomain(format!("{:?}", problem.t0)));
        }
        let basis = MonomialBasis::joint(r, n, problem.joint_degree, problem.cap_t, problem.cap_z);
        let joint = WeightedSpace::build(&fw.family.joint(), joint_rule, fw.profile.clone(), basis, problem.m, T::one())?;
        if !joint.divisor().is_empty() {
            return Err(LabError::Precondition(
                "weights with forced vanishing along a hypersurface are not supported for extension".into(),
            ));
        }
        let fiber_basis = MonomialBasis::total_degree(n, problem.datum.degree());
        let slice = fw.slice(&problem.t0);
        let fiber = WeightedSpace::build(&fw.family.fiber, fiber_rule, slice, fiber_basis.clone(), problem.m, T::one())?;
        if !fiber.divisor().is_empty() {
            return Err(LabError::Precondition("slice weight forces vanishing; extension undefined".into()));
        }
        let mut fiber_coeffs = vec![Complex::new(T::zero(), T::zero()); fiber_basis.len()];
        for (e, c) in problem.datum.terms() {
            fiber_coeffs[fiber_basis.position(e).expect("datum monomial in its own basis")] = *c;
        }
        // one row per fiber monomial present in the joint basis
        let mut betas: Vec<Vec<u32>> = Vec::new();
        for e in joint.basis.indices() {
            let b = e[r..].to_vec();
            if !betas.contains(&b) {
                betas.push(b);
            }
        }
        let missing: Vec<Vec<u32>> =
            problem.datum.terms().map(|(e, _)| e.clone()).filter(|e| !betas.contains(e)).collect();
        if !missing.is_empty() {
            return Err(LabError::Unrepresentable(missing));
        }
        let nb = joint.basis.len();
        let mut rows = DMatrix::from_element(betas.len(), nb, Complex::new(T::zero(), T::zero()));
        let mut rhs = vec![Complex::new(T::zero(), T::zero()); betas.len()];
        for (i, b) in betas.iter().enumerate() {
            for (j, e) in joint.basis.indices().iter().enumerate() {
                if &e[r..] == b.as_slice() {
                    rows[(i, j)] = e[..r]
                        .iter()
                        .zip(&problem.t0)
                        .fold(Complex::new(T::one(), T::zero()), |acc, (&k, t)| acc * powi(*t, k));
                }
            }
            if let Some(pos) = fiber_basis.position(b) {
                rhs[i] = fiber_coeffs[pos];
            }
        }
        Ok(ExtensionSolver { fw, problem, joint, fiber, fiber_coeffs, rows, rhs })
    }

    pub fn joint_space(&self) -> &WeightedSpace<T> {
        &self.joint
    }

    fn residual(&self, a: &[Cx<T>]) -> T {
        let r = self.fw.family.base_dim();
        let mut worst = T::zero();
        for j in 0..self.fiber.rule.len() {
            let z = self.fiber.rule.node(j);
            let mut x = self.problem.t0.clone();
            x.extend_from_slice(z);
            let f = self.joint.basis.eval_combination(a, &x);
            let u = self.fiber.basis.eval_combination(&self.fiber_coeffs, &x[r..]);
            worst = worst.max((f - u).norm_sqr().sqrt());
        }
        worst
    }

    /// Minimal square-integrable extension and its norm ratio.
    pub fn l2_extend_min(&self) -> Result<Extension<T>> {
        let g = self.joint.gram()?;
        let (a, v) = g.constrained_min(&self.rows, &self.rhs)?;
        let log_joint = v.ln() + g.log_scale();
        let fg = self.fiber.gram()?;
        let log_fiber = fg.quadratic_form_scaled(&self.fiber_coeffs).ln() + fg.log_scale();
        let residual = self.residual(&a);
        Ok(Extension { basis: self.joint.basis.clone(), coefficients: a, log_joint, log_fiber, residual })
    }

    /// The `L^{2/m}` extension iteration started from the L² extension.
    pub fn lp_extend_iterate(&self, max_iter: usize, tol: T, eps_irls: T) -> Result<(Extension<T>, IterationTrace<T>)> {
        let m = self.problem.m;
        let g = self.joint.gram()?;
        let (mut a, _) = g.constrained_min(&self.rows, &self.rhs)?;
        let log_fiber = self.fiber.log_objective(&self.fiber_coeffs);
        let mut vals = self.joint.node_values(&a);
        let mut log_a = self.joint.log_objective_from_values(&vals);
        let mut trace = IterationTrace {
            m,
            a: vec![log_a.exp()],
            c_hat: Vec::new(),
            clamp_fraction: Vec::new(),
            fiber_integral: log_fiber.exp(),
            converged: m == 1,
            degraded: false,
        };
        if m > 1 {
            for _ in 0..max_iter {
                let (gk, frac) = self.joint.reweighted_gram(&vals, eps_irls)?;
                let (next, b) = gk.constrained_min(&self.rows, &self.rhs)?;
                let next_vals = self.joint.node_values(&next);
                let next_log_a = self.joint.log_objective_from_values(&next_vals);
                trace.c_hat.push((b.ln() + gk.log_scale()).exp());
                trace.clamp_fraction.push(frac);
                trace.a.push(next_log_a.exp());
                if frac > T::lit(0.1) {
                    trace.degraded = true;
                }
                let change = (log_a - next_log_a).abs();
                a = next;
                vals = next_vals;
                log_a = next_log_a;
                if change < tol {
                    trace.converged = true;
                    break;
                }
            }
        }
        let residual = self.residual(&a);
        let ext = Extension { basis: self.joint.basis.clone(), coefficients: a, log_joint: log_a, log_fiber, residual };
        Ok((ext, trace))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_quadrature, Domain};
    use crate::scalar::cx;
    use crate::weights::VarLayout;
    use std::f64::consts::PI;

    fn setup(src: &str, datum: Poly<f64>, t0: f64, m: u32) -> ExtensionSolver<f64> {
        let fam = BaseFiberFamily::new(Domain::unit_disc(), Domain::unit_disc()).unwrap();
        let prof = WeightProfile::parse(src, VarLayout::family(1, 1)).unwrap();
        let fw = FamilyWeight::new(fam.clone(), prof).unwrap();
        let jr = Arc::new(build_quadrature(&fam.joint(), 16, 24).unwrap());
        let fr = Arc::new(build_quadrature(&fam.fiber, 16, 24).unwrap());
        let problem = ExtensionProblem { t0: vec![cx(t0, 0.0)], datum, joint_degree: 8, cap_t: 6, cap_z: 4, m };
        ExtensionSolver::new(fw, problem, jr, fr).unwrap()
    }

    #[test]
    fn constant_datum_extends_constantly() {
        let s = setup("0", Poly::constant(1, cx(1.0, 0.0)), 0.0, 1);
        let e = s.l2_extend_min().unwrap();
        assert!((e.ratio() - PI).abs() < 1e-12);
        assert!(e.residual < 1e-12);
        assert!((e.coefficients[0] - cx(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn iteration_model_examples() {
        assert!((iteration_model(1f64.exp(), 1.0, 2, 1) - 0.5f64.exp()).abs() < 1e-15);
        assert!((iteration_model(7.0, 2.0, 1, 1) - 2.0).abs() < 1e-15);
        let mut prev = 9.0;
        for k in 1..30 {
            let a = iteration_model(9.0, 2.0, 3, k);
            assert!(a < prev && a > 2.0);
            prev = a;
        }
    }

    #[test]
    fn flat_weight_fixed_point() {
        let s = setup("0", Poly::constant(1, cx(1.0, 0.0)), 0.0, 2);
        let (_, tr) = s.lp_extend_iterate(20, 1e-12, 1e-14).unwrap();
        for a in &tr.a {
            assert!((a - PI * PI).abs() < 1e-10);
        }
    }

    #[test]
    fn unrepresentable_datum_is_rejected() {
        let fam = BaseFiberFamily::new(Domain::<f64>::unit_disc(), Domain::unit_disc()).unwrap();
        let prof = WeightProfile::parse("0", VarLayout::family(1, 1)).unwrap();
        let fw = FamilyWeight::new(fam.clone(), prof).unwrap();
        let jr = Arc::new(build_quadrature(&fam.joint(), 8, 12).unwrap());
        let fr = Arc::new(build_quadrature(&fam.fiber, 8, 12).unwrap());
        let z = Poly::var(1, 0);
        let problem = ExtensionProblem { t0: vec![cx(0.0, 0.0)], datum: z.pow(5), joint_degree: 4, cap_t: 2, cap_z: 4, m: 1 };
        assert!(matches!(ExtensionSolver::new(fw, problem, jr, fr), Err(LabError::Unrepresentable(_))));
    }
}
