//! Weighted Bergman kernels `K(z)` and m-Bergman kernels `K_m(z)`.
//!
//! `K_m(z) = sup |u(z)|^2 / ||u||_m^2` with `||u||_m^2 = (int |u|^{2/m} w)^m`,
//! i.e. `K_m(z) = J(z)^{-m}` where `J(z)` is the minimum of `int |u|^{2/m} w`
//! over `u(z) = 1`. For `m > 1` this is a nonconvex problem; it is solved by
//! majorize-minimize (iteratively reweighted least squares), each step being
//! a weighted square-integrable constrained solve.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::gram::GramData;
use crate::scalar::{abs2, cabs, Cx, Real};
use crate::space::WeightedSpace;

#[derive(Clone, Debug)]
pub struct SolverOptions<T: Real = f64> {
    /// Random perturbation starts on top of the constant and L² starts.
    pub starts: usize,
    /// Stop when the log-objective changes by less than this.
    pub tol: T,
    pub max_iter: usize,
    /// Relative floor on `|u_k|^2` in the reweighting.
    pub eps_irls: T,
    pub seed: u64,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        SolverOptions { starts: 1, tol: T::lit(1e-8), max_iter: 200, eps_irls: T::lit(1e-14), seed: 0 }
    }
}

/// Minimizer of the extremal problem at one point.
#[derive(Clone, Debug)]
pub struct ExtremalSolution<T: Real = f64> {
    /// Coefficients of the reduced polynomial `v` (`u = P v`, see [`WeightedSpace`]).
    pub coefficients: Vec<Cx<T>>,
    /// `ln min int |u|^{2/m} w` with `u(z) = 1`.
    pub log_value: T,
    /// Log-objective after each step of the winning start.
    pub trace: Vec<T>,
    /// 0 = constant start, 1 = L² start, 2.. = perturbed starts.
    pub winning_start: usize,
    pub start_values: Vec<T>,
    pub converged: bool,
    /// Starts whose final objective matches the best to `1e-6`.
    pub starts_agreeing: usize,
    /// Starts that reached the best objective with visibly different
    /// coefficients (possible non-uniqueness of the minimizer).
    pub distinct_minimizers: usize,
    /// Set for `m > 1`: the reported value is the best local minimum found.
    pub local_minimum_risk: bool,
}

#[derive(Clone, Debug)]
pub struct KernelValue<T: Real = f64> {
    pub value: T,
    pub log_value: T,
    /// `None` when no retained element is nonzero at the point.
    pub solution: Option<ExtremalSolution<T>>,
}

impl<T: Real> KernelValue<T> {
    fn zero() -> Self {
        KernelValue { value: T::zero(), log_value: T::neg_infinity(), solution: None }
    }

    pub fn converged(&self) -> bool {
        self.solution.as_ref().map_or(true, |s| s.converged)
    }

    pub fn starts_agreeing(&self) -> usize {
        self.solution.as_ref().map_or(0, |s| s.starts_agreeing)
    }
}

/// A space together with its factorized square-integrable Gram, reused for
/// every point.
#[derive(Clone, Debug)]
pub struct KernelSolver<T: Real = f64> {
    pub space: WeightedSpace<T>,
    pub gram: GramData<T>,
}

impl<T: Real> KernelSolver<T> {
    pub fn new(space: WeightedSpace<T>) -> Result<Self> {
        let gram = space.gram()?;
        Ok(KernelSolver { space, gram })
    }

    /// `ln |P(z)|^2`, or `None` if the prefactor vanishes at `z`.
    fn log_prefactor2(&self, z: &[Cx<T>]) -> Option<T> {
        let p = abs2(self.space.prefactor(z));
        if p > T::zero() {
            Some(p.ln())
        } else {
            None
        }
    }

    /// `ln K(z)` for the square-integrable problem `m = 1`.
    pub fn log_kernel_l2(&self, z: &[Cx<T>]) -> T {
        let Some(lp) = self.log_prefactor2(z) else { return T::neg_infinity() };
        self.gram.log_kernel(&self.space.eval_vector(z)) + lp
    }

    /// `K_m(z)` with `m = space.m`.
    pub fn kernel(&self, z: &[Cx<T>], opts: &SolverOptions<T>) -> Result<KernelValue<T>> {
        let Some(lp) = self.log_prefactor2(z) else { return Ok(KernelValue::zero()) };
        let c = self.space.eval_vector(z);
        let Some((a_l2, _)) = self.gram.minimizer(&c) else { return Ok(KernelValue::zero()) };
        let m = self.space.m;
        let mf = T::from_u32(m).unwrap();
        if m == 1 {
            let log_value = self.gram.log_kernel(&c) + lp;
            let lj = -log_value;
            let sol = ExtremalSolution {
                coefficients: a_l2,
                log_value: lj,
                trace: vec![lj],
                winning_start: 1,
                start_values: vec![lj],
                converged: true,
                starts_agreeing: 1,
                distinct_minimizers: 1,
                local_minimum_risk: false,
            };
            return Ok(KernelValue { value: log_value.exp(), log_value, solution: Some(sol) });
        }
        let mut starts: Vec<Vec<Cx<T>>> = Vec::new();
        let mut constant = vec![Complex::new(T::zero(), T::zero()); c.len()];
        constant[0] = Complex::new(T::one(), T::zero());
        starts.push(constant);
        starts.push(a_l2.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let scale = a_l2.iter().fold(T::zero(), |acc, z| acc.max(cabs(*z))).max(T::one());
        for _ in 0..opts.starts {
            let delta: Vec<Cx<T>> = (0..c.len())
                .map(|_| Complex::new(T::lit(rng.gen_range(-0.5..0.5)), T::lit(rng.gen_range(-0.5..0.5))) * scale)
                .collect();
            let cd = c.iter().zip(&delta).fold(Complex::new(T::zero(), T::zero()), |acc, (x, y)| acc + *x * *y);
            starts.push(a_l2.iter().zip(&delta).map(|(a, d)| *a + *d - *a * cd).collect());
        }
        let runs: Vec<Result<(Vec<Cx<T>>, Vec<T>, bool)>> =
            starts.into_iter().map(|a0| self.irls(&c, a0, opts)).collect();
        let mut results = Vec::with_capacity(runs.len());
        for r in runs {
            results.push(r?);
        }
        let start_values: Vec<T> = results.iter().map(|r| *r.1.last().unwrap()).collect();
        let (best, _) = start_values
            .iter()
            .enumerate()
            .fold((0, T::infinity()), |(bi, bv), (i, v)| if *v < bv { (i, *v) } else { (bi, bv) });
        let best_val = start_values[best];
        let agree_tol = T::lit(1e-6);
        let agreeing: Vec<usize> = (0..results.len()).filter(|&i| (start_values[i] - best_val).abs() <= agree_tol).collect();
        let best_coef = &results[best].0;
        let cn = best_coef.iter().fold(T::zero(), |a, z| a + abs2(*z)).sqrt();
        let distinct = 1 + agreeing
            .iter()
            .filter(|&&i| {
                let d = results[i].0.iter().zip(best_coef).fold(T::zero(), |a, (x, y)| a + abs2(*x - *y)).sqrt();
                d > T::lit(1e-3) * cn
            })
            .count();
        let (coefficients, trace, converged) = results.swap_remove(best);
        let log_value_reduced = best_val;
        // u = P v with v(z) = 1 corresponds to u(z) = P(z): rescale to u(z) = 1
        let log_j = log_value_reduced - self.space.p() * T::lit(0.5) * lp;
        let log_k = -mf * log_j;
        let sol = ExtremalSolution {
            coefficients,
            log_value: log_j,
            trace,
            winning_start: best,
            start_values,
            converged,
            starts_agreeing: agreeing.len(),
            distinct_minimizers: distinct,
            local_minimum_risk: true,
        };
        Ok(KernelValue { value: log_k.exp(), log_value: log_k, solution: Some(sol) })
    }

    /// Majorize-minimize from a feasible start; returns the final
    /// coefficients, the log-objective trace and the convergence flag.
    fn irls(&self, c: &[Cx<T>], a0: Vec<Cx<T>>, opts: &SolverOptions<T>) -> Result<(Vec<Cx<T>>, Vec<T>, bool)> {
        let mut a = a0;
        let mut vals = self.space.node_values(&a);
        let mut cur = self.space.log_objective_from_values(&vals);
        let mut trace = vec![cur];
        let mut best = (a.clone(), cur);
        for _ in 0..opts.max_iter {
            let (g, _) = self.space.reweighted_gram(&vals, opts.eps_irls)?;
            let Some((next, _)) = g.minimizer(c) else { break };
            let nvals = self.space.node_values(&next);
            let nv = self.space.log_objective_from_values(&nvals);
            trace.push(nv);
            let change = (cur - nv).abs();
            a = next;
            vals = nvals;
            cur = nv;
            if nv < best.1 {
                best = (a.clone(), nv);
            }
            if change < opts.tol {
                return Ok((best.0, with_best(trace, best.1), true));
            }
        }
        Ok((best.0, with_best(trace, best.1), false))
    }
}

fn with_best<T: Real>(mut trace: Vec<T>, best: T) -> Vec<T> {
    if *trace.last().unwrap() != best {
        trace.push(best);
    }
    trace
}

/// `K(z)` for a square-integrable space (the space's `m` must be 1).
pub fn bergman_kernel_l2<T: Real>(space: &WeightedSpace<T>, z: &[Cx<T>]) -> Result<T> {
    assert_eq!(space.m, 1, "bergman_kernel_l2 needs m = 1");
    Ok(KernelSolver::new(space.clone())?.log_kernel_l2(z).exp())
}

/// `K_m(z)` and its extremal solution; `m` is taken from the space.
pub fn m_bergman_kernel<T: Real>(space: &WeightedSpace<T>, z: &[Cx<T>], opts: &SolverOptions<T>) -> Result<KernelValue<T>> {
    KernelSolver::new(space.clone())?.kernel(z, opts)
}

/// Narasimhan-Simha local weight `(1/K_m)^{(m-1)/m} e^{-phi(z)/m}`, in log
/// form; `+inf` when `K_m(z) = 0`.
pub fn ns_metric_log_weight<T: Real>(log_k: T, phi_z: T, m: u32) -> T {
    let mf = T::from_u32(m).unwrap();
    if log_k == T::neg_infinity() {
        return T::infinity();
    }
    -(mf - T::one()) / mf * log_k - phi_z / mf
}

pub fn ns_metric_weight<T: Real>(solver: &KernelSolver<T>, z: &[Cx<T>], opts: &SolverOptions<T>) -> Result<T> {
    let k = solver.kernel(z, opts)?;
    Ok(ns_metric_log_weight(k.log_value, solver.space.profile.value(z), solver.space.m).exp())
}

/// Sampled kernel values over a list of points.
#[derive(Clone, Debug)]
pub struct KernelField<T: Real = f64> {
    pub points: Vec<Vec<Cx<T>>>,
    pub values: Vec<KernelValue<T>>,
    pub degree: u32,
    pub m: u32,
}

/// Evaluates `K_m` at every point; order-preserving and seed-stable, so the
/// result does not depend on the thread count.
pub fn kernel_field<T: Real>(solver: &KernelSolver<T>, points: &[Vec<Cx<T>>], opts: &SolverOptions<T>) -> Result<KernelField<T>> {
    let values: Vec<Result<KernelValue<T>>> = points.par_iter().map(|z| solver.kernel(z, opts)).collect();
    let values = values.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(KernelField { points: points.to_vec(), values, degree: solver.space.basis.degree(), m: solver.space.m })
}
