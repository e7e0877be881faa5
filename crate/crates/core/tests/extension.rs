use std::sync::Arc;

use bergman_lab::basis::MonomialBasis;
use bergman_lab::bergman::{bergman_kernel_l2, m_bergman_kernel, SolverOptions};
use bergman_lab::domain::{build_quadrature, BaseFiberFamily, Domain};
use bergman_lab::extension::{ExtensionProblem, ExtensionSolver, FamilyWeight};
use bergman_lab::poly::Poly;
use bergman_lab::scalar::cx;
use bergman_lab::space::WeightedSpace;
use bergman_lab::weights::{VarLayout, WeightProfile};

fn solver(base: Domain, src: &str, datum: Poly<f64>, t0: f64, m: u32, deg: (u32, u32, u32)) -> ExtensionSolver {
    let fam = BaseFiberFamily::new(base, Domain::unit_disc()).unwrap();
    let prof = WeightProfile::parse(src, VarLayout::family(1, 1)).unwrap();
    let fw = FamilyWeight::new(fam.clone(), prof).unwrap();
    let jr = Arc::new(build_quadrature(&fam.joint(), 20, 32).unwrap());
    let fr = Arc::new(build_quadrature(&fam.fiber, 20, 32).unwrap());
    let problem = ExtensionProblem { t0: vec![cx(t0, 0.0)], datum, joint_degree: deg.0, cap_t: deg.1, cap_z: deg.2, m };
    ExtensionSolver::new(fw, problem, jr, fr).unwrap()
}

fn datum() -> Poly<f64> {
    Poly::constant(1, cx(1.0, 0.0)).add(&Poly::var(1, 0).scale(cx(0.5, -0.25)))
}

#[test]
fn separable_weight_gives_base_kernel_ratio() {
    let t0: f64 = 0.3;
    let s = solver(Domain::unit_disc(), "abs2(t) + abs2(z)", datum(), t0, 1, (10, 6, 4));
    let e = s.l2_extend_min().unwrap();
    assert!(e.residual < 1e-12);

    // F = g(t) u(z) with g = K(., t0)/K(t0, t0); the fiber integral carries e^{-|t0|^2}
    let base = Domain::<f64>::unit_disc();
    let rule = Arc::new(build_quadrature(&base, 20, 32).unwrap());
    let prof = WeightProfile::parse("abs2(z)", VarLayout::domain(1)).unwrap();
    let space = WeightedSpace::l2(&base, rule, prof, MonomialBasis::total_degree(1, 6)).unwrap();
    let log_k: f64 = bergman_kernel_l2(&space, &[cx(t0, 0.0)]).unwrap().ln();
    let d = (e.log_joint - e.log_fiber) + log_k - t0 * t0;
    assert!(d.abs() < 1e-10, "{d}");
}

#[test]
fn single_step_when_m_is_one() {
    let s = solver(Domain::unit_disc(), "abs2(t) + abs2(z)", datum(), 0.2, 1, (8, 4, 4));
    let e = s.l2_extend_min().unwrap();
    let (f, tr) = s.lp_extend_iterate(50, 1e-10, 1e-14).unwrap();
    assert_eq!(tr.a.len(), 1);
    assert!(tr.c_hat.is_empty());
    assert!((tr.a[0].ln() - e.log_joint).abs() < 1e-12);
    for (x, y) in f.coefficients.iter().zip(&e.coefficients) {
        assert!((x - y).norm() < 1e-12);
    }
}

#[test]
fn lp_iteration_reaches_direct_minimum() {
    // u = z, separable weight: for m = 2 rotation averaging in z shows the
    // minimizer is f(t) z, so the limit is a one-variable m-kernel problem.
    let t0: f64 = 0.3;
    let s = solver(Domain::unit_disc(), "abs2(t) + abs2(z)", Poly::var(1, 0), t0, 2, (10, 6, 4));
    let (ext, tr) = s.lp_extend_iterate(200, 1e-13, 1e-14).unwrap();
    assert!(tr.converged && !tr.degraded);
    assert!(ext.residual < 1e-12);
    for w in tr.a.windows(2) {
        assert!(w[1] < w[0] * (1.0 + 1e-12));
    }
    assert!(tr.a[1] < tr.a[0]);
    assert!(tr.worst_model_excess() <= 1e-10);

    let base = Domain::unit_disc();
    let rule = Arc::new(build_quadrature(&base, 20, 32).unwrap());
    let prof = WeightProfile::parse("abs2(z)", VarLayout::domain(1)).unwrap();
    let space = WeightedSpace::build(&base, rule, prof, MonomialBasis::total_degree(1, 6), 2, 1.0).unwrap();
    let opts = SolverOptions { starts: 2, tol: 1e-13, ..SolverOptions::default() };
    let kv = m_bergman_kernel(&space, &[cx(t0, 0.0)], &opts).unwrap();
    let predicted = kv.solution.unwrap().log_value + t0 * t0;
    let measured = tr.ratios().last().unwrap().ln();
    assert!((measured - predicted).abs() < 1e-6, "{measured} vs {predicted}");
}

#[test]
fn shrinking_the_base_lowers_the_ratio() {
    let mut prev = f64::INFINITY;
    for r in [1.0, 0.8, 0.6, 0.4] {
        let base = Domain::disc(cx(0.0, 0.0), r);
        let s = solver(base, "abs2(t) + 0.5*abs2(z - t)", datum(), 0.1, 1, (10, 6, 4));
        let ratio = s.l2_extend_min().unwrap().ratio();
        assert!(ratio <= prev * (1.0 + 1e-12));
        prev = ratio;
    }
}
