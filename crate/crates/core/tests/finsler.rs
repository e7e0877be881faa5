use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;

use bergman_lab::basis::MonomialBasis;
use bergman_lab::bergman::{bergman_kernel_l2, SolverOptions};
use bergman_lab::demailly::{DegreePolicy, Regularizer};
use bergman_lab::domain::{build_quadrature, BaseFiberFamily, Domain};
use bergman_lab::extension::FamilyWeight;
use bergman_lab::finsler::*;
use bergman_lab::scalar::{cx, Cx};
use bergman_lab::space::WeightedSpace;
use bergman_lab::weights::{SubMeanOptions, VarLayout, WeightProfile};

fn random_metric(rank: usize, entries: &[(f64, f64)]) -> HermitianMetric {
    // A A^H + 0.1 I is safely positive definite
    let a = DMatrix::from_fn(rank, rank, |i, j| {
        let (re, im) = entries[(i * rank + j) % entries.len()];
        cx(re, im)
    });
    let g = &a * a.adjoint() + DMatrix::identity(rank, rank) * cx(0.1, 0.0);
    HermitianMetric::new(g).unwrap()
}

fn random_vec(rank: usize, entries: &[(f64, f64)], shift: usize) -> Vec<Cx<f64>> {
    (0..rank).map(|i| {
        let (re, im) = entries[(i + shift) % entries.len()];
        cx(re, im)
    }).collect()
}

fn entries() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 16..=16)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dual_of_dual_is_the_primal(e in entries(), v in entries(), rank in 1usize..=4) {
        let g = random_metric(rank, &e);
        let back = g.dual().unwrap().dual().unwrap();
        let v = random_vec(rank, &v, 3);
        let a = g.norm2(&v);
        prop_assert!((back.norm2(&v) - a).abs() <= 1e-10 * a);
        // the dual metric's norm is the dual norm of the primal
        let h = g.dual().unwrap();
        let d = dual_norm(&FinslerMetricModel::Hermitian(g), &v).unwrap();
        prop_assert!((h.norm2(&v).sqrt() - d).abs() <= 1e-10 * d);
    }

    #[test]
    fn product_formula_on_decomposables(e in entries(), f in entries(), rank in 1usize..=4, m in 1usize..=3) {
        let h = random_metric(rank, &e);
        let primal = FinslerMetricModel::Hermitian(h.dual().unwrap());
        let factors: Vec<Vec<Cx<f64>>> = (0..m).map(|k| random_vec(rank, &f, 5 * k)).collect();
        let expected: f64 = factors.iter().map(|x| dual_norm(&primal, x).unwrap()).product();
        let xi = Tensor::decomposable(&factors);
        let r = injective_tensor_norm(&h, &xi, &TensorNormOptions::default()).unwrap();
        prop_assert!((r.value - expected).abs() <= 1e-8 * expected, "{} vs {}", r.value, expected);
        if let Some(g) = r.grid_value {
            prop_assert!((g - expected).abs() <= 1e-4 * expected);
        }
    }

    #[test]
    fn rank2_grid_agrees_with_alternating_maximization(e in entries(), t in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 8..=8), m in 2usize..=3) {
        let h = random_metric(2, &e);
        let data: Vec<Cx<f64>> = (0..2usize.pow(m as u32)).map(|i| cx(t[i % 8].0, t[(i * 3 + 1) % 8].1)).collect();
        let xi = Tensor::new(2, m, data).unwrap();
        let r = injective_tensor_norm(&h, &xi, &TensorNormOptions::default()).unwrap();
        let g = r.grid_value.unwrap();
        prop_assert!((r.value - g).abs() <= 1e-4 * g, "{} vs {}", r.value, g);
        // injective <= Hermitian
        prop_assert!(r.value <= hermitian_tensor_norm(&h, &xi).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn tensor_norm_is_homogeneous(e in entries(), c in (-2.0f64..2.0, -2.0f64..2.0)) {
        let h = random_metric(3, &e);
        let data: Vec<Cx<f64>> = (0..9).map(|i| cx(e[i].1, e[(i + 4) % 16].0)).collect();
        let xi = Tensor::new(3, 2, data).unwrap();
        let c = cx(c.0, c.1);
        let a = injective_tensor_norm(&h, &xi, &TensorNormOptions::default()).unwrap().value;
        let b = injective_tensor_norm(&h, &xi.scale(c), &TensorNormOptions::default()).unwrap().value;
        prop_assert!((b - c.norm() * a).abs() <= 1e-10 * (1.0 + b));
    }

    #[test]
    fn hermitian_metrics_are_homogeneous(e in entries(), rank in 1usize..=4) {
        let g = FinslerMetricModel::Hermitian(random_metric(rank, &e));
        prop_assert!(g.homogeneity_defect(32, 7) <= 1e-10);
    }
}

#[test]
fn infinite_metric_is_homogeneous_and_has_zero_dual() {
    let h = FinslerMetricModel::<f64>::infinite(3);
    assert_eq!(h.homogeneity_defect(16, 1), 0.0);
    assert_eq!(dual_norm(&h, &[cx(1.0, 0.0), cx(0.0, 2.0), cx(0.5, 0.0)]).unwrap(), 0.0);
}

fn half_disc() -> Domain {
    Domain::disc(cx(0.0, 0.0), 0.5)
}

fn base_grid() -> Vec<Vec<Cx<f64>>> {
    let mut g = Vec::new();
    for i in -2..=2 {
        for j in -2..=2 {
            let t = cx(0.1 * i as f64, 0.1 * j as f64);
            if t.norm() < 0.35 {
                g.push(vec![t]);
            }
        }
    }
    g
}

#[test]
fn griffiths_examples() {
    let opts = SubMeanOptions::coordinate(1, vec![0.05, 0.1]);
    let g0 = random_metric(2, &[(0.3, 0.1), (0.5, -0.2), (0.0, 0.4), (0.9, 0.0)]);
    let xi = DualFunctional::constant(1, &[cx(1.0, 0.0), cx(-0.3, 0.2)]);

    // e^{-|t|^2} G0: log norm is |t|^2/2 + const
    let f = HermitianField::scaled_constant(half_disc(), g0.clone(), |t: &[Cx<f64>]| t[0].norm_sqr());
    let rep = griffiths_positivity_test(&f, &[xi.clone()], &base_grid(), &opts).unwrap();
    assert!(rep.pass);
    for r in &rep.rows {
        // the smallest circle has the largest deficit, -rho^2/2
        let rho = 0.05f64;
        assert!((r.worst_deficit.unwrap() + rho * rho / 2.0).abs() < 1e-12);
    }

    // constant field
    let f = HermitianField::scaled_constant(half_disc(), g0, |_: &[Cx<f64>]| 0.0);
    let rep = griffiths_positivity_test(&f, &[xi], &base_grid(), &opts).unwrap();
    assert!(rep.pass);
    assert!(rep.worst_deficit().unwrap().abs() < 1e-12);

    // diag(1, 1 - |t|^2) with e2*: -1/2 log(1 - |t|^2)
    let f = HermitianField::generated(half_disc(), 2, |t: &[Cx<f64>]| HermitianMetric::diagonal(&[1.0, 1.0 - t[0].norm_sqr()]));
    let e2 = DualFunctional::constant(1, &[cx(0.0, 0.0), cx(1.0, 0.0)]);
    let rep = griffiths_positivity_test(&f, &[e2], &base_grid(), &opts).unwrap();
    assert!(rep.pass);
    assert!(rep.worst_deficit().unwrap() < 0.0);
}

#[test]
fn negatively_curved_field_fails() {
    let opts = SubMeanOptions::coordinate(1, vec![0.05, 0.1]);
    let f = HermitianField::scaled_constant(half_disc(), HermitianMetric::identity(2), |t: &[Cx<f64>]| -t[0].norm_sqr());
    let xi = DualFunctional::constant(1, &[cx(1.0, 0.0), cx(0.0, 0.0)]);
    let rep = griffiths_positivity_test(&f, &[xi], &base_grid(), &opts).unwrap();
    assert!(!rep.pass);
}

#[test]
fn zero_section_points_are_skipped() {
    let opts = SubMeanOptions::coordinate(1, vec![0.05]);
    let f = HermitianField::scaled_constant(half_disc(), HermitianMetric::identity(2), |_: &[Cx<f64>]| 0.0);
    let xi = DualFunctional::new(vec![bergman_lab::poly::Poly::var(1, 0), bergman_lab::poly::Poly::zero(1)]);
    let rep = griffiths_positivity_test(&f, &[xi], &[vec![cx(0.0, 0.0)], vec![cx(0.1, 0.0)]], &opts).unwrap();
    assert_eq!(rep.skipped.len(), 1);
    assert_eq!(rep.rows.len(), 1);
}

fn hodge(src: &str, d: u32) -> (FamilyWeight, HermitianField, Arc<bergman_lab::domain::QuadratureRule>) {
    let fam = BaseFiberFamily::new(half_disc(), Domain::unit_disc()).unwrap();
    let fw = FamilyWeight::new(fam.clone(), WeightProfile::parse(src, VarLayout::family(1, 1)).unwrap()).unwrap();
    let fr = Arc::new(build_quadrature(&fam.fiber, 16, 32).unwrap());
    let field = hodge_bundle_model(&fw, d, fr.clone(), &base_grid()).unwrap();
    (fw, field, fr)
}

#[test]
fn hodge_bundle_factorizations() {
    let (_, field, _) = hodge("abs2(z)", 4);
    let g0 = field.samples()[0].1.matrix();
    for (_, g) in field.samples() {
        assert!((g.matrix() - &g0).norm() < 1e-12 * g0.norm());
    }
    let (_, field, _) = hodge("abs2(t) + abs2(z)", 4);
    let at0 = field.at(&[cx(0.0, 0.0)]).unwrap().matrix();
    for (t, g) in field.samples() {
        let s = (-t[0].norm_sqr()).exp();
        assert!((g.matrix() - at0.map(|z| z * s)).norm() < 1e-12 * at0.norm());
    }
}

#[test]
fn evaluation_functional_gives_the_slice_kernel() {
    let d = 6;
    let (fw, field, fr) = hodge("abs2(t + z) + abs2(z)", d);
    for (t, g) in field.samples() {
        let slice = fw.slice(t);
        let space = WeightedSpace::l2(&Domain::unit_disc(), fr.clone(), slice, MonomialBasis::total_degree(1, d)).unwrap();
        for z0 in [cx(0.0, 0.0), cx(0.4, -0.2)] {
            let k: f64 = bergman_kernel_l2(&space, &[z0]).unwrap();
            let c = evaluation_functional(1, d, &[z0]);
            let n = dual_norm(&FinslerMetricModel::Hermitian(g.clone()), &c).unwrap();
            assert!((n * n - k).abs() < 1e-10 * k);
        }
    }
}

#[test]
fn unbounded_weight_is_rejected_by_the_hodge_model() {
    let fam = BaseFiberFamily::new(half_disc(), Domain::unit_disc()).unwrap();
    let fw = FamilyWeight::new(fam.clone(), WeightProfile::parse("2*logabs(z - t)", VarLayout::family(1, 1)).unwrap()).unwrap();
    let fr = Arc::new(build_quadrature(&fam.fiber, 8, 16).unwrap());
    assert!(hodge_bundle_model(&fw, 4, fr, &base_grid()).is_err());
}

fn unit_rule() -> bergman_lab::domain::QuadratureRule {
    build_quadrature(&Domain::unit_disc(), 24, 48).unwrap()
}

#[test]
fn rank_one_reduces_to_scalar_constants() {
    let prof = WeightProfile::parse("abs2(z)", VarLayout::domain(1)).unwrap();
    let p2 = prof.clone();
    let field = HermitianField::generated(Domain::unit_disc(), 1, move |z: &[Cx<f64>]| HermitianMetric::diagonal(&[(-p2.value(z)).exp()]));
    let rule = unit_rule();
    let anchors = vec![vec![cx(0.0, 0.0)], vec![cx(0.3, 0.2)]];
    let opts = MultipleExtensionOptions { m_list: vec![1, 2, 3], degree: 12, ..MultipleExtensionOptions::default() };
    let series = check_multiple_extension(&field, &rule, &anchors, &opts).unwrap();
    let reg = Regularizer {
        domain: Domain::unit_disc(),
        rule: Arc::new(rule),
        profile: prof,
        k: 1,
        degree: DegreePolicy::fixed(12),
        opts: SolverOptions::default(),
    };
    let scalar = reg.measure_extension_constants(&anchors, &[1, 2, 3]).unwrap();
    for (a, b) in series.entries.iter().zip(&scalar.entries) {
        assert_eq!((a.m, a.anchor), (b.m, b.anchor));
        assert!((a.log_c - b.log_c).abs() < 1e-10, "{} vs {}", a.log_c, b.log_c);
    }
}

#[test]
fn constant_metric_has_volume_constant() {
    let g0 = random_metric(2, &[(0.3, 0.1), (0.5, -0.2), (0.0, 0.4), (0.9, 0.0)]);
    let field = HermitianField::scaled_constant(Domain::unit_disc(), g0, |_: &[Cx<f64>]| 0.0);
    let rule = unit_rule();
    for p in [2.0, 1.0] {
        let opts = MultipleExtensionOptions { p, m_list: vec![2], degree: 4, ..MultipleExtensionOptions::default() };
        let s = check_multiple_extension(&field, &rule, &[vec![cx(0.0, 0.0)]], &opts).unwrap();
        assert!((s.entries[0].log_c - std::f64::consts::PI.ln()).abs() < 1e-9, "p = {p}: {}", s.entries[0].log_c);
    }
}

#[test]
fn non_positive_bundle_has_growing_constants() {
    // h = diag(e^{|z|^2}, 1): the dual section e1* has log norm -|z|^2/2
    let field = HermitianField::generated(Domain::unit_disc(), 2, |z: &[Cx<f64>]| HermitianMetric::diagonal(&[z[0].norm_sqr().exp(), 1.0]));
    let rule = unit_rule();
    let opts = MultipleExtensionOptions { m_list: vec![2, 3, 4, 5], degree: 4, extra_directions: 0, ..MultipleExtensionOptions::default() };
    let s = check_multiple_extension(&field, &rule, &[vec![cx(0.0, 0.0)]], &opts).unwrap();
    for m in [4u32, 5] {
        let (g, _) = s.growth(m).unwrap();
        assert!(g > 0.3, "m = {m}: growth {g}");
    }
}
