//! Model domains in `C^n`, product families `U x D`, and the polar tensor
//! quadrature used for every weighted integral in the crate.

use std::f64::consts::PI;

use num_complex::Complex;

use crate::error::{LabError, Result};
use crate::poly::Poly;
use crate::scalar::{abs2, cabs, cis, Cx, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Disc,
    Polydisc,
    Ball,
    Annulus,
    Product,
}

/// A bounded model domain.
#[derive(Clone, Debug, PartialEq)]
pub enum Domain<T: Real = f64> {
    Disc { center: Cx<T>, radius: T },
    Annulus { center: Cx<T>, inner: T, outer: T },
    Polydisc { center: Vec<Cx<T>>, radii: Vec<T> },
    Ball { center: Vec<Cx<T>>, radius: T },
    Product(Vec<Domain<T>>),
}

impl<T: Real> Domain<T> {
    pub fn unit_disc() -> Self {
        Self::disc(Complex::new(T::zero(), T::zero()), T::one())
    }

    pub fn disc(center: Cx<T>, radius: T) -> Self {
        Domain::Disc { center, radius }
    }

    pub fn unit_polydisc(n: usize) -> Self {
        Domain::Polydisc {
            center: vec![Complex::new(T::zero(), T::zero()); n],
            radii: vec![T::one(); n],
        }
    }

    pub fn kind(&self) -> DomainKind {
        match self {
            Domain::Disc { .. } => DomainKind::Disc,
            Domain::Annulus { .. } => DomainKind::Annulus,
            Domain::Polydisc { .. } => DomainKind::Polydisc,
            Domain::Ball { .. } => DomainKind::Ball,
            Domain::Product(_) => DomainKind::Product,
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            Domain::Disc { .. } | Domain::Annulus { .. } => 1,
            Domain::Polydisc { center, .. } => center.len(),
            Domain::Ball { center, .. } => center.len(),
            Domain::Product(fs) => fs.iter().map(Domain::dimension).sum(),
        }
    }

    /// Checks boundedness and the radius invariants.
    pub fn validate(&self) -> Result<()> {
        let finite_pos = |r: T| r.is_finite_val() && r > T::zero();
        match self {
            Domain::Disc { radius, .. } => {
                if !finite_pos(*radius) {
                    return Err(LabError::InvalidDomain(format!("disc radius {radius} must be finite and positive")));
                }
            }
            Domain::Annulus { inner, outer, .. } => {
                if !finite_pos(*outer) || !inner.is_finite_val() || *inner < T::zero() || *inner >= *outer {
                    return Err(LabError::InvalidDomain(format!(
                        "annulus needs 0 <= inner < outer < inf, got inner {inner}, outer {outer}"
                    )));
                }
            }
            Domain::Polydisc { center, radii } => {
                if center.is_empty() || center.len() != radii.len() {
                    return Err(LabError::InvalidDomain("polydisc needs one radius per coordinate".into()));
                }
                if let Some(r) = radii.iter().find(|r| !finite_pos(**r)) {
                    return Err(LabError::InvalidDomain(format!("polydisc radius {r} must be finite and positive")));
                }
            }
            Domain::Ball { center, radius } => {
                if center.is_empty() {
                    return Err(LabError::InvalidDomain("ball needs dimension >= 1".into()));
                }
                if !finite_pos(*radius) {
                    return Err(LabError::InvalidDomain(format!("ball radius {radius} must be finite and positive")));
                }
            }
            Domain::Product(fs) => {
                if fs.is_empty() {
                    return Err(LabError::InvalidDomain("empty product".into()));
                }
                for f in fs {
                    f.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Signed distance to the complement: positive inside, `<= 0` outside.
    pub fn boundary_distance(&self, p: &[Cx<T>]) -> T {
        match self {
            Domain::Disc { center, radius } => *radius - cabs(p[0] - center),
            Domain::Annulus { center, inner, outer } => {
                let r = cabs(p[0] - center);
                (*outer - r).min(r - *inner)
            }
            Domain::Polydisc { center, radii } => center
                .iter()
                .zip(radii)
                .zip(p)
                .map(|((c, r), z)| *r - cabs(*z - c))
                .fold(T::infinity(), |a, b| a.min(b)),
            Domain::Ball { center, radius } => {
                let d2 = center.iter().zip(p).fold(T::zero(), |a, (c, z)| a + abs2(*z - c));
                *radius - d2.sqrt()
            }
            Domain::Product(fs) => {
                let mut off = 0;
                let mut best = T::infinity();
                for f in fs {
                    let k = f.dimension();
                    best = best.min(f.boundary_distance(&p[off..off + k]));
                    off += k;
                }
                best
            }
        }
    }

    pub fn contains(&self, p: &[Cx<T>]) -> bool {
        p.len() == self.dimension() && self.boundary_distance(p) > T::zero()
    }

    /// Exact Lebesgue volume.
    pub fn volume(&self) -> T {
        let pi = T::pi();
        match self {
            Domain::Disc { radius, .. } => pi * *radius * *radius,
            Domain::Annulus { inner, outer, .. } => pi * (*outer * *outer - *inner * *inner),
            Domain::Polydisc { radii, .. } => radii.iter().fold(T::one(), |a, r| a * pi * *r * *r),
            Domain::Ball { center, radius } => ball_volume(center.len(), *radius),
            Domain::Product(fs) => fs.iter().fold(T::one(), |a, f| a * f.volume()),
        }
    }
}

/// Lebesgue volume of a ball of radius `r` in `C^n`: `pi^n r^{2n} / n!`.
pub fn ball_volume<T: Real>(n: usize, r: T) -> T {
    assert!(n >= 1, "ball dimension must be positive");
    let mut v = T::one();
    for k in 1..=n {
        v = v * T::pi() / T::from_usize_lossy(k);
    }
    v * r.powi(2 * n as i32)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, computed by Newton
/// iteration on the three-term recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Nodes in `C^dim` with positive weights in Lebesgue units.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule<T: Real = f64> {
    dim: usize,
    nodes: Vec<Cx<T>>,
    weights: Vec<T>,
    /// Monomials `z^a conj(z)^b` with `|a|, |b| <= exactness` (about the
    /// factor centres) are integrated exactly.
    pub exactness: usize,
}

impl<T: Real> QuadratureRule<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[Cx<T>] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn total_weight(&self) -> T {
        crate::scalar::pairwise_sum(&self.weights)
    }

    /// Tensor product: nodes of `self` vary slowest.
    pub fn product(&self, other: &Self) -> Self {
        let dim = self.dim + other.dim;
        let mut nodes = Vec::with_capacity(self.len() * other.len() * dim);
        let mut weights = Vec::with_capacity(self.len() * other.len());
        for i in 0..self.len() {
            for j in 0..other.len() {
                nodes.extend_from_slice(self.node(i));
                nodes.extend_from_slice(other.node(j));
                weights.push(self.weights[i] * other.weights[j]);
            }
        }
        QuadratureRule { dim, nodes, weights, exactness: self.exactness.min(other.exactness) }
    }

    /// Integrates a function sampled at the nodes.
    pub fn integrate(&self, mut f: impl FnMut(&[Cx<T>]) -> T) -> T {
        let vals: Vec<T> = (0..self.len()).map(|i| self.weights[i] * f(self.node(i))).collect();
        crate::scalar::pairwise_sum(&vals)
    }
}

fn polar_factor<T: Real>(center: Cx<T>, inner: T, outer: T, nr: usize, na: usize) -> QuadratureRule<T> {
    let (gx, gw) = gauss_legendre(nr);
    let a = inner * inner;
    let b = outer * outer;
    let half = (b - a) / T::lit(2.0);
    let mid = (b + a) / T::lit(2.0);
    let dtheta = T::two_pi() / T::from_usize_lossy(na);
    let mut nodes = Vec::with_capacity(nr * na);
    let mut weights = Vec::with_capacity(nr * na);
    for (xi, wi) in gx.iter().zip(&gw) {
        let s = mid + half * T::lit(*xi);
        let rho = s.sqrt();
        // dλ = (1/2) ds dθ
        let w = half * T::lit(*wi) * dtheta / T::lit(2.0);
        for k in 0..na {
            let theta = dtheta * T::from_usize_lossy(k);
            nodes.push(center + cis(theta) * rho);
            weights.push(w);
        }
    }
    QuadratureRule { dim: 1, nodes, weights, exactness: (na - 1).min(2 * nr - 1) }
}

fn ball_rule<T: Real>(center: &[Cx<T>], radius: T, nr: usize, na: usize) -> QuadratureRule<T> {
    let n = center.len();
    if n == 1 {
        return polar_factor(center[0], T::zero(), radius, nr, na);
    }
    let (gx, gw) = gauss_legendre(nr);
    let x01: Vec<f64> = gx.iter().map(|x| 0.5 * (x + 1.0)).collect();
    let w01: Vec<f64> = gw.iter().map(|w| 0.5 * w).collect();
    let r2 = radius * radius;
    let dtheta = T::two_pi() / T::from_usize_lossy(na);

    // (rho_1..rho_n) on the simplex through the collapsed (Duffy) map, angles on the torus.
    let mut simplex: Vec<(Vec<T>, T)> = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        let mut rest = T::one();
        let mut w = r2.powi(n as i32);
        let mut rhos = Vec::with_capacity(n);
        for j in 0..n {
            let x = T::lit(x01[idx[j]]);
            rhos.push(r2 * rest * x);
            w *= T::lit(w01[idx[j]]);
            if j + 1 < n {
                w *= (T::one() - x).powi((n - 1 - j) as i32);
                rest *= T::one() - x;
            }
        }
        simplex.push((rhos, w / T::lit(2.0).powi(n as i32)));
        let mut j = 0;
        loop {
            idx[j] += 1;
            if idx[j] < nr {
                break;
            }
            idx[j] = 0;
            j += 1;
            if j == n {
                break;
            }
        }
        if j == n {
            break;
        }
    }

    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let total_angles = na.pow(n as u32);
    let wa = dtheta.powi(n as i32);
    for (rhos, w) in &simplex {
        for a in 0..total_angles {
            let mut code = a;
            for j in 0..n {
                let k = code % na;
                code /= na;
                let theta = dtheta * T::from_usize_lossy(k);
                nodes.push(center[j] + cis(theta) * rhos[j].sqrt());
            }
            weights.push(*w * wa);
        }
    }
    let radial_exact = (2 * nr).saturating_sub(n);
    QuadratureRule { dim: n, nodes, weights, exactness: (na - 1).min(radial_exact) }
}

/// Polar tensor quadrature: Gauss-Legendre in `|z|^2` and the uniform
/// trapezoid in angle, one factor per complex coordinate (balls use the
/// simplex-times-torus parametrization).
pub fn build_quadrature<T: Real>(domain: &Domain<T>, radial_nodes: usize, angular_nodes: usize) -> Result<QuadratureRule<T>> {
    domain.validate()?;
    if radial_nodes < 2 || angular_nodes < 4 {
        return Err(LabError::Precondition(format!(
            "quadrature needs radial_nodes >= 2 and angular_nodes >= 4, got {radial_nodes} x {angular_nodes}"
        )));
    }
    Ok(match domain {
        Domain::Disc { center, radius } => polar_factor(*center, T::zero(), *radius, radial_nodes, angular_nodes),
        Domain::Annulus { center, inner, outer } => polar_factor(*center, *inner, *outer, radial_nodes, angular_nodes),
        Domain::Polydisc { center, radii } => {
            let mut rule = polar_factor(center[0], T::zero(), radii[0], radial_nodes, angular_nodes);
            for (c, r) in center.iter().zip(radii).skip(1) {
                rule = rule.product(&polar_factor(*c, T::zero(), *r, radial_nodes, angular_nodes));
            }
            rule
        }
        Domain::Ball { center, radius } => ball_rule(center, *radius, radial_nodes, angular_nodes),
        Domain::Product(fs) => {
            let mut rule = build_quadrature(&fs[0], radial_nodes, angular_nodes)?;
            for f in &fs[1..] {
                rule = rule.product(&build_quadrature(f, radial_nodes, angular_nodes)?);
            }
            rule
        }
    })
}

/// Product family `Omega = U x D` with base `U` in `C^r` and fiber `D` in `C^n`.
/// Points of `Omega` are ordered `(t_1..t_r, z_1..z_n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseFiberFamily<T: Real = f64> {
    pub base: Domain<T>,
    pub fiber: Domain<T>,
}

impl<T: Real> BaseFiberFamily<T> {
    pub fn new(base: Domain<T>, fiber: Domain<T>) -> Result<Self> {
        base.validate()?;
        fiber.validate()?;
        Ok(BaseFiberFamily { base, fiber })
    }

    pub fn base_dim(&self) -> usize {
        self.base.dimension()
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber.dimension()
    }

    pub fn joint(&self) -> Domain<T> {
        Domain::Product(vec![self.base.clone(), self.fiber.clone()])
    }

    pub fn joint_point(&self, t: &[Cx<T>], z: &[Cx<T>]) -> Vec<Cx<T>> {
        let mut p = Vec::with_capacity(t.len() + z.len());
        p.extend_from_slice(t);
        p.extend_from_slice(z);
        p
    }

    /// First-coordinate projection `p(t, z) = t`.
    pub fn project<'a>(&self, point: &'a [Cx<T>]) -> &'a [Cx<T>] {
        &point[..self.base_dim()]
    }
}

/// Polynomial section `t -> s(t)` of a product family, one polynomial in
/// the base variables per fiber coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct HolomorphicSection<T: Real = f64> {
    pub components: Vec<Poly<T>>,
}

impl<T: Real> HolomorphicSection<T> {
    pub fn new(components: Vec<Poly<T>>) -> Self {
        HolomorphicSection { components }
    }

    /// `s(t) = c0 + c1 t` on a one-dimensional base and fiber.
    pub fn affine(c0: Cx<T>, c1: Cx<T>) -> Self {
        let p = Poly::constant(1, c0).add(&Poly::var(1, 0).scale(c1));
        HolomorphicSection { components: vec![p] }
    }

    pub fn degree(&self) -> u32 {
        self.components.iter().map(Poly::degree).max().unwrap_or(0)
    }

    pub fn eval(&self, t: &[Cx<T>]) -> Vec<Cx<T>> {
        self.components.iter().map(|p| p.eval(t)).collect()
    }

    /// Smallest distance from the graph over `base_points` to the fiber
    /// boundary; negative when some image point leaves the fiber.
    pub fn graph_margin(&self, fiber: &Domain<T>, base_points: &[Vec<Cx<T>>]) -> T {
        base_points
            .iter()
            .map(|t| fiber.boundary_distance(&self.eval(t)))
            .fold(T::infinity(), |a, b| a.min(b))
    }
}
