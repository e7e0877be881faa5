//! Scalar abstraction shared by every numerical module.
//!
//! All math in this crate is written against [`Real`], which is implemented
//! for `f32` and `f64`. The quadrature tolerances quoted throughout the docs
//! (1e-10 and tighter) assume `f64`; `f32` builds are useful for smoke tests
//! and for checking that nothing silently depends on a concrete width.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_complex::Complex;
use num_traits::{FromPrimitive, ToPrimitive};

/// Complex number over the working scalar.
pub type Cx<T> = Complex<T>;

/// Real scalar used by the numerical core.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal into the working precision.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("representable count")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn infinity() -> Self {
        Self::lit(f64::INFINITY)
    }

    #[inline]
    fn neg_infinity() -> Self {
        Self::lit(f64::NEG_INFINITY)
    }

    #[inline]
    fn machine_eps() -> Self {
        Self::default_epsilon()
    }

    #[inline]
    fn is_finite_val(self) -> bool {
        self.as_f64().is_finite()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex constant from two `f64` parts.
#[inline]
pub fn cx<T: Real>(re: f64, im: f64) -> Cx<T> {
    Complex::new(T::lit(re), T::lit(im))
}

/// `|z|^2` without the square root.
#[inline]
pub fn abs2<T: Real>(z: Cx<T>) -> T {
    z.re * z.re + z.im * z.im
}

/// `|z|`, scaled to avoid overflow.
#[inline]
pub fn cabs<T: Real>(z: Cx<T>) -> T {
    z.re.hypot(z.im)
}

/// `e^{i theta}`.
#[inline]
pub fn cis<T: Real>(theta: T) -> Cx<T> {
    Complex::new(theta.cos(), theta.sin())
}

/// Euclidean norm of a point in `C^k`.
pub fn norm<T: Real>(v: &[Cx<T>]) -> T {
    v.iter().fold(T::zero(), |acc, z| acc + abs2(*z)).sqrt()
}

/// Integer power by repeated squaring.
pub fn powi<T: Real>(z: Cx<T>, k: u32) -> Cx<T> {
    let mut base = z;
    let mut e = k;
    let mut acc = Complex::new(T::one(), T::zero());
    while e > 0 {
        if e & 1 == 1 {
            acc *= base;
        }
        base = base * base;
        e >>= 1;
    }
    acc
}

/// Pairwise (cascade) summation in index order; deterministic and
/// accurate for long quadrature sums.
pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        xs.iter().fold(T::zero(), |a, &b| a + b)
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Display helper for complex points: `re+imi` with 17 significant digits.
pub fn fmt_complex<T: Real>(z: Cx<T>) -> String {
    let re = z.re.as_f64();
    let im = z.im.as_f64();
    if im < 0.0 || (im == 0.0 && im.is_sign_negative()) {
        format!("{:.16e}-{:.16e}i", re, -im)
    } else {
        format!("{:.16e}+{:.16e}i", re, im)
    }
}
