//! Weighted m-Bergman kernels on model domains, their regularizing
//! sequences and extension constants, fiberwise extension, Finsler and
//! Hermitian bundle positivity checks, and variation over families.
//!
//! The numerical core is generic over [`scalar::Real`] (`f32` or `f64`).

pub mod basis;
pub mod bergman;
pub mod config;
pub mod demailly;
pub mod domain;
pub mod error;
pub mod extension;
pub mod finsler;
pub mod gram;
pub mod poly;
pub mod report;
pub mod run;
pub mod scalar;
pub mod space;
pub mod variation;
pub mod weights;

pub use scalar::Real;

/// Double-precision instantiations.
pub mod f64 {
    pub type Domain = crate::domain::Domain<f64>;
    pub type QuadratureRule = crate::domain::QuadratureRule<f64>;
    pub type WeightProfile = crate::weights::WeightProfile<f64>;
    pub type WeightedSpace = crate::space::WeightedSpace<f64>;
    pub type KernelSolver = crate::bergman::KernelSolver<f64>;
    pub type Regularizer = crate::demailly::Regularizer<f64>;
    pub type ExtensionSolver = crate::extension::ExtensionSolver<f64>;
    pub type HermitianMetric = crate::finsler::HermitianMetric<f64>;
    pub type SliceKernels = crate::variation::SliceKernels<f64>;
}

/// Single-precision instantiations, for smoke tests and memory-bound runs.
pub mod f32 {
    pub type Domain = crate::domain::Domain<f32>;
    pub type QuadratureRule = crate::domain::QuadratureRule<f32>;
    pub type WeightProfile = crate::weights::WeightProfile<f32>;
    pub type WeightedSpace = crate::space::WeightedSpace<f32>;
    pub type KernelSolver = crate::bergman::KernelSolver<f32>;
    pub type Regularizer = crate::demailly::Regularizer<f32>;
    pub type ExtensionSolver = crate::extension::ExtensionSolver<f32>;
    pub type HermitianMetric = crate::finsler::HermitianMetric<f32>;
    pub type SliceKernels = crate::variation::SliceKernels<f32>;
}
