//! Relaxed exponential scalar-auxiliary-variable (R-ESAV) time integrators
//! for gradient flows and incompressible Navier–Stokes on periodic boxes.
//!
//! Every numerical type is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what the solvers are
//! verified against.

pub mod integrators;
pub mod manufactured;
pub mod models;
pub mod navier_stokes;
pub mod savkernel;
pub mod scalar;
pub mod spectral;

pub use scalar::Real;

pub type Grid64 = spectral::Grid<f64>;
pub type Field64 = spectral::Field<f64>;
pub type SpectralField64 = spectral::SpectralField<f64>;
pub type ModelSpec64 = models::ModelSpec<f64>;
pub type BdfTableau64 = savkernel::BdfTableau<f64>;

pub type Grid32 = spectral::Grid<f32>;
pub type Field32 = spectral::Field<f32>;
pub type SpectralField32 = spectral::SpectralField<f32>;
