//! Numerical toolkit for wave turbulence in trapped Bose-Einstein condensates.
//!
//! Everything is generic over the scalar type (`f32` or `f64`); the aliases
//! below fix it to `f64`. Units are `hbar = 2m = 1`.

pub mod dispersion;
pub mod error;
pub mod fields;
pub mod gabor;
pub mod grid;
pub mod hamiltonian;
pub mod io;
pub mod kinetics;
pub mod medium;
pub mod rays;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::{Complex, Cx, Real};

pub type Grid64 = grid::Grid<f64>;
pub type FieldState64 = fields::FieldState<f64>;
pub type CondensateProfile64 = fields::CondensateProfile<f64>;
pub type PerturbationState64 = fields::PerturbationState<f64>;
pub type MediumSample64 = dispersion::MediumSample<f64>;
pub type GridMedium64 = medium::GridMedium<f64>;
pub type AnalyticMedium64 = medium::AnalyticMedium<f64>;
pub type RayState64 = rays::RayState<f64>;
pub type RayTrajectory64 = rays::RayTrajectory<f64>;
pub type PhaseSpaceGrid64 = gabor::PhaseSpaceGrid<f64>;
pub type GaborKernel64 = gabor::GaborKernel<f64>;
pub type GaborField64 = gabor::GaborField<f64>;
pub type SlowAmplitude64 = gabor::SlowAmplitude<f64>;
pub type PhaseSpaceSpectrum64 = gabor::PhaseSpaceSpectrum<f64>;
pub type IsotropicSpectrum64 = kinetics::IsotropicSpectrum<f64>;
pub type CollisionConfig64 = kinetics::CollisionConfig<f64>;
pub type MasterEnsemble64 = kinetics::MasterEnsemble<f64>;
pub type HamiltonianBreakdown64 = hamiltonian::HamiltonianBreakdown<f64>;
