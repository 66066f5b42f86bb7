//! Numerical laboratory for dark solitons of defocusing nonlinear Schrödinger equations
//! with nonzero background: traveling-wave profiles, hydrodynamic and classical evolution,
//! modulation tracking, linearized operators, and stability diagnostics.

pub mod cli;
pub mod diagnostics;
pub mod dynamics;
pub mod modulation;
pub mod nonlinearity;
pub mod operators;
pub mod profile;
pub mod scalar;
pub mod spectral_grid;

pub use scalar::Real;

pub type Grid64 = spectral_grid::Grid<f64>;
pub type Grid32 = spectral_grid::Grid<f32>;
pub type HydroState64 = spectral_grid::HydroState<f64>;
pub type HydroState32 = spectral_grid::HydroState<f32>;
pub type TwistedField64 = spectral_grid::TwistedField<f64>;
pub type TravelingWave64 = profile::TravelingWave<f64>;
pub type TravelingWave32 = profile::TravelingWave<f32>;
pub type PolynomialModel64 = nonlinearity::PolynomialModel<f64>;
pub type PolynomialModel32 = nonlinearity::PolynomialModel<f32>;
pub type Trajectory64 = dynamics::Trajectory<f64>;
pub type OperatorMatrix64 = operators::OperatorMatrix<f64>;
