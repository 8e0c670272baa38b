//! Capacity bounds for additive Gaussian channels whose output is fed back
//! to the transmitter through a second additive Gaussian noise link.
//!
//! The finite-horizon bound is a determinant-maximization program solved by
//! [`maxdet`]; its stationary limit is evaluated in [`spectral`] by
//! optimizing a finite strictly-causal filter with inner water-filling. The
//! nonfeedback and perfect-feedback capacities are provided alongside so
//! every bound can be sandwiched.
//!
//! Numerical code is generic over [`Real`] (`f32`/`f64`); the `*64` aliases
//! below name the double-precision instantiations the solvers are tuned for.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod linalg;
pub mod maxdet;
pub mod nblock;
pub mod neldermead;
pub mod noise;
pub mod oracle;
pub mod scalar;
pub mod spectral;

pub use scalar::Real;

pub type Matrix64 = linalg::Matrix<f64>;
pub type SymMatrix64 = linalg::SymMatrix<f64>;
pub type SymMatrix32 = linalg::SymMatrix<f32>;
pub type NoiseModel64 = noise::NoiseModel<f64>;
pub type Psd64 = noise::Psd<f64>;
pub type MaxdetProblem64 = maxdet::MaxdetProblem<f64>;
pub type SolverConfig64 = maxdet::SolverConfig<f64>;
pub type NBlockProblem64 = nblock::NBlockProblem<f64>;
pub type NBlockSolution64 = nblock::NBlockSolution<f64>;
pub type SpectralProblem64 = spectral::SpectralProblem<f64>;
pub type SpectralSolution64 = spectral::SpectralSolution<f64>;
pub type FeasiblePoint64 = oracle::FeasiblePoint<f64>;
