//! Finite-size Bayesian inference for tensor products of matrix-valued signals,
//! and the Hamilton-Jacobi equation on the cone of positive semidefinite matrices
//! that describes its large-size limit.
//!
//! The crate is organised bottom-up:
//!
//! * [`symcone`]: symmetric matrices, the PSD cone, square roots and their derivatives.
//! * [`quadrature`]: Gauss-Hermite rules and tensor grids.
//! * [`nonlinearity`]: the interaction polynomial `H` and its gradient.
//! * [`model`]: the finite-`N` Gibbs measure, free energy and observables.
//! * [`variational`]: Hopf and Hopf-Lax formulas and maximizer diagnostics.
//! * [`characteristics`]: the short-time solution by the method of characteristics.

pub mod characteristics;
pub mod error;
pub mod model;
pub mod nonlinearity;
pub mod quadrature;
pub mod symcone;
pub mod variational;

pub use error::{Error, Result};
pub use symcone::{ConePoint, SymMatrix};
