//! Frequentist confidence intervals for linear functionals of a constrained,
//! possibly rank-deficient, linear Gaussian inverse problem.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] builds the forward model: intensities, bin grids, smearing
//!   kernels, response matrices and whitening.
//! * [`constraints`] builds polyhedral shape constraints `A λ ≤ b`.
//! * [`program`] describes the convex programs the interval methods generate
//!   and solves them with an interior-point conic backend.
//! * [`intervals`] implements the OSB, PO, LS, SSB and minimax constructions.
//! * [`sim`] is the coverage / expected-width simulation harness.
//! * [`cli`] is the configuration-driven command-line front end.

pub mod cli;
pub mod constraints;
mod error;
pub mod intervals;
pub mod model;
pub mod program;
pub mod quadrature;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
