//! Low Mach number fluctuating hydrodynamics of binary mixtures on a 2D
//! staggered (MAC) grid.
//!
//! The crate is organised bottom-up: [`fields`] holds the grid and field
//! containers, [`eos`] the equation of state and transport models,
//! [`operators`] the deterministic spatial stencils, [`stochastic`] the
//! thermal noise, [`projection`] the variable-coefficient Poisson solver,
//! [`integrators`] the time steppers, and [`analysis`] / [`theory`] the
//! spectral diagnostics and linearised reference spectra. [`config`],
//! [`io`] and [`scenario`] provide the run plumbing used by the CLI.
//!
//! Units are CGS throughout.

// Negated comparisons are used deliberately so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod eos;
mod error;
pub mod fields;
pub mod integrators;
pub mod io;
pub mod operators;
pub mod par;
pub mod projection;
pub mod scenario;
pub mod stochastic;
pub mod theory;

pub use error::{Error, Result};
