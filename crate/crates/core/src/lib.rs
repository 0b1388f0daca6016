//! Lattice solvers for backward stochastic equations under volatility
//! uncertainty with one- and two-sided mean reflection.
//!
//! The crate is organized bottom-up:
//!
//! * [`grid`] carries the volatility band, the time/space lattice and
//!   value fields on it.
//! * [`gexp`] evaluates sublinear expectations of terminal payoffs by a
//!   monotone explicit finite-difference sweep.
//! * [`skorokhod`] solves discrete backward Skorokhod problems between two
//!   nonlinear time-dependent boundaries.
//! * [`bsde`] runs the backward lattice sweep for the unreflected equation
//!   and realizes the associated martingale-defect process along controls.
//! * [`meanreflect`] combines the above into solvers for the doubly
//!   mean-reflected equation under four generator policies.
//! * [`game`] evaluates optimal-stopping style bounds and the saddle-point
//!   representation for affine loss instances.
//!
//! All solvers are deterministic: identical inputs produce identical
//! outputs byte for byte, with or without the `parallel` feature.

pub mod boundary;
pub mod bsde;
pub mod csvio;
pub mod curve;
pub mod error;
pub mod game;
pub mod gexp;
pub mod grid;
pub mod instances;
pub mod meanreflect;
pub mod par;
pub mod payoff;
pub mod skorokhod;
pub mod suites;

pub use error::{Error, Result};

/// Crate version, for run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
