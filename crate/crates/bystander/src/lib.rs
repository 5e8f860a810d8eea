//! Simulation library for dissipative system-environment couplings in which
//! the environment state and self-dynamics stay independent of the system
//! while still inducing system memory effects.
//!
//! The crate provides the general coupling structure and its verifiers, a
//! Lindblad engine with time-local rate extraction and a trace-distance
//! witness, a collisional quantum-jump unravelling, exact two-time operator
//! correlations against regression-theorem predictions, conditional
//! past-future correlations in the deterministic and random measurement
//! schemes, and two analytically solved qubit models that serve as exact
//! oracles for everything else.

pub mod cpf;
pub mod error;
pub mod jump;
pub mod linalg;
pub mod lindblad;
pub mod model;
pub mod models;
pub mod qrt;
pub mod structure;
pub mod tol;

pub use error::{Error, Result};
