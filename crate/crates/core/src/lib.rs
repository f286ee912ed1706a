//! Quantum-trajectory simulation of open spin chains on gate-level circuits.
//!
//! The pure state of a register evolves under Trotterised Hamiltonian
//! circuits and ancilla-assisted jump blocks with mid-circuit measurement and
//! reset. Ensembles of such trajectories reproduce the Lindblad dynamics,
//! which [`oracle`] integrates directly for comparison.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod circuits;
pub mod cli;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod noise;
pub mod operators;
pub mod oracle;
pub mod rng;
pub mod statevector;

pub use error::{Error, Result};
