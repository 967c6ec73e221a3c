//! Simulator for the disordered long-range XY spin ring realised on a
//! ten-qubit superconducting processor with a shared bus resonator.
//!
//! The crate builds the effective Hamiltonian from device constants, evolves
//! pure states and open-system density matrices, and evaluates the
//! localization diagnostics (imbalance, reduced density matrices,
//! entanglement entropy) over disorder ensembles. A free-fermion engine
//! handles the nearest-neighbour (Anderson) limit exactly.

pub mod basis;
pub mod error;
pub mod evolve;
pub mod fermion;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod observables;

pub use error::{Error, Result};
