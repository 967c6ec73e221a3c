//! Closed- and open-system time evolution.
//!
//! Unitary runs diagonalize the Hamiltonian once and reuse the spectrum for
//! every sample time. Open-system runs integrate the Lindblad equation with
//! per-qubit relaxation and pure dephasing, either directly on the density
//! matrix ([`LindbladMethod::DenseRk4`]) or as an average over quantum-jump
//! trajectories ([`LindbladMethod::Trajectory`]).

mod lindblad;
mod state;
mod trajectory;
mod unitary;

pub use lindblad::{
    collapse_channels, lindblad_evolve, lindblad_observe, ChannelKind, CollapseChannel,
    LindbladMethod, DEFAULT_MAX_STEP,
};
pub use state::{QuantumState, StateData, TimeGrid};
pub use trajectory::{trajectory_average, TrajectoryOptions};
pub use unitary::{evolve_pure, evolve_pure_with, propagator, Spectrum};
