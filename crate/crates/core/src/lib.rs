//! Solvers for discrete-time, finite-state games with many symmetric players.

pub mod artifact;
pub mod continuous;
pub mod error;
pub mod finite;
pub mod game;
pub mod hamiltonian;
pub mod kernel;
pub mod lattice;
pub mod mean_field;
pub mod onestep;

pub use error::{Error, Result};
