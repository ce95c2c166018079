//! Two-step measurement-based cooling of a resonator coupled to an ancilla qubit.
//!
//! Step one reshapes a thermal resonator into a reserved Fock state with
//! unconditional qubit measurements; step two walks that population down to
//! the ground state with conditional measurements.

pub mod checks;
pub mod error;
pub mod fock;
pub mod jc;
pub mod maps;
pub mod open_system;
pub mod params;
pub mod protocol;
pub mod schedule;

pub use error::{Error, Result};
pub use fock::{CompositeDensityMatrix, Qubit, ResonatorPopulations, ThermalSpec};
pub use params::PhysicalParams;
