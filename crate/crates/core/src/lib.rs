//! Numerical kernels for the second- and third-order ground-state energy of
//! the dilute spin-1/2 Fermi gas with a repulsive, compactly supported pair
//! interaction.
//!
//! Units: hbar = 1, particle mass 1/2 (kinetic operator -Laplacian).

pub mod error;
pub mod fockcheck;
pub mod hyformula;
pub mod lattice;
pub mod parallel;
pub mod paulisum;
pub mod potential;
pub mod quad;
pub mod scattering;

pub use error::{Error, Result};
