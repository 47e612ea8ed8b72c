//! Quantum dynamical semigroups generated by classical Lévy noise.
//!
//! The crate samples Lévy processes exactly, realizes the noise-averaged
//! unitary dynamics on a periodic position grid, and checks the results
//! against closed-form generators, finite-dimensional structure theory
//! (Choi positivity, standard form, gauge freedom) and Feller's boundary
//! test for the classical reduction.

pub mod error;
pub mod feller;
pub mod galilei;
pub mod gks;
pub mod grid;
pub mod levy;
pub mod mc;
pub mod noise;
pub mod quad;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
