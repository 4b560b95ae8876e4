//! Observability of Schrödinger equations with confining potentials, studied through
//! the classical flow, oscillator arithmetic and spectral Gramians.

pub mod classical;
pub mod error;
pub mod flow;
pub mod oscillator;
pub mod potential;
pub mod quad;
pub mod quantum;
pub mod sets;

pub use error::{Error, Result};
