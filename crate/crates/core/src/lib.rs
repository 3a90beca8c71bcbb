//! Simulation and analysis toolkit for heralded squeezed cat-state synthesis
//! from two-mode squeezed vacuum.

pub mod css;
pub mod error;
pub mod fock;
pub mod gaussian;
pub mod herald;
pub mod pipeline;
pub mod tomo;
pub mod wigner;

pub use error::{Error, Result};
