//! Spin Chern numbers and spin edge currents for quantum spin Hall
//! tight-binding models.

pub mod edge;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod realspace;
pub mod spectral;
pub mod spin;
pub mod transfer;

pub use error::{Error, Result};
