//! Exact area (2D) and volume (3D) system matrices for flat-detector
//! fan-beam and cone-beam CT, with a multi-line baseline, a sparse
//! projector and an accelerated regularized least-squares solver.

pub mod baseline;
pub mod config;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod io;
pub mod oracle;
pub mod phantoms;
pub mod projector;
pub mod solver;
pub mod validation;
pub mod weights2d;
pub mod weights3d;

pub use error::{CtError, Result};
