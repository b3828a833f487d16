//! Numerical laboratory for an affine wild blender-horseshoe.
//!
//! The crate builds the piecewise affine model with its quadratic fold, the
//! symbolic codes that steer orbits through it, the bump perturbation that
//! turns a pseudo-orbit into a real orbit, and the diagnostics run on the
//! resulting wandering domain: nesting, describability, Birkhoff statistics
//! and bounded-Lipschitz Wasserstein distances.

pub mod bridges;
pub mod coding;
pub mod ext;
pub mod fixed;
pub mod model;
pub mod perturbation;
pub mod runner;
pub mod schedule;
pub mod stats;
pub mod transport;
pub mod wandering;
