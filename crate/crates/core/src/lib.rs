//! Finite-element toolkit for the time-dependent Stokes system in a
//! rectangular channel with a Robin condition on the outlet wall.
//!
//! The forward problem marches a Taylor-Hood (P2/P1) discretization with
//! implicit Euler in time. On top of it the crate provides the directional
//! derivative of the coefficient-to-trace map, a projected Gauss-Newton
//! recovery of the Robin coefficient from boundary velocity measurements,
//! and empirical probes of the Lipschitz stability of that inverse map.
//!
//! Modules are layered bottom-up: meshes and quadrature, the coefficient
//! space, assembly of the saddle-point operators, time stepping, sensitivity,
//! inversion, and finally stability probes and the experiment driver used by
//! the `robin-stokes` binary.

pub mod artifacts;
pub mod assemble;
pub mod cli;
pub mod config;
pub mod convergence;
pub mod data;
pub mod error;
pub mod forward;
pub mod inversion;
pub mod mesh;
pub mod params;
pub mod probe;
pub mod quadrature;
pub mod saddle;
pub mod sensitivity;
pub mod sparse;
pub mod spaces;

pub use error::{Error, Result};
