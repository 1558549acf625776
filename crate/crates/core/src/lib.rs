//! Fractional magnetic parabolic operators `∂t + R^s_{A(t)} + q(t)` on bounded domains:
//! Galerkin assembly, implicit Euler time stepping, exterior Dirichlet-to-Neumann
//! data, and recovery of the magnetic and electric potentials from that data.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod assembly;
pub mod config;
pub mod control;
pub mod dtn;
pub mod error;
pub mod evolve;
pub mod grid;
pub mod inverse;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod pairquad;
pub mod point;
pub mod quadrature;
pub mod recovery;
pub mod runner;
pub mod samples;
pub mod suites;

pub use error::{FracError, Result};
