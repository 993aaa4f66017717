//! Relaxed constraint energy minimizing multiscale finite elements for
//! high-contrast elliptic problems on the unit square, with inhomogeneous
//! Dirichlet, Neumann and Robin boundary conditions.

pub mod aux_space;
pub mod boundary_ops;
pub mod cem_basis;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod media;
pub mod mesh;
pub mod ms_solver;
pub mod par;
pub mod theory;

pub use error::{Error, Result};
