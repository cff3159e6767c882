//! Numerical laboratory for weighted Hardy quotients whose weight is
//! singular on a submanifold `Sigma_k` of the boundary of a domain.

pub mod error;
pub mod expr;
pub mod fd;
pub mod geometry;
pub mod quadrature;
pub mod sampling;
pub mod weights;
pub mod constructions;
pub mod discretization;
pub mod solver;
pub mod config;
pub mod report;
pub mod cli;

pub use error::{HardyError, Result};
