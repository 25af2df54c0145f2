//! Polynomial bases, quadrature and dof layouts.

pub mod basis;
pub mod layout;
pub mod quadrature;

use thiserror::Error;

pub use basis::{dim_p, dim_q, BasisKind, ReferenceBasis, Tabulation};
pub use layout::{BasisJet, SpaceKind, SpaceLayout};
pub use quadrature::{quadrature_rule, QuadratureRule};

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("quadrature exactness degree {0} is not supported")]
    UnsupportedDegree(usize),
    #[error("reference dimension {0} is not supported")]
    UnsupportedDimension(usize),
    #[error("test degree m = {m} must be at least the trial degree p = {p}")]
    TestDegreeTooLow { p: usize, m: usize },
}
