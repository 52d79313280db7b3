//! Desk-scale nonlinear potential theory for measure-data problems
//! `-Delta_p u = H_l(u) + mu` with Dirichlet boundary conditions.
//!
//! * [`measure`]: atoms plus cell densities, closed-ball masses.
//! * [`potential`]: truncated Wolff potentials and maximal functions.
//! * [`reaction`]: the exponential remainder `H_l`.
//! * [`pde`]: finite-difference `p`-Laplace Dirichlet solver.
//! * [`iterate`]: smallness constant, absorption check, monotone Picard scheme.
//! * [`verify`]: weak (1,1) and exponential-integrability checks.

pub mod error;
pub mod iterate;
pub mod measure;
pub mod pde;
pub mod potential;
pub mod reaction;
pub mod report;
pub mod verify;

pub use error::{Error, Result};
pub use measure::{Cuboid, Density, Grid, Point, RadonMeasure};
pub use potential::{wolff_field, wolff_of_field, wolff_point, ScalarField, WolffParams};
pub use reaction::{h_l, ReactionParams};
pub use report::VerificationReport;
