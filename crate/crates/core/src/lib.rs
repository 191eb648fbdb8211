//! Model predictive control of collinear Coulomb spacecraft formations.
//!
//! Each control step solves a semidefinite relaxation of the finite-horizon
//! charge-scheduling problem with an ADMM conic solver, then rounds the first
//! lifted charge matrix to a charge vector through its dominant eigenpair.
//!
//! Charges are expressed in units of 10 mC, with the Coulomb constant scaled
//! accordingly (default `8.99e5 N m^2 / (10 mC)^2`).

pub mod controller;
pub mod dynamics;
pub mod error;
pub mod horizon;
pub mod recovery;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
