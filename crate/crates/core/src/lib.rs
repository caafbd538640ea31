//! Constructive approximation of topological pressure by horseshoes with variable
//! return times.
//!
//! The crate is organised bottom-up:
//!
//! - [`dynamics`]: built-in planar systems, orbits, Birkhoff sums, finite-time
//!   Lyapunov exponents and cone-field checks;
//! - [`measures`]: test-function banks, empirical and reference measures, weak-*
//!   neighbourhoods and quasi-generic filtering;
//! - [`pressure_metric`]: Bowen balls, separated and spanning sets, and the
//!   separated/spanning pressure estimators;
//! - [`horseshoe`]: rectangle covers, return detection, branch selection and the
//!   resulting [`horseshoe::AlekseevModel`];
//! - [`symbolic`]: admissible periods, periodic-orbit sums, the Bowen root and the
//!   two-sided pressure bounds.

pub mod dynamics;
pub mod error;
pub mod horseshoe;
pub mod index;
pub mod linalg;
pub mod logsum;
pub mod measures;
pub mod potential;
pub mod pressure_metric;
pub mod symbolic;

pub use error::{Error, Result};
pub use linalg::{Mat2, Point};
pub use potential::Potential;
