//! Dynamical probe toolkit for detecting a moving inclusion inside a
//! heat-conducting body from boundary measurements.

pub mod bounds;
pub mod config;
pub mod error;
pub mod indicator;
pub mod logspace;
pub mod plan;
pub mod probe;
pub mod quadrature;
pub mod reconstruct;
pub mod regression;
pub mod run;
pub mod scenario;
pub mod solver;
pub mod svg;

pub use error::{Error, Result};
