//! Numerical laboratory for quadratic BSDEs on small time windows: path
//! simulation with a localizing stopping time, growth-compliant generator
//! models, LSMC / nested Monte Carlo / PDE solvers, and a harness that
//! measures the small-window difference quotient (Y_t^eps - y)/eps against
//! the generator it should recover.

pub mod config;
pub mod engine;
pub mod error;
pub mod generator;
pub mod harness;
pub mod oracles;
pub mod report;
pub mod solver;

pub use error::{Error, Result};
