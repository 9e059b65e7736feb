//! Fully discrete semi-Lagrangian scheme for finite-horizon optimal control.

pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod mesh;
pub mod oracle;
pub mod problem;
pub mod solver;
pub mod synthesis;
pub mod tolerance;

pub use error::{Error, Result};
