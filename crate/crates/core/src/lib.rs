//! Multi-fidelity active learning with GFlowNet samplers.

pub mod acquisition;
pub mod active_loop;
pub mod config;
pub mod env;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod oracles;
pub mod policy;
pub mod surrogate;

pub use error::{Error, Result};
