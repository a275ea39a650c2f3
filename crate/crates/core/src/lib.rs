//! Bayesian space-time changepoint detection for ordinal panels.

pub mod conditionals;
pub mod covkernel;
pub mod error;
pub mod gibbs;
pub mod normal;
pub mod panel;
pub mod rngkit;
pub mod selection;
pub mod simulate;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
