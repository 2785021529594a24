//! Batch experiments, analysis, command line and live service around the
//! shared-control engine.

pub mod analyze;
pub mod cli;
pub mod config;
pub mod csvio;
pub mod error;
pub mod harness;
pub mod live;
pub mod stats;

pub use error::{Error, Result};
