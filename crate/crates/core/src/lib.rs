#![no_std]
//! Hybrid shared-control engine for a cart-pendulum swing-up task.

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod control;
pub mod dynamics;
pub mod error;
pub mod filter;
pub mod metrics;
pub mod trial;
pub mod users;

pub use error::{Error, Result};
