pub mod agents;
pub mod attack;
pub mod defense;
pub mod error;
pub mod fixtures;
pub mod forecast;
pub mod harness;
pub mod market;
pub mod realization;
pub mod transfer;

pub use error::{Error, Result};
