//! Simulation and analysis of a flux qubit strongly coupled to a two-level
//! system, with flux-pulse refocusing sequences.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod model;
pub mod noise;
pub mod protocols;
mod quad;

pub use error::{Error, Result};
