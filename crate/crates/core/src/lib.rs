//! Simulation and numerical analysis of spatiotemporal graphon Hawkes processes.

pub mod cli;
pub mod cluster_sim;
pub mod domain;
pub mod error;
pub mod limits;
pub mod metrics;
pub mod model;
pub mod operators;
pub mod prelimit;
pub mod rng;
pub mod sampling;
pub mod stats;
pub mod thinning_sim;
pub mod transforms;

pub use error::{Error, ErrorCode, Result};
