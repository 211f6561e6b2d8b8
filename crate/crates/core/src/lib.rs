//! Graph neural networks with non-parametrized, parametrized and ensemble
//! readout functions, plus the training protocol and experiment tooling
//! around them.

pub mod cli;
pub mod error;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod readout;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
