//! Information-theoretic diagnostics for latent representations.

pub mod classifier;
pub mod downstream;
pub mod dump;
pub mod error;
pub mod estimators;
pub mod model;
pub mod rng;
pub mod statistics;
pub mod synthetic;

pub use error::{Error, Result};
