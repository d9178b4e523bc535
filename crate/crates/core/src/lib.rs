//! Federated knowledge-graph embedding with diffusion-based unlearning.

pub mod config;
pub mod diffusion;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fed;
pub mod kg;
pub mod matrix;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
