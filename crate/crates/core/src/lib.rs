pub mod classify;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod features;
pub mod graph;
pub mod knn;
pub mod labels;
pub mod matrix;
pub mod pipeline;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
