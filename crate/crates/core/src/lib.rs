pub mod baselines;
pub mod bpe;
pub mod data;
pub mod error;
pub mod harness;
pub mod learners;
pub mod matrix;
pub mod rng;
pub mod stats;
pub mod synthetic;
pub mod theory;

pub use error::{Error, Result};
