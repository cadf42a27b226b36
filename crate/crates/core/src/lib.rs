pub mod cli;
pub mod container;
pub mod cost;
pub mod data;
pub mod error;
pub mod fusion;
pub mod lm;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod vision;

pub use error::{Error, Result};
