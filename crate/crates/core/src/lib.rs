pub mod boost;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod logreg;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod robustness;
pub mod rng;
pub mod splits;
pub mod synth;

pub use error::{Error, Result};
