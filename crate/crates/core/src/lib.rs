pub mod allocator;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod evalharness;
pub mod mestimation;
pub mod metalearn;
pub mod sampledata;
pub mod stats;

pub use error::{Error, Result};
