pub mod batching;
pub mod data;
pub mod distill;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod numeric;
pub mod rng;
pub mod runlog;

pub use error::{Error, Result};
