pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod inference;
pub mod pathio;
pub mod reaction;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod wavelet;

pub use error::{Error, Result};
