//! Identification of lifted Koopman state-space models with control inputs
//! and an innovation noise channel, trained with a subspace encoder and a
//! batched multiple-shooting prediction-error loss.

pub mod analysis;
pub mod autodiff;
pub mod benchmarks;
pub mod data;
pub mod encoder;
pub mod error;
pub mod model;
pub mod training;

pub use error::{Error, Result};

/// Library version recorded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
