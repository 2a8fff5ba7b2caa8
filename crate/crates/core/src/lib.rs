//! Value-level attribution summaries for attention-based sequence classifiers.
//!
//! The engine ranks features by how much filtered attention mass and value
//! variation they carry, masks events by an attention range of interest,
//! draws equal-size representative samples per class, removes outlier
//! sequences, estimates the number of temporal patterns, and summarises each
//! pattern as per-time-step quantile bands.

pub mod attribution;
pub mod cancel;
pub mod clustering;
pub mod error;
pub mod ingest;
pub mod refine;
mod rng;
pub mod sampling;
pub mod service;
pub mod model;
pub mod pipeline;
pub mod stats;
pub mod summarize;

pub use error::{Error, Result};
