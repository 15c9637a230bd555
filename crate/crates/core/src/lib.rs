//! Bitemporal semantic change detection: a weight-shared scan encoder, a
//! difference-aware decoder, text-prototype gating and hard-region
//! co-training, plus dataset preparation, metrics and a training harness.

pub mod cmla;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod prompt;
pub mod sample;
pub mod taxonomy;

pub use error::{CoreError, Result};
