//! Hard-sample denoising for implicit-feedback recommenders.
//!
//! Training batches are split by loss into a clean part and a suspected-noisy
//! part. Suspects whose predictions are unstable across recent epochs are
//! sent to a preference scorer (a language model or a deterministic oracle),
//! and those the scorer considers genuine are rescued back into the batch.
//! User preferences are refined over time from low-variance positives and
//! high-variance negatives.

pub mod config;
mod error;

pub mod backbone;
pub mod data;
pub mod denoise;
pub mod eval;
pub mod loss;
pub mod preference;
pub mod runner;
pub mod scorer;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
