//! Probabilistic sequence models for high-dimensional binary frames
//! (polyphonic piano-rolls): recurrent energy-based and autoregressive
//! estimators, classical baselines, evaluation metrics, and a
//! product-of-experts transcription decoder.

pub mod error;
pub mod nade;
pub mod numerics;
pub mod rbm;

pub use error::{Error, Result};
