//! Statistical crime linkage on pairwise binary case data.
//!
//! The crate follows the usual linkage workflow: case tables are cleaned and
//! imputed ([`ingest`]), turned into one row per unordered case pair
//! ([`pairing`]), optionally rebalanced or denoised ([`resampling`]), scored by
//! one of six model families ([`models`]), thresholded under an explicit cost
//! model ([`evaluation`]), explained with kernel SHAP ([`explain`]) and finally
//! clustered into predicted suspects ([`network`]). [`synth`] produces data
//! with the same shape for testing, and [`harness`] wires everything together.

pub mod error;
pub mod evaluation;
pub mod explain;
pub mod harness;
pub mod ingest;
pub mod models;
pub mod network;
pub mod pairing;
pub mod resampling;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
