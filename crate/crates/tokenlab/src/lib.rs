//! Sparse-token classification with single-layer softmax attention.
//!
//! The crate bundles a sampler for the sparse-token task, the attention,
//! pooled and vectorized classifiers, a staged training protocol, and the
//! high-dimensional asymptotic predictions for each, together with an
//! experiment harness that checks theory against simulation.

pub mod data_model;
pub mod error;
pub mod experiments;
pub mod losses;
pub mod numerics;
pub mod theory_errors;
pub mod theory_two_step;
pub mod training;

pub use error::{Error, Result};
