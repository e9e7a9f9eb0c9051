//! Continual learning for task-oriented dialogue at desk scale.
//!
//! A small decoder-only language model (built on an in-crate f64
//! autodiff engine) is trained across a curriculum of dialogue domains
//! under four settings (INTENT, DST, NLG, E2E). Forgetting-mitigation
//! strategies cover regularization (L2, EWC), rehearsal (REPLAY, A-GEM,
//! LAMOL), per-task residual adapters with perplexity-based task
//! selection, and the multitask upper bound. Evaluation builds the
//! T×T metric matrix and its average over the final row.

pub mod adapters;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod strategies;
pub mod tensor;

pub use error::{Error, Result};
