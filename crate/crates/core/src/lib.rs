//! Few-shot temporal knowledge-graph reasoning.
//!
//! A library for predicting future facts of newly emerging entities in
//! temporal knowledge graphs: chronological task construction, budgeted
//! temporal-neighbor sampling, a time-aware attention encoder trained by a
//! bi-level meta loop with a generalization-bound-derived adaptation
//! regularizer, and filtered ranking evaluation.

pub mod audit;
pub mod config;
pub mod encoder;
pub mod error;
pub mod kgstore;
pub mod meta;
pub mod numkernel;
pub mod objective;
pub mod pipeline;
pub mod sampler;
pub mod synth;

pub use error::{Error, Result};
