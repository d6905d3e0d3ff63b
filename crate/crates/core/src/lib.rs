//! Layer-wise representation dynamics for transformer language models.
//!
//! The toolkit reads per-layer last-token activations ([`repr_store`]),
//! measures how similar neighbouring layers are ([`similarity`],
//! [`spectral`]), removes leading principal components ([`intervention`]),
//! correlates layer rankings ([`stats`]) and turns them into layer plans
//! for selective fine-tuning or freezing ([`planner`]). A small
//! deterministic transformer ([`toymodel`]) lets the whole pipeline run
//! without an external model.

pub mod cli;
pub mod error;
pub mod intervention;
pub mod planner;
pub mod report;
pub mod repr_store;
pub mod similarity;
pub mod spectral;
pub mod stats;
pub mod toymodel;

pub use error::{Error, Result};
