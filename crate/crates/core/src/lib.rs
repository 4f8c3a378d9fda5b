//! Plan-then-realize variational data-to-text generation.
//!
//! A global latent drives a plan decoder that splits the input items into
//! ordered sentence groups; a sentence decoder with chained per-sentence
//! latents and an attentive word decoder then realizes each group.

pub mod checkpoint;
pub mod compute;
pub mod config;
pub mod corpus;
mod error;
pub mod latent;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod parallel;
pub mod planner;
pub mod realizer;
pub mod synthetic;

pub use error::{Error, Result};
