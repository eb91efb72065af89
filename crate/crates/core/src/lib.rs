//! Desk-scale multitask text-to-text transformer toolkit.
//!
//! The crate covers the full pipeline: a small autodiff engine
//! ([`numerics`]), character vocabularies with a sentinel block
//! ([`tokenizer`]), a T5-style encoder-decoder ([`model`]), span-corruption
//! and teacher-forced objectives ([`objectives`]), training regimes
//! ([`trainer`]), greedy/beam/sampling search ([`decoding`]), the evaluation
//! metrics ([`metrics`]) and the task registry with synthetic datasets
//! ([`tasks`]).

pub mod decoding;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod model;
pub mod objectives;
pub mod tasks;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
