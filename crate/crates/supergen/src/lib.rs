//! Zero-shot supervision generation: class-conditional text generation from
//! a frozen language model, generation-probability selection, and regularized
//! classifier fine-tuning, plus synthetic tasks with known Bayes accuracy
//! for end-to-end verification.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod lm;
pub mod metrics;
pub mod net;
pub mod numeric;
pub mod pipeline;
pub mod prompts;
pub mod records;
pub mod rng;
pub mod sampling;
pub mod selection;
pub mod tasks;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
