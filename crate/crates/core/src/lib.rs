//! Per-user soft prompts over frozen scorers, residual-adapter prompt
//! migration between scorers, and coreset user selection for cheap adapter
//! training.
//!
//! The numeric core is generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below fix it to `f64`, which is what the experiments use.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adapter;
pub mod data;
pub mod error;
pub mod foundation;
pub mod harness;
pub mod metrics;
pub mod numeric;
pub mod persist;
pub mod prompt;
mod scalar;
pub mod selection;

pub use error::{PumaError, Result};
pub use scalar::Scalar;

pub type Tensor = numeric::Tensor2<f64>;
pub type Scorer = foundation::FrozenScorer<f64>;
pub type Corpus = prompt::PromptCorpus<f64>;
pub type Prompt = prompt::SoftPrompt<f64>;
pub type Head = prompt::RatingHead<f64>;
pub type Adapter = adapter::MigrationAdapter<f64>;
pub type Run = adapter::MigrationRun<f64>;
