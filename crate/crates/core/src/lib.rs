//! Exact sampling without replacement from factorized sequence models.
//!
//! Stochastic beam search runs a beam search over Gumbel-perturbed
//! log-probabilities, with children's perturbations sampled conditionally on
//! their parent's. The `k` sequences it returns are an ordered sample
//! without replacement from the model, obtained with at most `k` model
//! evaluations per step. The [`estimators`] module turns such samples into
//! importance-weighted estimates of expectations under the model.

pub mod error;
pub mod estimators;
pub mod gumbel;
pub mod metrics;
pub mod oracle;
pub mod search;
pub mod seqmodel;
pub mod stable_math;
pub mod truncated_gumbel;
pub mod verify;

mod reference;

pub use error::{Error, Result};
