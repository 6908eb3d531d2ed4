//! Offline evaluation and learning of contextual-bandit policies from logged
//! data.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: logged records, datasets, the line-delimited JSON format and
//!   brute-force tabular environments used as test oracles.
//! - [`policy`]: softmax policy families with analytic gradients.
//! - [`estimators`]: IPWE, clipped IPWE, the self-normalization gap, doubly
//!   robust estimators and the paired comparison estimator.
//! - [`objectives`]: differentiable training objectives (policy-improvement
//!   lower bounds, imitation losses, POEM, DR).
//! - [`trainer`]: seeded minibatch SGD and reward-model fitting.
//! - [`diagnosis`]: imitation-loss diagnosis, mutual-information and entropy
//!   oracles, imitation resampling.
//! - [`bootstrap`]: subsampling bootstrap with fitted convergence rates.
//! - [`simulators`]: data generators for the kidney-stone, epsilon-greedy,
//!   multiclass and confounded-environment experiments.

pub mod bootstrap;
pub mod data;
pub mod diagnosis;
mod error;
pub mod estimators;
pub mod objectives;
pub mod policy;
pub mod seed;
pub mod simulators;
pub mod trainer;

pub use error::{Error, Result};
