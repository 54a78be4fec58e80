//! Meta-reinforcement learning under structured non-stationarity.
//!
//! The crate meta-trains a recurrent task-inference network and a policy
//! on a family of hidden-parameter tasks drawn under many simulated priors,
//! then at test time tracks the latent evolution with per-dimension
//! Gaussian processes whose one-step-ahead predictions become the next
//! task's prior.
//!
//! Module map:
//!
//! * [`latent`]: beliefs, hyperpriors, rescaling, KL.
//! * [`envs`]: task families and test sequences.
//! * [`neural`]: reverse-mode graph, layers, optimiser, checkpoints.
//! * [`inference`]: the variational posterior network and its loss.
//! * [`policy`]: Bayes and Thompson actors, critic, GAE and PPO.
//! * [`tracking`]: Gaussian-process latent tracking.
//! * [`meta`]: meta-training, meta-testing, oracle baselines, regret.
//! * [`verify`]: independent oracles used by the test and acceptance suites.

pub mod envs;
pub mod error;
pub mod inference;
pub mod latent;
pub mod meta;
pub mod neural;
pub mod parallel;
pub mod policy;
pub mod rng;
pub mod tracking;
pub mod verify;

pub use error::{Error, Result};
