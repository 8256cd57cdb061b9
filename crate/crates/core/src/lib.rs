//! Confidence-gated experience transfer between reinforcement-learning agents.
//!
//! A source agent trains with PPO while a random-network-distillation pair
//! labels every visited state with an uncertainty score. Its experience is
//! handed to a fresh target agent, which keeps only interactions below an
//! uncertainty threshold, samples a fixed budget of them and pre-trains on
//! that batch before exploring its own environment.

pub mod baselines;
pub mod error;
pub mod net;
pub mod par;
pub mod ppo;
pub mod rnd;
pub mod transfer;

pub use error::{Error, Result};
pub use net::{Adam, DenseNet, GradientBuffer, GradientTape, NetSnapshot};
