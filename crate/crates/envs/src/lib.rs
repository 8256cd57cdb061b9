//! Environments: a partially observable predator-prey gridworld and an
//! event-driven mobility-on-demand simulator with ride-sharing.

pub mod error;
pub mod gridworld;
pub mod rideshare;

pub use error::{Error, Result};
