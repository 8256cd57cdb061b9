//! Experiment runner for confidence-gated experience transfer.
//!
//! A run is described by an [`ExperimentConfig`]: scenario, mode, seeds and
//! every hyperparameter. [`run_experiment`] executes each seed as an
//! independent worker and [`write_results`] turns the result into CSV and
//! JSON files that depend only on the config.

pub mod config;
pub mod error;
pub mod experiment;
pub mod learner;
pub mod metrics;
pub mod mobility;
pub mod output;
pub mod pp;
pub mod study;

pub use config::{parse_seeds, ExperimentConfig, Mode, Overrides, Profile, Scenario};
pub use error::{Error, Result};
pub use experiment::{run_experiment, run_with_inputs, ExperimentResult, Inputs, SeedResult};
pub use learner::{Checkpoint, Learner};
pub use metrics::{compute_mod_metrics, ModMetrics};
pub use output::{summarize, write_results};
pub use study::{run_budget_sweep, run_mod_study, write_budget_sweep, write_study};
