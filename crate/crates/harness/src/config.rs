//! Experiment configuration.
//!
//! A config file is a JSON object with a `schema_version` field. It may be
//! partial: it is merged over the defaults of its scenario, mode and profile,
//! and command-line flags are applied on top of the result.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use xfer_core::baselines::EpsilonSchedule;
use xfer_core::ppo::PpoConfig;
use xfer_core::rnd::RndConfig;
use xfer_core::transfer::{ThresholdSpec, TransferConfig};
use xfer_envs::gridworld::GridConfig;
use xfer_envs::rideshare::{DemandConfig, LatticeConfig, Pattern, SimConfig, TrainingSchedule};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[value(alias = "pp")]
    PredatorPrey,
    Mod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    TrainSource,
    Transfer,
    NoTransfer,
    PolicyTransfer,
    AdviceBegin,
    MistakeCorrection,
    EpsDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Ci,
    Full,
}

fn snake_name<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(Value::String(s)) => s,
        _ => unreachable!("unit enums serialise to strings"),
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&snake_name(self))
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&snake_name(self))
    }
}

impl Mode {
    pub fn needs_checkpoint(self) -> bool {
        matches!(
            self,
            Mode::PolicyTransfer | Mode::AdviceBegin | Mode::MistakeCorrection | Mode::EpsDecay
        )
    }

    pub fn is_advice(self) -> bool {
        matches!(
            self,
            Mode::AdviceBegin | Mode::MistakeCorrection | Mode::EpsDecay
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredatorPreyConfig {
    pub episodes: usize,
    /// Episode count of the early and late windows used in comparison tables.
    pub report_window: usize,
    pub grid: GridConfig,
}

/// Trip CSV files that replace the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandFiles {
    pub morning: PathBuf,
    pub evening: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilityConfig {
    pub lattice: LatticeConfig,
    pub demand: DemandConfig,
    pub sim: SimConfig,
    pub schedule: TrainingSchedule,
    /// Demand the source agent trains on.
    pub source_pattern: Pattern,
    /// Demand every other mode trains and is evaluated on.
    pub target_pattern: Pattern,
    /// Requests per evaluation (and non-source training) demand set.
    pub requests: usize,
    /// Requests in the source agent's training set.
    pub source_requests: usize,
    pub eval_vehicles: usize,
    pub demand_files: Option<DemandFiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub mode: Mode,
    pub profile: Profile,
    pub seeds: Vec<u64>,
    /// Threshold, budget `B` and pretraining epochs. The budget also caps
    /// the number of pieces of advice in the advising baselines.
    pub transfer: TransferConfig,
    /// Share of final source episodes whose interactions are captured.
    pub capture_window: f64,
    pub buffer: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub ppo: PpoConfig,
    pub rnd: RndConfig,
    pub epsilon: EpsilonSchedule,
    pub predator_prey: PredatorPreyConfig,
    pub mobility: MobilityConfig,
}

impl ExperimentConfig {
    pub fn defaults(scenario: Scenario, mode: Mode, profile: Profile) -> Self {
        let full = profile == Profile::Full;
        // Pretraining runs far more epochs than a rollout update: at these
        // learning rates ten Adam steps leave the networks almost untouched.
        let (ppo, capture_window, threshold, pretrain_epochs, seeds) = match scenario {
            Scenario::PredatorPrey => (
                PpoConfig::predator_prey(),
                0.2,
                ThresholdSpec::Mean,
                500,
                if full { 50 } else { 10 },
            ),
            Scenario::Mod => (PpoConfig::mobility(), 0.4, ThresholdSpec::Median, 500, 1),
        };
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            scenario,
            mode,
            profile,
            seeds: (0..seeds).collect(),
            transfer: TransferConfig {
                threshold,
                pretrain_epochs,
                ..TransferConfig::default()
            },
            capture_window,
            buffer: None,
            checkpoint: None,
            ppo,
            rnd: RndConfig::default(),
            epsilon: EpsilonSchedule::default(),
            predator_prey: PredatorPreyConfig {
                episodes: if full { 3000 } else { 1000 },
                report_window: 300,
                grid: GridConfig::default(),
            },
            mobility: MobilityConfig {
                lattice: LatticeConfig::default(),
                demand: DemandConfig::default(),
                sim: SimConfig::default(),
                schedule: TrainingSchedule::default(),
                source_pattern: Pattern::Morning,
                target_pattern: Pattern::Evening,
                requests: if full { 9663 } else { 1000 },
                source_requests: if full { 30_000 } else { 1000 },
                eval_vehicles: if full { 200 } else { 20 },
                demand_files: None,
            },
        }
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::resolve(Some(value), overrides)
    }

    /// Builds a config from an optional (possibly partial) JSON document and
    /// command-line overrides.
    pub fn resolve(file: Option<Value>, overrides: &Overrides) -> Result<Self> {
        let field = |name: &str| file.as_ref().and_then(|v| v.get(name)).cloned();
        if let Some(file) = &file {
            if !file.is_object() {
                return Err(Error::Config("config file must hold a JSON object".into()));
            }
            match file.get("schema_version").and_then(Value::as_u64) {
                Some(v) if v == SCHEMA_VERSION as u64 => {}
                Some(v) => {
                    return Err(Error::Config(format!(
                        "unsupported schema_version {v}; this build reads version {SCHEMA_VERSION}"
                    )))
                }
                None => return Err(Error::Config("config file lacks schema_version".into())),
            }
        }
        let scenario = match (overrides.scenario, field("scenario")) {
            (Some(s), _) => s,
            (None, Some(v)) => parse_field(v, "scenario")?,
            (None, None) => {
                return Err(Error::Config(
                    "scenario must be given in the config file or with --scenario".into(),
                ))
            }
        };
        let mode = match (overrides.mode, field("mode")) {
            (Some(m), _) => m,
            (None, Some(v)) => parse_field(v, "mode")?,
            (None, None) => Mode::NoTransfer,
        };
        let profile = match (overrides.profile, field("profile")) {
            (Some(p), _) => p,
            (None, Some(v)) => parse_field(v, "profile")?,
            (None, None) => Profile::Ci,
        };

        let mut merged = serde_json::to_value(Self::defaults(scenario, mode, profile))
            .expect("config serialises");
        if let Some(file) = file {
            merge(&mut merged, file);
        }
        let mut config: ExperimentConfig = parse_field(merged, "config")?;
        config.scenario = scenario;
        config.mode = mode;
        config.profile = profile;
        overrides.apply(&mut config);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version must be {SCHEMA_VERSION}"));
        }
        self.ppo.validate()?;
        self.rnd.validate()?;
        self.transfer.validate()?;
        self.epsilon.validate()?;
        if !(0.0..=1.0).contains(&self.capture_window) {
            return bad(format!(
                "capture_window must lie in [0, 1], got {}",
                self.capture_window
            ));
        }
        if self.mode == Mode::Transfer && self.buffer.is_none() {
            return bad("transfer mode needs a buffer path".into());
        }
        if self.mode.needs_checkpoint() && self.checkpoint.is_none() {
            return bad(format!("{} mode needs a checkpoint path", self.mode));
        }
        match self.scenario {
            Scenario::PredatorPrey => {
                let pp = &self.predator_prey;
                pp.grid.validate()?;
                if pp.episodes == 0 || pp.report_window == 0 {
                    return bad("episodes and report_window must be positive".into());
                }
            }
            Scenario::Mod => {
                let m = &self.mobility;
                m.sim.validate()?;
                if m.requests == 0 || m.source_requests == 0 || m.eval_vehicles == 0 {
                    return bad("requests, source_requests and eval_vehicles must be positive".into());
                }
                if m.schedule.episodes() == 0 {
                    return bad("the training schedule needs at least one episode".into());
                }
            }
        }
        Ok(())
    }
}

fn parse_field<T: serde::de::DeserializeOwned>(value: Value, what: &str) -> Result<T> {
    serde_json::from_value(value).map_err(|e| Error::Config(format!("{what}: {e}")))
}

/// Recursive object merge. Tagged values (objects with a `kind` key) are
/// replaced as a whole so a variant switch does not inherit stale fields.
fn merge(base: &mut Value, update: Value) {
    match (base, update) {
        (Value::Object(base), Value::Object(update)) => {
            for (key, value) in update {
                match base.get_mut(&key) {
                    Some(slot) if slot.is_object() && !is_tagged(&value) => merge(slot, value),
                    _ => {
                        base.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

fn is_tagged(value: &Value) -> bool {
    value.get("kind").is_some()
}

/// Values given on the command line; each one wins over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scenario: Option<Scenario>,
    pub mode: Option<Mode>,
    pub profile: Option<Profile>,
    pub threshold: Option<ThresholdSpec>,
    pub budget: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub buffer: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(t) = self.threshold {
            config.transfer.threshold = t;
        }
        if let Some(b) = self.budget {
            config.transfer.budget = b;
        }
        if let Some(s) = &self.seeds {
            config.seeds = s.clone();
        }
        if let Some(p) = &self.buffer {
            config.buffer = Some(p.clone());
        }
        if let Some(p) = &self.checkpoint {
            config.checkpoint = Some(p.clone());
        }
    }
}

/// Parses `3`, `0,4,9` or `0..10` (half-open).
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let text = text.trim();
    let bad = || Error::Config(format!("cannot parse seeds `{text}`"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        return Ok((a..b).collect());
    }
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect()
}
