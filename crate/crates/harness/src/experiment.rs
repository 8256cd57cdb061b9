//! Per-seed pipelines for every mode and their aggregation.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use xfer_core::baselines::Teacher;
use xfer_core::par;
use xfer_core::ppo::PpoAgent;
use xfer_core::rnd::RndPair;
use xfer_core::transfer::{
    eligible_indices, filter_and_sample, pretrain, resolve_threshold, TransferBuffer,
};
use xfer_envs::rideshare::sim::{ACTION_COUNT as MOD_ACTIONS, OBSERVATION_LEN};
use xfer_envs::rideshare::{Pattern, RideRequest};

use crate::config::{ExperimentConfig, Mode, Scenario};
use crate::error::{Error, Result};
use crate::learner::{Advice, Checkpoint, Learner};
use crate::mobility::{self, Evaluation, World};
use crate::pp;

const PP_ACTIONS: usize = xfer_envs::gridworld::ACTION_COUNT;

/// Independent random streams derived from one seed. Paired runs (same seed,
/// different mode) share initial weights, environment draws and demand.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Env = 2,
    Act = 3,
    Sample = 4,
    Demand = 5,
    SourceDemand = 6,
    Eval = 7,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Files a mode reads, already loaded.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub buffer: Option<Arc<TransferBuffer>>,
    pub checkpoint: Option<Arc<Checkpoint>>,
}

impl Inputs {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let buffer = match (&config.buffer, config.mode) {
            (Some(path), Mode::Transfer) => Some(Arc::new(
                TransferBuffer::load(path).map_err(|e| match e {
                    xfer_core::Error::Io(io) => Error::io(path, io),
                    other => other.into(),
                })?,
            )),
            _ => None,
        };
        let checkpoint = match &config.checkpoint {
            Some(path) if config.mode.needs_checkpoint() => {
                Some(Arc::new(Checkpoint::load(path)?))
            }
            _ => None,
        };
        Ok(Inputs { buffer, checkpoint })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferInfo {
    pub threshold: f64,
    pub buffer_size: usize,
    pub eligible: usize,
    pub batch: usize,
    /// Source episodes represented by the sampled batch, used to shift the
    /// learning curve for a cost-adjusted comparison.
    pub pretrain_cost_episodes: usize,
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    /// Reward per episode (PP) or per training episode (MoD).
    pub rewards: Vec<f64>,
    /// Steps (PP) or decisions (MoD) per episode.
    pub lengths: Vec<usize>,
    pub transfer: Option<TransferInfo>,
    pub advised: usize,
    pub buffer: Option<TransferBuffer>,
    pub checkpoint: Checkpoint,
    pub evaluation: Option<Evaluation>,
    pub demand: Option<Vec<RideRequest>>,
}

impl SeedResult {
    /// Interactions a source run should have captured: every step or
    /// decision of the episodes inside the capture window.
    pub fn expected_capture(&self, capture_window: f64) -> usize {
        let total = self.lengths.len();
        let first = total - (capture_window * total as f64).round() as usize;
        self.lengths[first..].iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedResult>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Aggregate {
    pub mean: Vec<f64>,
    /// Sample standard deviation across seeds; zero with fewer than two.
    pub std: Vec<f64>,
}

impl ExperimentResult {
    pub fn aggregate(&self) -> Aggregate {
        let n = self.seeds.len();
        let len = self.seeds.iter().map(|s| s.rewards.len()).min().unwrap_or(0);
        let mut agg = Aggregate::default();
        for e in 0..len {
            let xs: Vec<f64> = self.seeds.iter().map(|s| s.rewards[e]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = if n > 1 {
                xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            agg.mean.push(mean);
            agg.std.push(var.sqrt());
        }
        agg
    }

    /// Row label for metric tables.
    pub fn label(&self) -> String {
        scenario_label(&self.config)
    }

    pub fn pretrain_cost_episodes(&self) -> usize {
        self.seeds
            .iter()
            .filter_map(|s| s.transfer.as_ref())
            .map(|t| t.pretrain_cost_episodes)
            .max()
            .unwrap_or(0)
    }
}

pub fn scenario_label(config: &ExperimentConfig) -> String {
    let m = &config.mobility;
    let (src, tgt) = (pattern_name(m.source_pattern), pattern_name(m.target_pattern));
    match (config.scenario, config.mode) {
        (Scenario::PredatorPrey, mode) => mode.to_string(),
        (Scenario::Mod, Mode::TrainSource) => format!("train_{src}_test_{src}"),
        (Scenario::Mod, Mode::PolicyTransfer) => format!("train_{src}_test_{tgt}"),
        (Scenario::Mod, Mode::NoTransfer) => format!("train_{tgt}_test_{tgt}"),
        (Scenario::Mod, Mode::Transfer) => format!("tl_test_{tgt}"),
        (Scenario::Mod, mode) => format!("{mode}_test_{tgt}"),
    }
}

fn pattern_name(p: Pattern) -> &'static str {
    match p {
        Pattern::Morning => "morning",
        Pattern::Evening => "evening",
    }
}

/// Loads the mode's input files and runs every seed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let inputs = Inputs::load(config)?;
    run_with_inputs(config, &inputs)
}

/// Runs every seed as an independent worker; results keep seed order.
pub fn run_with_inputs(config: &ExperimentConfig, inputs: &Inputs) -> Result<ExperimentResult> {
    let seeds = par::map(&config.seeds, |&seed| run_seed(config, seed, inputs))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult {
        config: config.clone(),
        seeds,
    })
}

pub fn run_seed(config: &ExperimentConfig, seed: u64, inputs: &Inputs) -> Result<SeedResult> {
    match config.scenario {
        Scenario::PredatorPrey => run_pp_seed(config, seed, inputs),
        Scenario::Mod => run_mod_seed(config, seed, inputs),
    }
}

fn run_pp_seed(config: &ExperimentConfig, seed: u64, inputs: &Inputs) -> Result<SeedResult> {
    let state_dim = config.predator_prey.grid.observation_len();
    let (mut learner, transfer) = build_learner(config, seed, inputs, state_dim, PP_ACTIONS)?;
    let mut buffer = source_buffer(config, state_dim, PP_ACTIONS)?;
    let log = pp::run_episodes(
        &mut learner,
        &config.predator_prey.grid,
        config.predator_prey.episodes,
        buffer.as_mut(),
        &mut stream(seed, Stream::Env),
        &mut stream(seed, Stream::Act),
    )?;
    Ok(SeedResult {
        seed,
        rewards: log.rewards,
        lengths: log.lengths,
        transfer,
        advised: learner.advised(),
        buffer,
        checkpoint: learner.checkpoint(),
        evaluation: None,
        demand: None,
    })
}

fn run_mod_seed(config: &ExperimentConfig, seed: u64, inputs: &Inputs) -> Result<SeedResult> {
    let m = &config.mobility;
    let world = World::new(m)?;
    let (mut learner, transfer) =
        build_learner(config, seed, inputs, OBSERVATION_LEN, MOD_ACTIONS)?;
    let mut buffer = source_buffer(config, OBSERVATION_LEN, MOD_ACTIONS)?;

    let source = config.mode == Mode::TrainSource;
    let pattern = if source {
        m.source_pattern
    } else {
        m.target_pattern
    };
    let demand = world.demand(m, pattern, m.requests, &mut stream(seed, Stream::Demand))?;
    let train_demand = if source && m.source_requests != m.requests {
        world.demand(
            m,
            pattern,
            m.source_requests,
            &mut stream(seed, Stream::SourceDemand),
        )?
    } else {
        demand.clone()
    };

    let log = if config.mode == Mode::PolicyTransfer {
        mobility::TrainLog::default()
    } else {
        mobility::train(
            &mut learner,
            &world,
            &train_demand,
            m,
            buffer.as_mut(),
            &mut stream(seed, Stream::Act),
        )?
    };
    let evaluation = mobility::evaluate(
        &learner.agent,
        &world,
        &demand,
        m,
        &mut stream(seed, Stream::Eval),
    )?;
    Ok(SeedResult {
        seed,
        rewards: log.rewards,
        lengths: log.decisions,
        transfer,
        advised: learner.advised(),
        buffer,
        checkpoint: learner.checkpoint(),
        evaluation: Some(evaluation),
        demand: Some(demand),
    })
}

fn source_buffer(
    config: &ExperimentConfig,
    state_dim: usize,
    actions: usize,
) -> Result<Option<TransferBuffer>> {
    if config.mode != Mode::TrainSource {
        return Ok(None);
    }
    Ok(Some(TransferBuffer::new(
        state_dim,
        actions,
        config.capture_window,
    )?))
}

fn build_learner(
    config: &ExperimentConfig,
    seed: u64,
    inputs: &Inputs,
    state_dim: usize,
    actions: usize,
) -> Result<(Learner, Option<TransferInfo>)> {
    let mut init = stream(seed, Stream::Init);
    let checkpoint = || -> Result<&Checkpoint> {
        let c = inputs.checkpoint.as_deref().ok_or_else(|| {
            Error::Config(format!("{} mode needs a checkpoint", config.mode))
        })?;
        let agent = &c.ppo.policy;
        if agent.layer_sizes.first() != Some(&state_dim)
            || agent.layer_sizes.last() != Some(&actions)
        {
            return Err(Error::Config(format!(
                "checkpoint policy has shape {:?}; this scenario needs {state_dim} inputs and {actions} actions",
                agent.layer_sizes
            )));
        }
        Ok(c)
    };
    if config.mode == Mode::PolicyTransfer {
        return Ok((Learner::frozen(checkpoint()?.agent()?), None));
    }

    let mut agent = PpoAgent::new(state_dim, actions, config.ppo.clone(), &mut init)?;
    let mut learner_rnd = None;
    let mut teacher = None;
    let mut advice = Advice::None;
    let mut info = None;
    match config.mode {
        Mode::TrainSource => {
            learner_rnd = Some(RndPair::new(state_dim, config.rnd.clone(), &mut init)?);
        }
        Mode::Transfer => {
            let buffer = inputs
                .buffer
                .as_deref()
                .ok_or_else(|| Error::Config("transfer mode needs a buffer".into()))?;
            if buffer.state_dim() != state_dim || buffer.action_count() != actions {
                return Err(Error::Config(format!(
                    "buffer holds {}-dimensional states and {} actions; this scenario needs {state_dim} and {actions}",
                    buffer.state_dim(),
                    buffer.action_count()
                )));
            }
            let t = &config.transfer;
            let threshold = resolve_threshold(buffer, t.threshold)?;
            let eligible = eligible_indices(buffer, threshold).len();
            let batch = filter_and_sample(
                buffer,
                threshold,
                t.budget,
                &mut stream(seed, Stream::Sample),
            );
            pretrain(&mut agent, &batch, t.pretrain_epochs)?;
            let episodes = buffer.transitions().iter().filter(|x| x.done).count().max(1);
            let mean_len = buffer.len() as f64 / episodes as f64;
            info = Some(TransferInfo {
                threshold,
                buffer_size: buffer.len(),
                eligible,
                batch: batch.len(),
                pretrain_cost_episodes: if batch.is_empty() {
                    0
                } else {
                    (batch.len() as f64 / mean_len).ceil() as usize
                },
            });
        }
        Mode::NoTransfer | Mode::PolicyTransfer => {}
        Mode::AdviceBegin | Mode::MistakeCorrection | Mode::EpsDecay => {
            let c = checkpoint()?;
            let teacher_rnd = c.rnd_pair()?;
            if config.mode == Mode::EpsDecay {
                if teacher_rnd.is_none() {
                    return Err(Error::Config(
                        "eps_decay needs a checkpoint that includes the teacher's RND".into(),
                    ));
                }
                learner_rnd = Some(RndPair::new(state_dim, config.rnd.clone(), &mut init)?);
            }
            teacher = Some(Teacher::new(c.agent()?, teacher_rnd, config.transfer.budget));
            advice = match config.mode {
                Mode::AdviceBegin => Advice::Beginning,
                Mode::MistakeCorrection => Advice::MistakeCorrection,
                _ => Advice::EpsilonDecay(config.epsilon),
            };
        }
    }
    let learner = Learner {
        agent,
        rnd: learner_rnd,
        teacher,
        advice,
        learn: true,
    };
    Ok((learner, info))
}
