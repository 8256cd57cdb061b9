//! Mobility-on-demand training and evaluation.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use xfer_core::ppo::{PpoAgent, Sample};
use xfer_core::transfer::{Transition, TransferBuffer};
use xfer_envs::rideshare::{
    generate_demand, ingest_trips_csv, train_fleet, Pattern, RideRequest, RoadNetwork,
    Simulation, TraceEvent, Zoning,
};

use crate::config::MobilityConfig;
use crate::error::{Error, Result};
use crate::learner::Learner;
use crate::metrics::{compute_mod_metrics, ModMetrics};

#[derive(Debug, Clone)]
pub struct World {
    pub network: Arc<RoadNetwork>,
    pub zoning: Zoning,
}

impl World {
    pub fn new(config: &MobilityConfig) -> Result<Self> {
        let l = &config.lattice;
        Ok(World {
            network: Arc::new(RoadNetwork::lattice(l)?),
            zoning: Zoning::new(l.width, l.height, config.demand.zones)?,
        })
    }

    /// Demand for `pattern`: the configured trip file when there is one,
    /// otherwise `count` synthetic requests.
    pub fn demand<R: Rng + ?Sized>(
        &self,
        config: &MobilityConfig,
        pattern: Pattern,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<RideRequest>> {
        if let Some(files) = &config.demand_files {
            let path = match pattern {
                Pattern::Morning => &files.morning,
                Pattern::Evening => &files.evening,
            };
            return Ok(ingest_trips_csv(
                path,
                self.network.node_count(),
                config.demand.expiry_s,
            )?);
        }
        Ok(generate_demand(
            &self.zoning,
            pattern,
            count,
            &config.demand,
            rng,
        )?)
    }

    fn random_nodes<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n)
            .map(|_| rng.gen_range(0..self.network.node_count()))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Sum of decision rewards per training episode.
    pub rewards: Vec<f64>,
    /// Decisions taken per training episode.
    pub decisions: Vec<usize>,
    pub pool_sizes: Vec<usize>,
    pub served: Vec<usize>,
}

/// Runs the rounds-by-vehicles training protocol with one shared learner.
/// Each decision becomes one interaction whose next state is the same
/// vehicle's next decision; the last one of an episode is terminal.
pub fn train(
    learner: &mut Learner,
    world: &World,
    demand: &[RideRequest],
    config: &MobilityConfig,
    mut buffer: Option<&mut TransferBuffer>,
    rng: &mut ChaCha8Rng,
) -> Result<TrainLog> {
    let starts = world.random_nodes(config.schedule.episodes(), rng);
    let mut rewards = Vec::new();
    let mut decisions = Vec::new();
    let fleet = train_fleet::<_, Error>(
        &world.network,
        demand,
        &config.sim,
        config.schedule,
        &starts,
        |info, sim| {
            let capture = buffer
                .as_ref()
                .is_some_and(|b| b.captures(info.index, info.total));
            let mut finish = |learner: &mut Learner,
                              (state, action, log_prob, reward): (Vec<f64>, usize, f64, f64),
                              next_state: Vec<f64>,
                              done: bool|
             -> Result<()> {
                if capture {
                    let rnd = learner.rnd.as_ref().ok_or_else(|| {
                        Error::Config("recording experience needs an RND pair".into())
                    })?;
                    let u = rnd.uncertainty(&state)?;
                    if let Some(b) = buffer.as_deref_mut() {
                        b.record(
                            info.index,
                            info.total,
                            Transition {
                                s: state.clone(),
                                a: action,
                                r: reward,
                                s_next: next_state.clone(),
                                done,
                                u,
                            },
                        )?;
                    }
                }
                learner.observe(Sample {
                    state,
                    action,
                    log_prob,
                    reward,
                    next_state,
                    done,
                })
            };

            let mut open: Option<(Vec<f64>, usize, f64, f64)> = None;
            let mut total = 0.0;
            let mut count = 0;
            while let Some(d) = sim.next_decision()? {
                let features = d.observation.features.clone();
                if let Some(prev) = open.take() {
                    finish(learner, prev, features.clone(), false)?;
                }
                let (action, log_prob) = learner.act(&features, info.index, rng)?;
                let reward = sim.apply(action)?.reward;
                total += reward;
                count += 1;
                open = Some((features, action, log_prob, reward));
            }
            if let Some(prev) = open {
                let last = prev.0.clone();
                finish(learner, prev, last, true)?;
            }
            rewards.push(total);
            decisions.push(count);
            Ok(())
        },
    )?;
    Ok(TrainLog {
        rewards,
        decisions,
        pool_sizes: fleet.pool_sizes,
        served: fleet.served,
    })
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub trace: Vec<TraceEvent>,
    pub metrics: ModMetrics,
}

/// Runs the whole evaluation fleet with a fixed policy and no learning.
pub fn evaluate(
    agent: &PpoAgent,
    world: &World,
    demand: &[RideRequest],
    config: &MobilityConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Evaluation> {
    let starts = world.random_nodes(config.eval_vehicles, rng);
    let mut sim = Simulation::new(
        Arc::clone(&world.network),
        demand.to_vec(),
        &starts,
        config.sim.clone(),
    )?;
    while let Some(d) = sim.next_decision()? {
        let features = d.observation.features.clone();
        let (action, _) = agent.select_action(&features, true, rng)?;
        sim.apply(action)?;
    }
    let trace = sim.into_trace();
    let metrics = compute_mod_metrics(&trace, demand, &world.network)?;
    Ok(Evaluation { trace, metrics })
}
