use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::demand::RideRequest;
use super::network::{NodeId, RoadNetwork};
use super::sim::{SimConfig, Simulation};
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSchedule {
    pub rounds: usize,
    pub vehicles_per_round: usize,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        TrainingSchedule {
            rounds: 6,
            vehicles_per_round: 10,
        }
    }
}

impl TrainingSchedule {
    pub fn episodes(&self) -> usize {
        self.rounds * self.vehicles_per_round
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeInfo {
    pub round: usize,
    pub vehicle: usize,
    /// Index over all training episodes.
    pub index: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrainingLog {
    /// Requests available at the start of each episode.
    pub pool_sizes: Vec<usize>,
    /// Requests served in each episode.
    pub served: Vec<usize>,
}

impl TrainingLog {
    pub fn episodes(&self) -> usize {
        self.pool_sizes.len()
    }
}

/// Runs `rounds x vehicles_per_round` single-vehicle episodes. Within a round
/// each vehicle faces only the requests its predecessors left unserved; the
/// pool is restored at every round boundary. `run_episode` must drive the
/// simulation to completion. `starts[i]` is the start node of episode `i`.
pub fn train_fleet<F, E>(
    network: &Arc<RoadNetwork>,
    demand: &[RideRequest],
    config: &SimConfig,
    schedule: TrainingSchedule,
    starts: &[NodeId],
    mut run_episode: F,
) -> std::result::Result<TrainingLog, E>
where
    F: FnMut(EpisodeInfo, &mut Simulation) -> std::result::Result<(), E>,
    E: From<Error>,
{
    if demand.is_empty() {
        return Err(Error::InvalidConfig("training demand is empty".into()).into());
    }
    let total = schedule.episodes();
    if starts.len() < total {
        return Err(Error::InvalidConfig(format!(
            "need {total} start nodes, got {}",
            starts.len()
        ))
        .into());
    }
    let mut log = TrainingLog::default();
    for round in 0..schedule.rounds {
        let mut pool: Vec<RideRequest> = demand.to_vec();
        for vehicle in 0..schedule.vehicles_per_round {
            let index = round * schedule.vehicles_per_round + vehicle;
            log.pool_sizes.push(pool.len());
            let mut sim = Simulation::new(
                Arc::clone(network),
                pool.clone(),
                &starts[index..index + 1],
                config.clone(),
            )?;
            run_episode(
                EpisodeInfo {
                    round,
                    vehicle,
                    index,
                    total,
                },
                &mut sim,
            )?;
            if !sim.is_finished() {
                return Err(Error::InvalidConfig(
                    "training episode returned before the simulation finished".into(),
                )
                .into());
            }
            let served: HashSet<u64> = sim.served_ids().into_iter().collect();
            log.served.push(served.len());
            pool.retain(|r| !served.contains(&r.id));
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rideshare::demand::{generate_demand, DemandConfig, Pattern, Zoning};
    use crate::rideshare::network::LatticeConfig;
    use crate::rideshare::sim::{DROPOFF, PICKUP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sixty_episodes_over_residual_pools() {
        let lattice = LatticeConfig {
            width: 8,
            height: 8,
            ..LatticeConfig::default()
        };
        let network = Arc::new(RoadNetwork::lattice(&lattice).unwrap());
        let zoning = Zoning::new(8, 8, 4).unwrap();
        let demand_config = DemandConfig {
            window_s: 1200,
            ..DemandConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let demand =
            generate_demand(&zoning, Pattern::Morning, 60, &demand_config, &mut rng).unwrap();
        let starts = vec![0; 60];
        let mut seen_by_round: Vec<HashSet<u64>> = vec![HashSet::new(); 6];
        let log = train_fleet::<_, Error>(
            &network,
            &demand,
            &SimConfig::default(),
            TrainingSchedule::default(),
            &starts,
            |info, sim| {
                let ids: HashSet<u64> = sim.requests().iter().map(|r| r.id).collect();
                assert!(ids.is_disjoint(&seen_by_round[info.round]));
                sim.run(|d| {
                    if d.observation.slots[0].is_some() {
                        PICKUP
                    } else {
                        DROPOFF
                    }
                })?;
                seen_by_round[info.round].extend(sim.served_ids());
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(log.episodes(), 60);
        for round in 0..6 {
            assert_eq!(log.pool_sizes[round * 10], demand.len());
            for v in 1..10 {
                let i = round * 10 + v;
                assert_eq!(log.pool_sizes[i], log.pool_sizes[i - 1] - log.served[i - 1]);
            }
        }
        assert!(log.served[0] > 0);
    }
}
