//! Predator-prey episodes.

use rand_chacha::ChaCha8Rng;
use xfer_core::ppo::Sample;
use xfer_core::transfer::{Transition, TransferBuffer};
use xfer_envs::gridworld::{GridConfig, GridWorld};

use crate::error::{Error, Result};
use crate::learner::Learner;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeLog {
    pub rewards: Vec<f64>,
    pub lengths: Vec<usize>,
}

/// Runs `episodes` episodes. When a buffer is given, interactions from its
/// capture window are labelled with the learner's current RND uncertainty
/// and recorded.
pub fn run_episodes(
    learner: &mut Learner,
    grid: &GridConfig,
    episodes: usize,
    mut buffer: Option<&mut TransferBuffer>,
    env_rng: &mut ChaCha8Rng,
    act_rng: &mut ChaCha8Rng,
) -> Result<EpisodeLog> {
    let mut world = GridWorld::new(grid.clone())?;
    let mut log = EpisodeLog::default();
    for episode in 0..episodes {
        let mut state = world.reset(env_rng)?;
        let mut total = 0.0;
        let mut steps = 0;
        let capture = buffer
            .as_ref()
            .is_some_and(|b| b.captures(episode, episodes));
        loop {
            let (action, log_prob) = learner.act(&state, episode, act_rng)?;
            let out = world.step(action, env_rng)?;
            total += out.reward;
            steps += 1;
            if capture {
                let rnd = learner.rnd.as_ref().ok_or_else(|| {
                    Error::Config("recording experience needs an RND pair".into())
                })?;
                let u = rnd.uncertainty(&state)?;
                if let Some(b) = buffer.as_deref_mut() {
                    b.record(
                        episode,
                        episodes,
                        Transition {
                            s: state.clone(),
                            a: action,
                            r: out.reward,
                            s_next: out.observation.clone(),
                            done: out.done,
                            u,
                        },
                    )?;
                }
            }
            learner.observe(Sample {
                state: std::mem::take(&mut state),
                action,
                log_prob,
                reward: out.reward,
                next_state: out.observation.clone(),
                done: out.done,
            })?;
            state = out.observation;
            if out.done {
                break;
            }
        }
        log.rewards.push(total);
        log.lengths.push(steps);
    }
    Ok(log)
}
