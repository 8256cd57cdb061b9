//! The acting and learning loop shared by both scenarios.

use rand::Rng;
use serde::{Deserialize, Serialize};
use xfer_core::baselines::{EpsilonSchedule, Teacher};
use xfer_core::ppo::{PpoAgent, PpoCheckpoint, Sample};
use xfer_core::rnd::{RndCheckpoint, RndPair};

use crate::error::{Error, Result};

/// Which advising scheme, if any, the teacher follows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Advice {
    None,
    Beginning,
    MistakeCorrection,
    EpsilonDecay(EpsilonSchedule),
}

/// A trained agent as written to disk: policy, value net and (for source
/// runs) the RND pair that labelled its experience.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub ppo: PpoCheckpoint,
    pub rnd: Option<RndCheckpoint>,
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)
            .map_err(|e| Error::json(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::json(path, e))
    }

    pub fn agent(&self) -> Result<PpoAgent> {
        Ok(PpoAgent::from_checkpoint(self.ppo.clone())?)
    }

    pub fn rnd_pair(&self) -> Result<Option<RndPair>> {
        self.rnd
            .clone()
            .map(RndPair::from_checkpoint)
            .transpose()
            .map_err(Error::from)
    }
}

#[derive(Debug, Clone)]
pub struct Learner {
    pub agent: PpoAgent,
    /// Updated on the PPO cadence with the rollout's states.
    pub rnd: Option<RndPair>,
    pub teacher: Option<Teacher>,
    pub advice: Advice,
    /// When false, nothing is stored and no update ever runs.
    pub learn: bool,
}

impl Learner {
    pub fn new(agent: PpoAgent) -> Self {
        Learner {
            agent,
            rnd: None,
            teacher: None,
            advice: Advice::None,
            learn: true,
        }
    }

    pub fn frozen(agent: PpoAgent) -> Self {
        Learner {
            learn: false,
            ..Learner::new(agent)
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            ppo: self.agent.checkpoint(),
            rnd: self.rnd.as_ref().map(RndPair::checkpoint),
        }
    }

    /// Pieces of advice given so far.
    pub fn advised(&self) -> usize {
        self.teacher.as_ref().map_or(0, Teacher::advised)
    }

    /// Picks the action to execute. The returned log-probability is always
    /// the student's own for that action, advised or not.
    pub fn act<R: Rng + ?Sized>(
        &mut self,
        state: &[f64],
        episode: usize,
        rng: &mut R,
    ) -> Result<(usize, f64)> {
        let (own, log_prob) = self.agent.select_action(state, true, rng)?;
        let advised = match (&mut self.teacher, self.advice) {
            (None, _) | (_, Advice::None) => None,
            (Some(t), Advice::Beginning) => t.advice_at_beginning(state)?,
            (Some(t), Advice::MistakeCorrection) => t.mistake_correction(state, own)?,
            (Some(t), Advice::EpsilonDecay(schedule)) => {
                let student = self.rnd.as_ref().ok_or_else(|| {
                    Error::Config("confidence-based advice needs a student RND".into())
                })?;
                t.confidence_epsilon_decay(student, state, episode, schedule, rng)?
            }
        };
        match advised {
            Some(a) if a != own => Ok((a, self.agent.log_prob(state, a)?)),
            _ => Ok((own, log_prob)),
        }
    }

    /// Stores a finished interaction and runs the RND and PPO updates once
    /// enough have been collected.
    pub fn observe(&mut self, sample: Sample) -> Result<()> {
        if !self.learn {
            return Ok(());
        }
        self.agent.store(sample);
        if self.agent.update_due() {
            if let Some(rnd) = &mut self.rnd {
                let states: Vec<&[f64]> = self
                    .agent
                    .rollout()
                    .iter()
                    .map(|s| s.state.as_slice())
                    .collect();
                rnd.update(&states)?;
            }
            self.agent.update()?;
        }
        Ok(())
    }
}
