//! Budgeted teacher-student advising.
//!
//! A [`Teacher`] wraps a trained, frozen agent (and optionally its RND pair)
//! together with an advice budget. Each scheme either returns the teacher's
//! greedy action, spending one unit of budget, or returns `None` and lets the
//! student act on its own.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ppo::{argmax, PpoAgent};
use crate::rnd::RndPair;

/// `epsilon(episode) = eps0 * decay^episode`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub eps0: f64,
    pub decay: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            eps0: 1.0,
            decay: 0.999,
        }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eps0) || !(0.0..=1.0).contains(&self.decay) {
            return Err(Error::InvalidConfig(format!(
                "epsilon schedule needs eps0 and decay in [0, 1], got {} and {}",
                self.eps0, self.decay
            )));
        }
        Ok(())
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        self.eps0 * self.decay.powf(episode as f64)
    }
}

#[derive(Debug, Clone)]
pub struct Teacher {
    agent: PpoAgent,
    rnd: Option<RndPair>,
    budget: usize,
    advised: usize,
}

impl Teacher {
    pub fn new(agent: PpoAgent, rnd: Option<RndPair>, budget: usize) -> Self {
        Teacher {
            agent,
            rnd,
            budget,
            advised: 0,
        }
    }

    pub fn agent(&self) -> &PpoAgent {
        &self.agent
    }

    pub fn rnd(&self) -> Option<&RndPair> {
        self.rnd.as_ref()
    }

    /// Remaining advice budget.
    pub fn budget(&self) -> usize {
        self.budget
    }

    /// Number of pieces of advice given so far.
    pub fn advised(&self) -> usize {
        self.advised
    }

    /// The teacher's greedy action, without spending budget.
    pub fn greedy_action(&self, state: &[f64]) -> Result<usize> {
        Ok(argmax(&self.agent.logits(state)?))
    }

    fn give(&mut self, state: &[f64]) -> Result<Option<usize>> {
        let action = self.greedy_action(state)?;
        self.budget -= 1;
        self.advised += 1;
        Ok(Some(action))
    }

    /// Advises on every step until the budget runs out.
    pub fn advice_at_beginning(&mut self, state: &[f64]) -> Result<Option<usize>> {
        if self.budget == 0 {
            return Ok(None);
        }
        self.give(state)
    }

    /// Overrides the student when its action differs from the teacher's
    /// greedy choice.
    pub fn mistake_correction(
        &mut self,
        state: &[f64],
        student_action: usize,
    ) -> Result<Option<usize>> {
        if self.budget == 0 {
            return Ok(None);
        }
        let action = self.greedy_action(state)?;
        if action == student_action {
            return Ok(None);
        }
        self.budget -= 1;
        self.advised += 1;
        Ok(Some(action))
    }

    /// The student asks with probability `epsilon(episode)` whenever it is
    /// less confident than the teacher about `state`. Needs a teacher RND.
    pub fn confidence_epsilon_decay<R: Rng + ?Sized>(
        &mut self,
        student_rnd: &RndPair,
        state: &[f64],
        episode: usize,
        schedule: EpsilonSchedule,
        rng: &mut R,
    ) -> Result<Option<usize>> {
        if self.budget == 0 {
            return Ok(None);
        }
        let teacher_rnd = self.rnd.as_ref().ok_or_else(|| {
            Error::InvalidConfig("confidence-based advice needs a teacher RND".into())
        })?;
        if student_rnd.uncertainty(state)? <= teacher_rnd.uncertainty(state)? {
            return Ok(None);
        }
        let eps = schedule.epsilon(episode);
        if eps <= 0.0 || rng.gen::<f64>() >= eps {
            return Ok(None);
        }
        self.give(state)
    }
}
