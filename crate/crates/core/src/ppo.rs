//! Clipped-surrogate PPO with separate policy and value networks.
//!
//! Advantages are one-step TD residuals `r + gamma * V(s') * (1 - done) - V(s)`
//! and the value net regresses onto the matching one-step bootstrap target.
//! Each update runs `epochs` full-batch passes over the collected samples.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Adam, DenseNet, GradientTape, NetSnapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub update_iter: usize,
    pub learning_rate: f64,
    pub hidden_layers: Vec<usize>,
}

impl PpoConfig {
    pub fn predator_prey() -> Self {
        PpoConfig {
            gamma: 0.99,
            clip_eps: 0.2,
            epochs: 10,
            update_iter: 500,
            learning_rate: 1e-3,
            hidden_layers: vec![64],
        }
    }

    pub fn mobility() -> Self {
        PpoConfig {
            gamma: 0.999,
            clip_eps: 0.2,
            epochs: 10,
            update_iter: 32,
            learning_rate: 1e-4,
            hidden_layers: vec![128; 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("ppo: {msg}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be positive");
        }
        if self.epochs == 0 || self.update_iter == 0 {
            return bad("epochs and update_iter must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.hidden_layers.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self::predator_prey()
    }
}

/// One interaction as PPO consumes it. `log_prob` is the log-probability of
/// `action` under the policy that is treated as the sampling policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub state: Vec<f64>,
    pub action: usize,
    pub log_prob: f64,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Clipped-surrogate loss of the final epoch.
    pub policy_loss: f64,
    /// Value MSE of the final epoch.
    pub value_loss: f64,
    /// Share of samples whose gradient was cut by clipping in the final epoch.
    pub clip_fraction: f64,
    pub mean_advantage: f64,
    pub samples: usize,
    pub epochs: usize,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Index of the largest entry, first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

#[derive(Debug, Clone)]
pub struct PpoAgent {
    policy: DenseNet,
    value: DenseNet,
    policy_opt: Adam,
    value_opt: Adam,
    config: PpoConfig,
    rollout: Vec<Sample>,
    updates: u64,
}

impl PpoAgent {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_count: usize,
        config: PpoConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut sizes = vec![state_dim];
        sizes.extend(&config.hidden_layers);
        sizes.push(action_count);
        let policy = DenseNet::new(&sizes, rng)?;
        *sizes.last_mut().expect("non-empty") = 1;
        let value = DenseNet::new(&sizes, rng)?;
        Ok(Self::from_nets(policy, value, config))
    }

    fn from_nets(policy: DenseNet, value: DenseNet, config: PpoConfig) -> Self {
        PpoAgent {
            policy_opt: Adam::new(&policy, config.learning_rate),
            value_opt: Adam::new(&value, config.learning_rate),
            policy,
            value,
            config,
            rollout: Vec::new(),
            updates: 0,
        }
    }

    pub fn config(&self) -> &PpoConfig {
        &self.config
    }

    pub fn policy(&self) -> &DenseNet {
        &self.policy
    }

    pub fn value_net(&self) -> &DenseNet {
        &self.value
    }

    pub fn state_dim(&self) -> usize {
        self.policy.input_dim()
    }

    pub fn action_count(&self) -> usize {
        self.policy.output_dim()
    }

    /// Number of completed optimisation rounds (rollout updates or pretraining).
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn rollout(&self) -> &[Sample] {
        &self.rollout
    }

    pub fn logits(&self, state: &[f64]) -> Result<Vec<f64>> {
        let logits = self.policy.forward(state)?;
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("policy logits"));
        }
        Ok(logits)
    }

    pub fn action_probabilities(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(state)?))
    }

    pub fn log_prob(&self, state: &[f64], action: usize) -> Result<f64> {
        let logits = self.logits(state)?;
        log_softmax(&logits)
            .get(action)
            .copied()
            .ok_or(Error::DimensionMismatch {
                expected: logits.len(),
                actual: action,
            })
    }

    /// Samples from the softmax policy when `explore` is set, otherwise takes
    /// the argmax. Returns the action and its log-probability.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        explore: bool,
        rng: &mut R,
    ) -> Result<(usize, f64)> {
        let logits = self.logits(state)?;
        let log_probs = log_softmax(&logits);
        let action = if explore {
            sample_categorical(&softmax(&logits), rng)
        } else {
            argmax(&logits)
        };
        Ok((action, log_probs[action]))
    }

    pub fn value(&self, state: &[f64]) -> Result<f64> {
        Ok(self.value.forward(state)?[0])
    }

    /// `r + gamma * V(s') * (1 - done)`.
    pub fn value_target(&self, sample: &Sample) -> Result<f64> {
        let bootstrap = if sample.done {
            0.0
        } else {
            self.config.gamma * self.value(&sample.next_state)?
        };
        Ok(sample.reward + bootstrap)
    }

    pub fn one_step_advantage(&self, sample: &Sample) -> Result<f64> {
        Ok(self.value_target(sample)? - self.value(&sample.state)?)
    }

    pub fn store(&mut self, sample: Sample) {
        self.rollout.push(sample);
    }

    pub fn update_due(&self) -> bool {
        self.rollout.len() >= self.config.update_iter
    }

    /// Runs [`ppo_update`](Self::ppo_update) on the collected rollout.
    pub fn update(&mut self) -> Result<UpdateStats> {
        let batch = std::mem::take(&mut self.rollout);
        self.ppo_update(&batch)
    }

    /// K epochs of clipped-surrogate and value regression over `batch`.
    /// Advantages and value targets are fixed from the networks as they stand
    /// when the call starts. The rollout is cleared whether or not the
    /// update succeeds; on a non-finite loss the parameters are left untouched.
    pub fn ppo_update(&mut self, batch: &[Sample]) -> Result<UpdateStats> {
        self.rollout.clear();
        if batch.is_empty() {
            return Err(Error::EmptyBatch("ppo_update"));
        }
        let advantages = batch
            .iter()
            .map(|s| self.one_step_advantage(s))
            .collect::<Result<Vec<_>>>()?;
        let targets = batch
            .iter()
            .map(|s| self.value_target(s))
            .collect::<Result<Vec<_>>>()?;
        self.optimize(batch, &advantages, &targets, self.config.epochs)
    }

    pub(crate) fn optimize(
        &mut self,
        batch: &[Sample],
        advantages: &[f64],
        targets: &[f64],
        epochs: usize,
    ) -> Result<UpdateStats> {
        let saved = (
            self.policy.clone(),
            self.value.clone(),
            self.policy_opt.clone(),
            self.value_opt.clone(),
        );
        let mut stats = UpdateStats {
            mean_advantage: advantages.iter().sum::<f64>() / advantages.len() as f64,
            samples: batch.len(),
            epochs,
            ..UpdateStats::default()
        };
        let result = (|| -> Result<()> {
            for _ in 0..epochs {
                let (policy_loss, policy_tape, clip_fraction) =
                    self.surrogate_gradient(batch, advantages, self.config.clip_eps)?;
                let (value_loss, value_tape) = self.value_gradient(batch, targets)?;
                if !policy_loss.is_finite() || !value_loss.is_finite() {
                    return Err(Error::NonFinite("ppo loss"));
                }
                self.policy_opt.step(&mut self.policy, &policy_tape)?;
                self.value_opt.step(&mut self.value, &value_tape)?;
                stats.policy_loss = policy_loss;
                stats.value_loss = value_loss;
                stats.clip_fraction = clip_fraction;
            }
            Ok(())
        })();
        if let Err(e) = result {
            (self.policy, self.value, self.policy_opt, self.value_opt) = saved;
            return Err(e);
        }
        self.updates += 1;
        Ok(stats)
    }

    /// Mean clipped-surrogate loss `-mean(min(ratio * A, clip(ratio) * A))`
    /// over `batch`, its policy-parameter gradient, and the clipped share.
    pub fn surrogate_gradient(
        &self,
        batch: &[Sample],
        advantages: &[f64],
        clip_eps: f64,
    ) -> Result<(f64, GradientTape, f64)> {
        if batch.len() != advantages.len() {
            return Err(Error::DimensionMismatch {
                expected: batch.len(),
                actual: advantages.len(),
            });
        }
        let n = batch.len() as f64;
        let states: Vec<&[f64]> = batch.iter().map(|s| s.state.as_slice()).collect();
        let clipped = std::sync::atomic::AtomicUsize::new(0);
        let (loss, tape) = self.policy.batch_gradient(&states, |i, logits| {
            let sample = &batch[i];
            let adv = advantages[i];
            let log_probs = log_softmax(logits);
            let ratio = (log_probs[sample.action] - sample.log_prob).exp();
            let objective = clipped_objective(ratio, adv, clip_eps);
            let mut grad = vec![0.0; logits.len()];
            if ratio * adv <= objective {
                // unclipped branch active: d(-ratio*A/n)/dlogit_k = -(ratio*A/n)(1[k=a] - p_k)
                let scale = -ratio * adv / n;
                for (k, (g, lp)) in grad.iter_mut().zip(&log_probs).enumerate() {
                    let indicator = if k == sample.action { 1.0 } else { 0.0 };
                    *g = scale * (indicator - lp.exp());
                }
            } else {
                clipped.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            }
            (-objective / n, grad)
        })?;
        let clip_fraction = clipped.into_inner() as f64 / n;
        Ok((loss, tape, clip_fraction))
    }

    /// Mean squared error of `V(s)` against `targets`, with its gradient.
    pub fn value_gradient(&self, batch: &[Sample], targets: &[f64]) -> Result<(f64, GradientTape)> {
        let n = batch.len() as f64;
        let states: Vec<&[f64]> = batch.iter().map(|s| s.state.as_slice()).collect();
        self.value.batch_gradient(&states, |i, out| {
            let err = out[0] - targets[i];
            (err * err / n, vec![2.0 * err / n])
        })
    }

    pub fn checkpoint(&self) -> PpoCheckpoint {
        PpoCheckpoint {
            config: self.config.clone(),
            policy: self.policy.snapshot(),
            value: self.value.snapshot(),
        }
    }

    /// Rebuilds an agent from a checkpoint with fresh optimiser state.
    pub fn from_checkpoint(checkpoint: PpoCheckpoint) -> Result<Self> {
        checkpoint.config.validate()?;
        let policy = DenseNet::from_snapshot(checkpoint.policy)?;
        let value = DenseNet::from_snapshot(checkpoint.value)?;
        if policy.input_dim() != value.input_dim() || value.output_dim() != 1 {
            return Err(Error::format(
                "checkpoint",
                "policy and value networks do not fit together",
            ));
        }
        Ok(Self::from_nets(policy, value, checkpoint.config))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoCheckpoint {
    pub config: PpoConfig,
    pub policy: NetSnapshot,
    pub value: NetSnapshot,
}

impl PpoCheckpoint {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.len() - 1
}
