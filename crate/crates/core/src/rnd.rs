//! Random network distillation used as a per-state confidence label.
//!
//! A frozen, randomly initialised target network embeds a state; a predictor
//! of the same shape is trained to reproduce that embedding on visited
//! states. The mean squared gap between the two outputs is the uncertainty
//! `u`: low on familiar states, high on novel ones.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Adam, DenseNet, GradientBuffer, NetSnapshot};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RndConfig {
    pub hidden: usize,
    pub rnd_size: usize,
    pub learning_rate: f64,
}

impl Default for RndConfig {
    fn default() -> Self {
        RndConfig {
            hidden: 256,
            rnd_size: 1024,
            learning_rate: 1e-4,
        }
    }
}

impl RndConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.rnd_size == 0 {
            return Err(Error::InvalidConfig(
                "rnd: hidden and rnd_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(
                "rnd: learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RndPair {
    target: DenseNet,
    predictor: DenseNet,
    optimizer: Adam,
    gradient: GradientBuffer,
    config: RndConfig,
}

impl RndPair {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, config: RndConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let sizes = [input_dim, config.hidden, config.rnd_size];
        let target = DenseNet::new(&sizes, rng)?;
        let predictor = DenseNet::new(&sizes, rng)?;
        Ok(RndPair {
            optimizer: Adam::new(&predictor, config.learning_rate),
            gradient: GradientBuffer::new(&predictor),
            target,
            predictor,
            config,
        })
    }

    pub fn config(&self) -> &RndConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.target.input_dim()
    }

    pub fn target(&self) -> &DenseNet {
        &self.target
    }

    pub fn predictor(&self) -> &DenseNet {
        &self.predictor
    }

    /// Mean squared difference between target and predictor embeddings.
    pub fn uncertainty(&self, state: &[f64]) -> Result<f64> {
        let t = self.target.forward(state)?;
        let p = self.predictor.forward(state)?;
        Ok(mean_squared_gap(&t, &p))
    }

    pub fn uncertainties<S: AsRef<[f64]> + Sync>(&self, states: &[S]) -> Result<Vec<f64>> {
        par::map(states, |s| self.uncertainty(s.as_ref()))
            .into_iter()
            .collect()
    }

    /// One optimiser step on the predictor over `states`. Returns the mean
    /// discrepancy measured before the step.
    pub fn update<S: AsRef<[f64]> + Sync>(&mut self, states: &[S]) -> Result<f64> {
        if states.is_empty() {
            return Err(Error::EmptyBatch("rnd_update"));
        }
        let targets = self.target_embeddings(states)?;
        let n = states.len() as f64;
        let k = self.config.rnd_size as f64;
        let loss = self.predictor.batch_gradient_with(
            states,
            |i, out| {
                let target = &targets[i];
                let grad = out
                    .iter()
                    .zip(target)
                    .map(|(p, t)| 2.0 * (p - t) / (k * n))
                    .collect();
                (mean_squared_gap(target, out) / n, grad)
            },
            &mut self.gradient,
        )?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("rnd loss"));
        }
        self.optimizer
            .step(&mut self.predictor, self.gradient.tape())?;
        Ok(loss)
    }

    fn target_embeddings<S: AsRef<[f64]> + Sync>(&self, states: &[S]) -> Result<Vec<Vec<f64>>> {
        par::map(states, |s| self.target.forward(s.as_ref()))
            .into_iter()
            .collect()
    }

    pub fn checkpoint(&self) -> RndCheckpoint {
        RndCheckpoint {
            config: self.config.clone(),
            target: self.target.snapshot(),
            predictor: self.predictor.snapshot(),
        }
    }

    pub fn from_checkpoint(checkpoint: RndCheckpoint) -> Result<Self> {
        checkpoint.config.validate()?;
        let target = DenseNet::from_snapshot(checkpoint.target)?;
        let predictor = DenseNet::from_snapshot(checkpoint.predictor)?;
        if target.layer_sizes() != predictor.layer_sizes() {
            return Err(Error::format(
                "rnd checkpoint",
                "target and predictor shapes differ",
            ));
        }
        Ok(RndPair {
            optimizer: Adam::new(&predictor, checkpoint.config.learning_rate),
            gradient: GradientBuffer::new(&predictor),
            target,
            predictor,
            config: checkpoint.config,
        })
    }
}

fn mean_squared_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RndCheckpoint {
    pub config: RndConfig,
    pub target: NetSnapshot,
    pub predictor: NetSnapshot,
}

impl RndCheckpoint {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
