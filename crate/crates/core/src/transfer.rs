//! Confidence-labelled experience capture and confidence-gated pretraining.
//!
//! Source side: while the source agent trains, every interaction from the
//! final `capture_window` share of its episodes is stored together with the
//! RND uncertainty of its state ([`TransferBuffer::record`]).
//!
//! Target side: the buffer is filtered to interactions with `u < t`, a
//! budget of `B` of them is drawn uniformly without replacement
//! ([`filter_and_sample`]), and a freshly initialised PPO agent takes a few
//! optimisation passes over that batch before it starts exploring
//! ([`pretrain`]).
//!
//! # Buffer file layout
//!
//! Binary (`.bin`), all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes   b"XFERBUF1"
//! state_dim    u32
//! action_count u32
//! count        u64
//! count records, each:
//!   s          state_dim x f64
//!   a          u32
//!   r          f64
//!   s_next     state_dim x f64
//!   done       u8 (0 or 1)
//!   u          f64
//! ```
//!
//! JSON lines (`.jsonl`): a header object
//! `{"state_dim":..,"action_count":..,"count":..}` followed by one
//! `{"s":[..],"a":..,"r":..,"s_next":[..],"done":..,"u":..}` object per line.
//! Floats are written in shortest round-trip form, so both layouts are
//! lossless.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ppo::{PpoAgent, Sample, UpdateStats};

const MAGIC: &[u8; 8] = b"XFERBUF1";

/// One interaction `(s, a, r, s', u)` plus its terminal flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
    pub u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum ThresholdSpec {
    Fixed(f64),
    Mean,
    Median,
}

impl fmt::Display for ThresholdSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdSpec::Fixed(v) => write!(f, "{v}"),
            ThresholdSpec::Mean => f.write_str("mean"),
            ThresholdSpec::Median => f.write_str("median"),
        }
    }
}

impl FromStr for ThresholdSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(ThresholdSpec::Mean),
            "median" => Ok(ThresholdSpec::Median),
            other => {
                let v: f64 = other.parse().map_err(|_| {
                    Error::InvalidConfig(format!(
                        "threshold must be a number, `mean` or `median`, got `{s}`"
                    ))
                })?;
                let spec = ThresholdSpec::Fixed(v);
                spec.validate()?;
                Ok(spec)
            }
        }
    }
}

impl ThresholdSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ThresholdSpec::Fixed(v) if !(*v >= 0.0) => Err(Error::InvalidConfig(format!(
                "fixed threshold must be non-negative, got {v}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    pub threshold: ThresholdSpec,
    pub budget: usize,
    pub pretrain_epochs: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            threshold: ThresholdSpec::Mean,
            budget: 5_000,
            pretrain_epochs: 10,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        self.threshold.validate()?;
        if self.budget == 0 {
            return Err(Error::InvalidConfig(
                "transfer budget must be positive".into(),
            ));
        }
        if self.pretrain_epochs == 0 {
            return Err(Error::InvalidConfig(
                "pretrain_epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferBuffer {
    state_dim: usize,
    action_count: usize,
    capture_window: f64,
    transitions: Vec<Transition>,
}

impl TransferBuffer {
    pub fn new(state_dim: usize, action_count: usize, capture_window: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&capture_window) {
            return Err(Error::InvalidConfig(format!(
                "capture window must lie in [0, 1], got {capture_window}"
            )));
        }
        Ok(TransferBuffer {
            state_dim,
            action_count,
            capture_window,
            transitions: Vec::new(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn capture_window(&self) -> f64 {
        self.capture_window
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// First episode index (0-based) whose interactions are stored.
    pub fn first_captured_episode(&self, total_episodes: usize) -> usize {
        let captured = (self.capture_window * total_episodes as f64).round() as usize;
        total_episodes - captured.min(total_episodes)
    }

    pub fn captures(&self, episode_index: usize, total_episodes: usize) -> bool {
        episode_index >= self.first_captured_episode(total_episodes)
    }

    /// Appends `transition` when `episode_index` lies in the capture window.
    /// Returns whether it was stored.
    pub fn record(
        &mut self,
        episode_index: usize,
        total_episodes: usize,
        transition: Transition,
    ) -> Result<bool> {
        if !self.captures(episode_index, total_episodes) {
            return Ok(false);
        }
        self.push(transition)?;
        Ok(true)
    }

    fn push(&mut self, t: Transition) -> Result<()> {
        if t.s.len() != self.state_dim || t.s_next.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim,
                actual: if t.s.len() != self.state_dim {
                    t.s.len()
                } else {
                    t.s_next.len()
                },
            });
        }
        if t.a >= self.action_count {
            return Err(Error::DimensionMismatch {
                expected: self.action_count,
                actual: t.a,
            });
        }
        if !(t.u >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "uncertainty must be non-negative, got {}",
                t.u
            )));
        }
        self.transitions.push(t);
        Ok(())
    }

    pub fn uncertainties(&self) -> impl Iterator<Item = f64> + '_ {
        self.transitions.iter().map(|t| t.u)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(self.state_dim as u32).to_le_bytes())?;
        w.write_all(&(self.action_count as u32).to_le_bytes())?;
        w.write_all(&(self.transitions.len() as u64).to_le_bytes())?;
        for t in &self.transitions {
            for v in &t.s {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&(t.a as u32).to_le_bytes())?;
            w.write_all(&t.r.to_le_bytes())?;
            for v in &t.s_next {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&[u8::from(t.done)])?;
            w.write_all(&t.u.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a binary buffer. The capture window is not part of the file; the
    /// loaded buffer reports 1.0.
    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("buffer file", "bad magic bytes"));
        }
        let state_dim = read_u32(&mut r)? as usize;
        let action_count = read_u32(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        let mut buffer = TransferBuffer::new(state_dim, action_count, 1.0)?;
        buffer.transitions.reserve(count);
        for _ in 0..count {
            let s = (0..state_dim)
                .map(|_| read_f64(&mut r))
                .collect::<Result<Vec<_>>>()?;
            let a = read_u32(&mut r)? as usize;
            let reward = read_f64(&mut r)?;
            let s_next = (0..state_dim)
                .map(|_| read_f64(&mut r))
                .collect::<Result<Vec<_>>>()?;
            let mut done = [0u8; 1];
            r.read_exact(&mut done)?;
            let done = match done[0] {
                0 => false,
                1 => true,
                b => return Err(Error::format("buffer file", format!("bad done flag {b}"))),
            };
            let u = read_f64(&mut r)?;
            buffer.push(Transition {
                s,
                a,
                r: reward,
                s_next,
                done,
                u,
            })?;
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::format("buffer file", "trailing bytes after records"));
        }
        Ok(buffer)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = JsonlHeader {
            state_dim: self.state_dim,
            action_count: self.action_count,
            count: self.transitions.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for t in &self.transitions {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header: JsonlHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(Error::format("buffer jsonl", "missing header line")),
        };
        let mut buffer = TransferBuffer::new(header.state_dim, header.action_count, 1.0)?;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            buffer.push(serde_json::from_str(&line)?)?;
        }
        if buffer.len() != header.count {
            return Err(Error::format(
                "buffer jsonl",
                format!(
                    "header says {} records, found {}",
                    header.count,
                    buffer.len()
                ),
            ));
        }
        Ok(buffer)
    }

    /// Loads by extension: `.jsonl` as JSON lines, anything else as binary.
    pub fn load(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => Self::read_jsonl(path),
            _ => Self::read_binary(path),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlHeader {
    state_dim: usize,
    action_count: usize,
    count: usize,
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Turns a threshold spec into a number. Mean and median are taken over all
/// uncertainties in the buffer; an even count takes the average of the two
/// middle values.
pub fn resolve_threshold(buffer: &TransferBuffer, spec: ThresholdSpec) -> Result<f64> {
    match spec {
        ThresholdSpec::Fixed(v) => {
            spec.validate()?;
            Ok(v)
        }
        ThresholdSpec::Mean => {
            if buffer.is_empty() {
                return Err(Error::EmptyBuffer("mean"));
            }
            Ok(buffer.uncertainties().sum::<f64>() / buffer.len() as f64)
        }
        ThresholdSpec::Median => {
            if buffer.is_empty() {
                return Err(Error::EmptyBuffer("median"));
            }
            let mut us: Vec<f64> = buffer.uncertainties().collect();
            us.sort_by(f64::total_cmp);
            let mid = us.len() / 2;
            Ok(if us.len() % 2 == 1 {
                us[mid]
            } else {
                (us[mid - 1] + us[mid]) / 2.0
            })
        }
    }
}

/// Buffer indices whose uncertainty is strictly below `threshold`.
pub fn eligible_indices(buffer: &TransferBuffer, threshold: f64) -> Vec<usize> {
    buffer
        .transitions
        .iter()
        .enumerate()
        .filter(|(_, t)| t.u < threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Draws `min(budget, |eligible|)` distinct buffer indices uniformly at
/// random from the interactions with `u < threshold`, in random order.
pub fn sample_indices<R: Rng + ?Sized>(
    buffer: &TransferBuffer,
    threshold: f64,
    budget: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut eligible = eligible_indices(buffer, threshold);
    if eligible.len() < budget {
        log::warn!(
            "only {} interactions satisfy u < {threshold}; budget was {budget}",
            eligible.len()
        );
    }
    let take = budget.min(eligible.len());
    let (chosen, _) = eligible.partial_shuffle(rng, take);
    chosen.to_vec()
}

pub fn filter_and_sample<R: Rng + ?Sized>(
    buffer: &TransferBuffer,
    threshold: f64,
    budget: usize,
    rng: &mut R,
) -> Vec<Transition> {
    sample_indices(buffer, threshold, budget, rng)
        .into_iter()
        .map(|i| buffer.transitions[i].clone())
        .collect()
}

/// Pre-trains a fresh agent on transferred interactions.
///
/// Old log-probabilities come from the agent's policy as it stands before
/// pretraining, so the first pass sees ratios of exactly one. Advantages and
/// value targets use the fresh value network. `epochs` clipped-surrogate
/// passes follow. Returns `Ok(None)` (with a warning) for an empty batch.
pub fn pretrain(
    agent: &mut PpoAgent,
    batch: &[Transition],
    epochs: usize,
) -> Result<Option<UpdateStats>> {
    if batch.is_empty() {
        log::warn!("empty transfer batch; continuing without pretraining");
        return Ok(None);
    }
    if epochs == 0 {
        return Ok(None);
    }
    let samples = batch
        .iter()
        .map(|t| {
            Ok(Sample {
                log_prob: agent.log_prob(&t.s, t.a)?,
                state: t.s.clone(),
                action: t.a,
                reward: t.r,
                next_state: t.s_next.clone(),
                done: t.done,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let advantages = samples
        .iter()
        .map(|s| agent.one_step_advantage(s))
        .collect::<Result<Vec<_>>>()?;
    let targets = samples
        .iter()
        .map(|s| agent.value_target(s))
        .collect::<Result<Vec<_>>>()?;
    agent
        .optimize(&samples, &advantages, &targets, epochs)
        .map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::PpoConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(u: f64) -> Transition {
        Transition {
            s: vec![0.0, 1.0],
            a: 0,
            r: 0.0,
            s_next: vec![1.0, 0.0],
            done: false,
            u,
        }
    }

    fn buffer_with(us: &[f64]) -> TransferBuffer {
        let mut b = TransferBuffer::new(2, 3, 1.0).unwrap();
        for &u in us {
            b.record(0, 1, t(u)).unwrap();
        }
        b
    }

    #[test]
    fn capture_window_boundary() {
        let mut b = TransferBuffer::new(2, 3, 0.2).unwrap();
        assert!(!b.record(2399, 3000, t(0.1)).unwrap());
        assert!(b.record(2400, 3000, t(0.1)).unwrap());
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn full_and_empty_windows() {
        let mut all = TransferBuffer::new(2, 3, 1.0).unwrap();
        let mut none = TransferBuffer::new(2, 3, 0.0).unwrap();
        for ep in 0..50 {
            all.record(ep, 50, t(0.1)).unwrap();
            none.record(ep, 50, t(0.1)).unwrap();
        }
        assert_eq!(all.len(), 50);
        assert!(none.is_empty());
    }

    #[test]
    fn window_of_forty_percent_over_sixty_episodes() {
        let b = TransferBuffer::new(2, 3, 0.4).unwrap();
        assert_eq!(b.first_captured_episode(60), 36);
    }

    #[test]
    fn invalid_window_and_record_rejected() {
        assert!(TransferBuffer::new(2, 3, 1.5).is_err());
        let mut b = TransferBuffer::new(2, 3, 1.0).unwrap();
        assert!(b.record(0, 1, t(-1.0)).is_err());
        let mut wide = t(0.1);
        wide.s = vec![0.0; 3];
        assert!(b.record(0, 1, wide).is_err());
    }

    #[test]
    fn threshold_examples() {
        let b = buffer_with(&[1.0, 2.0, 9.0]);
        assert_eq!(resolve_threshold(&b, ThresholdSpec::Mean).unwrap(), 4.0);
        assert_eq!(resolve_threshold(&b, ThresholdSpec::Median).unwrap(), 2.0);
        assert_eq!(
            resolve_threshold(&b, ThresholdSpec::Fixed(0.02)).unwrap(),
            0.02
        );
        let even = buffer_with(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(
            resolve_threshold(&even, ThresholdSpec::Median).unwrap(),
            2.5
        );
    }

    #[test]
    fn empty_buffer_statistics_are_errors() {
        let b = buffer_with(&[]);
        assert!(matches!(
            resolve_threshold(&b, ThresholdSpec::Mean),
            Err(Error::EmptyBuffer("mean"))
        ));
        assert!(matches!(
            resolve_threshold(&b, ThresholdSpec::Median),
            Err(Error::EmptyBuffer("median"))
        ));
        assert_eq!(
            resolve_threshold(&b, ThresholdSpec::Fixed(1.0)).unwrap(),
            1.0
        );
    }

    #[test]
    fn threshold_parsing() {
        assert_eq!(
            "mean".parse::<ThresholdSpec>().unwrap(),
            ThresholdSpec::Mean
        );
        assert_eq!(
            "Median".parse::<ThresholdSpec>().unwrap(),
            ThresholdSpec::Median
        );
        assert_eq!(
            "0.015".parse::<ThresholdSpec>().unwrap(),
            ThresholdSpec::Fixed(0.015)
        );
        assert!("-1".parse::<ThresholdSpec>().is_err());
        assert!("lots".parse::<ThresholdSpec>().is_err());
    }

    #[test]
    fn strict_inequality() {
        let b = buffer_with(&[0.1, 0.5, 0.9]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got = filter_and_sample(&b, 0.5, 10, &mut rng);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].u, 0.1);
    }

    #[test]
    fn zero_budget_is_empty() {
        let b = buffer_with(&[0.1, 0.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(filter_and_sample(&b, 1.0, 0, &mut rng).is_empty());
    }

    #[test]
    fn budget_caps_a_large_eligible_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let us: Vec<f64> = (0..14_000).map(|_| rng.gen_range(0.0..2.0)).collect();
        let b = buffer_with(&us);
        let idx = sample_indices(&b, 1.0, 5_000, &mut rng);
        assert_eq!(idx.len(), 5_000);
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 5_000);
        assert!(idx.iter().all(|&i| b.transitions()[i].u < 1.0));
    }

    #[test]
    fn pretrain_zero_epochs_leaves_agent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut agent = PpoAgent::new(2, 3, PpoConfig::default(), &mut rng).unwrap();
        let before = agent.policy().clone();
        assert!(pretrain(&mut agent, &[t(0.1)], 0).unwrap().is_none());
        assert_eq!(agent.policy(), &before);
    }

    #[test]
    fn pretrain_empty_batch_is_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut agent = PpoAgent::new(2, 3, PpoConfig::default(), &mut rng).unwrap();
        let before = agent.policy().clone();
        assert!(pretrain(&mut agent, &[], 10).unwrap().is_none());
        assert_eq!(agent.policy(), &before);
    }

    #[test]
    fn pretrain_raises_probability_of_rewarded_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut agent = PpoAgent::new(2, 4, PpoConfig::default(), &mut rng).unwrap();
        let state = vec![1.0, -1.0];
        let batch: Vec<Transition> = (0..64)
            .map(|_| Transition {
                s: state.clone(),
                a: 2,
                r: 1.0,
                s_next: state.clone(),
                done: true,
                u: 0.0,
            })
            .collect();
        let before = agent.action_probabilities(&state).unwrap()[2];
        let stats = pretrain(&mut agent, &batch, 10).unwrap().unwrap();
        let after = agent.action_probabilities(&state).unwrap()[2];
        assert!(after > before, "{before} -> {after}");
        assert_eq!(stats.epochs, 10);
    }

    #[test]
    fn binary_and_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b = TransferBuffer::new(3, 5, 1.0).unwrap();
        for i in 0..25 {
            b.record(
                0,
                1,
                Transition {
                    s: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    a: i % 5,
                    r: rng.gen_range(-1.0..1.0) / 3.0,
                    s_next: (0..3).map(|_| rng.gen()).collect(),
                    done: i % 7 == 0,
                    u: rng.gen::<f64>() * 1e-3,
                },
            )
            .unwrap();
        }
        let bin = dir.path().join("buf.bin");
        let jsonl = dir.path().join("buf.jsonl");
        b.write_binary(&bin).unwrap();
        b.write_jsonl(&jsonl).unwrap();
        assert_eq!(TransferBuffer::load(&bin).unwrap(), b);
        assert_eq!(TransferBuffer::load(&jsonl).unwrap(), b);
    }

    #[test]
    fn corrupt_binary_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOTABUFFER").unwrap();
        assert!(TransferBuffer::read_binary(&path).is_err());
        let b = buffer_with(&[0.5]);
        b.write_binary(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, bytes).unwrap();
        assert!(TransferBuffer::read_binary(&path).is_err());
    }
}
