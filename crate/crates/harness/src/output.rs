//! Result files.
//!
//! | file | contents |
//! |------|----------|
//! | `config.json` | the resolved configuration |
//! | `rewards_seed<N>.csv` | `episode,reward,length` for one seed |
//! | `aggregate.csv` | `episode,mean,std,adjusted_episode` across seeds |
//! | `summary.json` | per-seed scalars: buffer sizes, transfer batch, advice count |
//! | `checkpoint_seed<N>.json` | final agent of one seed |
//! | `buffer_seed<N>.bin` | captured experience (source runs) |
//! | `mod_metrics.csv` | `scenario` plus the five fleet metrics, averaged over seeds |
//! | `mod_metrics_seeds.csv` | the same per seed |
//! | `waiting_times.csv` | `seed,request,wait_s` |
//! | `trace_seed<N>.jsonl`, `demand_seed<N>.csv` | evaluation trace and demand |
//!
//! `adjusted_episode` shifts the curve right by the pretraining cost in
//! source episodes, so transfer runs can be compared at equal experience.
//! Every file is a pure function of the config and seeds.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use xfer_envs::rideshare::demand::export_trips_csv;

use crate::error::{Error, Result};
use crate::experiment::{ExperimentResult, TransferInfo};
use crate::metrics::{ModMetrics, HEADLINE_COLUMNS};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub episodes: usize,
    pub mean_reward: f64,
    pub early_mean: f64,
    pub final_mean: f64,
    pub buffer_size: Option<usize>,
    /// Steps or decisions inside the capture window (source runs).
    pub expected_capture: Option<usize>,
    pub transfer: Option<TransferInfo>,
    pub advised: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub report_window: usize,
    pub seeds: Vec<SeedSummary>,
}

pub fn window_mean(xs: &[f64], from: usize, to: usize) -> f64 {
    let to = to.min(xs.len());
    let from = from.min(to);
    if from == to {
        return 0.0;
    }
    xs[from..to].iter().sum::<f64>() / (to - from) as f64
}

pub fn early_mean(xs: &[f64], window: usize) -> f64 {
    window_mean(xs, 0, window)
}

pub fn final_mean(xs: &[f64], window: usize) -> f64 {
    window_mean(xs, xs.len().saturating_sub(window), xs.len())
}

pub fn summarize(result: &ExperimentResult) -> Summary {
    let window = result.config.predator_prey.report_window;
    let seeds = result
        .seeds
        .iter()
        .map(|s| SeedSummary {
            seed: s.seed,
            episodes: s.rewards.len(),
            mean_reward: window_mean(&s.rewards, 0, s.rewards.len()),
            early_mean: early_mean(&s.rewards, window),
            final_mean: final_mean(&s.rewards, window),
            buffer_size: s.buffer.as_ref().map(|b| b.len()),
            expected_capture: s
                .buffer
                .as_ref()
                .map(|_| s.expected_capture(result.config.capture_window)),
            transfer: s.transfer.clone(),
            advised: s.advised,
        })
        .collect();
    Summary {
        scenario: result.label(),
        report_window: window,
        seeds,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::json(path, e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))
}

fn write_rows<R: Serialize>(path: &Path, header: &[&str], rows: &[R]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes every result file into `out_dir` and returns the paths written.
pub fn write_results(result: &ExperimentResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut emit = |name: String| {
        let p = out_dir.join(name);
        written.push(p.clone());
        p
    };

    write_json(&emit("config.json".into()), &result.config)?;
    write_json(&emit("summary.json".into()), &summarize(result))?;

    for s in &result.seeds {
        let rows: Vec<(usize, f64, usize)> = s
            .rewards
            .iter()
            .zip(&s.lengths)
            .enumerate()
            .map(|(e, (r, l))| (e, *r, *l))
            .collect();
        write_rows(
            &emit(format!("rewards_seed{}.csv", s.seed)),
            &["episode", "reward", "length"],
            &rows,
        )?;
        s.checkpoint
            .save(&emit(format!("checkpoint_seed{}.json", s.seed)))?;
        if let Some(buffer) = &s.buffer {
            let path = emit(format!("buffer_seed{}.bin", s.seed));
            buffer.write_binary(&path).map_err(|e| match e {
                xfer_core::Error::Io(io) => Error::io(&path, io),
                other => other.into(),
            })?;
        }
    }

    let agg = result.aggregate();
    let shift = result.pretrain_cost_episodes();
    let rows: Vec<(usize, f64, f64, usize)> = agg
        .mean
        .iter()
        .zip(&agg.std)
        .enumerate()
        .map(|(e, (m, s))| (e, *m, *s, e + shift))
        .collect();
    write_rows(
        &emit("aggregate.csv".into()),
        &["episode", "mean", "std", "adjusted_episode"],
        &rows,
    )?;

    let evaluated: Vec<_> = result
        .seeds
        .iter()
        .filter_map(|s| s.evaluation.as_ref().map(|e| (s, e)))
        .collect();
    if result.config.scenario == crate::config::Scenario::Mod {
        let label = result.label();
        let metrics: Vec<&ModMetrics> = evaluated.iter().map(|(_, e)| &e.metrics).collect();
        write_metric_table(
            &emit("mod_metrics.csv".into()),
            &mean_metrics(&metrics)
                .map(|m| vec![(label.clone(), m)])
                .unwrap_or_default(),
        )?;
        let mut header = vec!["seed", "scenario"];
        header.extend(HEADLINE_COLUMNS);
        let per_seed: Vec<(u64, String, [f64; 5])> = evaluated
            .iter()
            .map(|(s, e)| (s.seed, label.clone(), e.metrics.headline()))
            .collect();
        write_rows(&emit("mod_metrics_seeds.csv".into()), &header, &per_seed)?;
        let waits: Vec<(u64, u64, f64)> = evaluated
            .iter()
            .flat_map(|(s, e)| {
                e.metrics
                    .waiting_times_s
                    .iter()
                    .map(move |(r, w)| (s.seed, *r, *w))
            })
            .collect();
        write_rows(
            &emit("waiting_times.csv".into()),
            &["seed", "request", "wait_s"],
            &waits,
        )?;
        for (s, e) in &evaluated {
            let path = emit(format!("trace_seed{}.jsonl", s.seed));
            let mut w = create(&path)?;
            for event in &e.trace {
                serde_json::to_writer(&mut w, event).map_err(|err| Error::json(&path, err))?;
                w.write_all(b"\n").map_err(|err| Error::io(&path, err))?;
            }
            w.flush().map_err(|err| Error::io(&path, err))?;
            if let Some(demand) = &s.demand {
                export_trips_csv(&emit(format!("demand_seed{}.csv", s.seed)), demand)?;
            }
        }
    }
    Ok(written)
}

/// Column-wise mean of the five headline metrics; `None` for no input.
pub fn mean_metrics(metrics: &[&ModMetrics]) -> Option<[f64; 5]> {
    if metrics.is_empty() {
        return None;
    }
    let mut acc = [0.0; 5];
    for m in metrics {
        for (a, v) in acc.iter_mut().zip(m.headline()) {
            *a += v;
        }
    }
    Some(acc.map(|a| a / metrics.len() as f64))
}

/// `scenario` plus the five headline metric columns.
pub fn write_metric_table(path: &Path, rows: &[(String, [f64; 5])]) -> Result<()> {
    let mut header = vec!["scenario"];
    header.extend(HEADLINE_COLUMNS);
    write_rows(path, &header, rows)
}

pub fn read_metric_table(path: &Path) -> Result<Vec<(String, [f64; 5])>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::csv(path, e)))
        .collect()
}

/// Reads `aggregate.csv` back as `(mean, std)` series.
pub fn read_aggregate(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv_reader(path)?;
    let mut mean = Vec::new();
    let mut std = Vec::new();
    for row in r.deserialize::<(usize, f64, f64, usize)>() {
        let (_, m, s, _) = row.map_err(|e| Error::csv(path, e))?;
        mean.push(m);
        std.push(s);
    }
    Ok((mean, std))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetRow {
    pub budget: usize,
    pub pairs: usize,
    pub early_transfer: f64,
    pub early_baseline: f64,
    pub early_wins: usize,
    pub final_transfer: f64,
    pub final_baseline: f64,
    pub mean_batch: f64,
}

/// Compares transfer runs at several budgets against a no-transfer run
/// with the same seeds. Seeds missing from either side are skipped.
pub fn budget_comparison(
    baseline: &ExperimentResult,
    runs: &[(usize, &ExperimentResult)],
    window: usize,
) -> Vec<BudgetRow> {
    runs.iter()
        .map(|(budget, run)| {
            let pairs: Vec<_> = run
                .seeds
                .iter()
                .filter_map(|t| {
                    baseline
                        .seeds
                        .iter()
                        .find(|b| b.seed == t.seed)
                        .map(|b| (t, b))
                })
                .collect();
            let n = pairs.len().max(1) as f64;
            let avg = |f: &dyn Fn(&crate::experiment::SeedResult) -> f64, tl: bool| {
                pairs
                    .iter()
                    .map(|(t, b)| f(if tl { t } else { b }))
                    .sum::<f64>()
                    / n
            };
            let early = |s: &crate::experiment::SeedResult| early_mean(&s.rewards, window);
            let late = |s: &crate::experiment::SeedResult| final_mean(&s.rewards, window);
            BudgetRow {
                budget: *budget,
                pairs: pairs.len(),
                early_transfer: avg(&early, true),
                early_baseline: avg(&early, false),
                early_wins: pairs
                    .iter()
                    .filter(|(t, b)| early(t) > early(b))
                    .count(),
                final_transfer: avg(&late, true),
                final_baseline: avg(&late, false),
                mean_batch: pairs
                    .iter()
                    .map(|(t, _)| t.transfer.as_ref().map_or(0, |i| i.batch) as f64)
                    .sum::<f64>()
                    / n,
            }
        })
        .collect()
}

pub fn write_budget_comparison(path: &Path, rows: &[BudgetRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::csv(path, e))?;
    }
    if rows.is_empty() {
        w.write_record([
            "budget",
            "pairs",
            "early_transfer",
            "early_baseline",
            "early_wins",
            "final_transfer",
            "final_baseline",
            "mean_batch",
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
