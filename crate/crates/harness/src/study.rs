//! The four-condition fleet study and the transfer budget sweep.
//!
//! Fleet study, for each seed:
//!
//! 1. train on the source demand and evaluate there, capturing experience;
//! 2. evaluate the source policy unchanged on the target demand;
//! 3. train from scratch on the target demand and evaluate there;
//! 4. pretrain on captured experience, then train and evaluate on the target.

use std::path::Path;
use std::sync::Arc;

use crate::config::{ExperimentConfig, Mode, Scenario};
use crate::error::{Error, Result};
use crate::experiment::{run_with_inputs, ExperimentResult, Inputs};
use crate::output::{
    budget_comparison, mean_metrics, write_budget_comparison, write_metric_table, write_results,
    BudgetRow,
};

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub source: ExperimentResult,
    pub policy_transfer: ExperimentResult,
    pub no_transfer: ExperimentResult,
    pub transfer: ExperimentResult,
}

impl StudyResult {
    pub fn conditions(&self) -> [&ExperimentResult; 4] {
        [
            &self.source,
            &self.policy_transfer,
            &self.no_transfer,
            &self.transfer,
        ]
    }

    /// One row per condition: label and seed-averaged headline metrics.
    pub fn table(&self) -> Vec<(String, [f64; 5])> {
        self.conditions()
            .iter()
            .filter_map(|r| {
                let ms: Vec<_> = r
                    .seeds
                    .iter()
                    .filter_map(|s| s.evaluation.as_ref().map(|e| &e.metrics))
                    .collect();
                mean_metrics(&ms).map(|m| (r.label(), m))
            })
            .collect()
    }
}

fn with_mode(config: &ExperimentConfig, mode: Mode, seeds: Vec<u64>) -> ExperimentConfig {
    ExperimentConfig {
        mode,
        seeds,
        buffer: None,
        checkpoint: None,
        ..config.clone()
    }
}

fn concat(config: ExperimentConfig, parts: Vec<ExperimentResult>) -> ExperimentResult {
    ExperimentResult {
        config,
        seeds: parts.into_iter().flat_map(|p| p.seeds).collect(),
    }
}

pub fn run_mod_study(config: &ExperimentConfig) -> Result<StudyResult> {
    if config.scenario != Scenario::Mod {
        return Err(Error::Config("the fleet study needs the mod scenario".into()));
    }
    let source_cfg = with_mode(config, Mode::TrainSource, config.seeds.clone());
    let source = run_with_inputs(&source_cfg, &Inputs::default())?;
    let no_transfer = run_with_inputs(
        &with_mode(config, Mode::NoTransfer, config.seeds.clone()),
        &Inputs::default(),
    )?;

    let mut policy_parts = Vec::new();
    let mut transfer_parts = Vec::new();
    for s in &source.seeds {
        let buffer = s
            .buffer
            .clone()
            .ok_or_else(|| Error::Config("source run produced no buffer".into()))?;
        let inputs = Inputs {
            buffer: Some(Arc::new(buffer)),
            checkpoint: Some(Arc::new(s.checkpoint.clone())),
        };
        policy_parts.push(run_with_inputs(
            &with_mode(config, Mode::PolicyTransfer, vec![s.seed]),
            &inputs,
        )?);
        transfer_parts.push(run_with_inputs(
            &with_mode(config, Mode::Transfer, vec![s.seed]),
            &inputs,
        )?);
    }
    Ok(StudyResult {
        source,
        policy_transfer: concat(
            with_mode(config, Mode::PolicyTransfer, config.seeds.clone()),
            policy_parts,
        ),
        no_transfer,
        transfer: concat(
            with_mode(config, Mode::Transfer, config.seeds.clone()),
            transfer_parts,
        ),
    })
}

/// Writes each condition into its own directory plus a combined
/// `mod_metrics.csv` with one row per condition.
pub fn write_study(study: &StudyResult, out_dir: &Path) -> Result<()> {
    for r in study.conditions() {
        write_results(r, &out_dir.join(r.label()))?;
    }
    write_metric_table(&out_dir.join("mod_metrics.csv"), &study.table())
}

#[derive(Debug, Clone)]
pub struct BudgetSweep {
    pub baseline: ExperimentResult,
    pub runs: Vec<(usize, ExperimentResult)>,
}

impl BudgetSweep {
    pub fn rows(&self) -> Vec<BudgetRow> {
        let runs: Vec<_> = self.runs.iter().map(|(b, r)| (*b, r)).collect();
        budget_comparison(
            &self.baseline,
            &runs,
            self.baseline.config.predator_prey.report_window,
        )
    }
}

/// Runs transfer at each budget and a no-transfer baseline on the same seeds.
pub fn run_budget_sweep(
    config: &ExperimentConfig,
    inputs: &Inputs,
    budgets: &[usize],
) -> Result<BudgetSweep> {
    let baseline = run_with_inputs(
        &with_mode(config, Mode::NoTransfer, config.seeds.clone()),
        &Inputs::default(),
    )?;
    let mut runs = Vec::new();
    for &budget in budgets {
        let mut c = config.clone();
        c.mode = Mode::Transfer;
        c.transfer.budget = budget;
        c.validate()?;
        runs.push((budget, run_with_inputs(&c, inputs)?));
    }
    Ok(BudgetSweep { baseline, runs })
}

pub fn write_budget_sweep(sweep: &BudgetSweep, out_dir: &Path) -> Result<()> {
    write_results(&sweep.baseline, &out_dir.join("no_transfer"))?;
    for (budget, r) in &sweep.runs {
        write_results(r, &out_dir.join(format!("budget_{budget}")))?;
    }
    write_budget_comparison(&out_dir.join("budget_comparison.csv"), &sweep.rows())
}
