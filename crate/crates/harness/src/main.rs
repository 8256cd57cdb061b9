use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use xfer_core::transfer::ThresholdSpec;
use xfer_envs::rideshare::demand::ingest_trips_csv;
use xfer_envs::rideshare::TraceEvent;
use xfer_harness::config::{ExperimentConfig, Mode, Overrides, Profile, Scenario};
use xfer_harness::experiment::{run_experiment, Inputs};
use xfer_harness::metrics::compute_mod_metrics;
use xfer_harness::mobility::World;
use xfer_harness::output::{summarize, write_metric_table, write_results};
use xfer_harness::study::{run_budget_sweep, run_mod_study, write_budget_sweep, write_study};
use xfer_harness::parse_seeds;

#[derive(Parser)]
#[command(name = "xfer", version, about = "Confidence-gated experience transfer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train source agents and save their experience buffers and checkpoints.
    TrainSource(Common),
    /// Pretrain on a filtered source buffer, then train. Several budgets
    /// also run a no-transfer baseline and write budget_comparison.csv.
    Transfer(Common),
    /// Run a baseline: no_transfer, policy_transfer or an advice mode.
    Baseline {
        #[arg(long, value_enum, default_value = "no-transfer")]
        mode: Mode,
        #[command(flatten)]
        common: Common,
    },
    /// Run a saved checkpoint without learning.
    Evaluate(Common),
    /// Recompute fleet metrics from a saved trace and demand file.
    Metrics {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        demand: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the four-condition fleet study end to end.
    Study(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    scenario: Option<Scenario>,
    /// A fixed value, `mean` or `median`.
    #[arg(long)]
    threshold: Option<ThresholdSpec>,
    /// One budget or a comma-separated list.
    #[arg(long, value_delimiter = ',')]
    budget: Vec<usize>,
    /// `5`, `0,3,7` or `0..10`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    buffer: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long, value_enum)]
    profile: Option<Profile>,
}

impl Common {
    fn config(&self, mode: Mode) -> anyhow::Result<ExperimentConfig> {
        self.config_with(mode, None)
    }

    /// `scenario` is used when neither the flag nor the file names one.
    fn config_with(
        &self,
        mode: Mode,
        scenario: Option<Scenario>,
    ) -> anyhow::Result<ExperimentConfig> {
        let file_scenario = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str::<serde_json::Value>(&text)
                    .map(|v| v.get("scenario").is_some())
                    .unwrap_or(false)
            }
            None => false,
        };
        let overrides = Overrides {
            scenario: self.scenario.or(if file_scenario { None } else { scenario }),
            mode: Some(mode),
            profile: self.profile,
            threshold: self.threshold,
            budget: self.budget.first().copied(),
            seeds: self.seeds.as_deref().map(parse_seeds).transpose()?,
            buffer: self.buffer.clone(),
            checkpoint: self.checkpoint.clone(),
        };
        let config = match &self.config {
            Some(path) => ExperimentConfig::load(path, &overrides)?,
            None => ExperimentConfig::resolve(None, &overrides)?,
        };
        Ok(config)
    }
}

fn run(common: &Common, mode: Mode) -> anyhow::Result<()> {
    let config = common.config(mode)?;
    log::info!(
        "{} {} over {} seeds",
        config.scenario,
        config.mode,
        config.seeds.len()
    );
    let result = run_experiment(&config)?;
    let files = write_results(&result, &common.out)?;
    for s in summarize(&result).seeds {
        log::info!(
            "seed {}: mean reward {:.4}, early {:.4}, final {:.4}",
            s.seed,
            s.mean_reward,
            s.early_mean,
            s.final_mean
        );
    }
    println!("wrote {} files to {}", files.len(), common.out.display());
    Ok(())
}

fn transfer(common: &Common) -> anyhow::Result<()> {
    if common.budget.len() <= 1 {
        return run(common, Mode::Transfer);
    }
    let config = common.config(Mode::Transfer)?;
    let inputs = Inputs::load(&config)?;
    let sweep = run_budget_sweep(&config, &inputs, &common.budget)?;
    write_budget_sweep(&sweep, &common.out)?;
    for row in sweep.rows() {
        println!(
            "budget {}: early {:.4} vs {:.4} ({}/{} pairs ahead), final {:.4} vs {:.4}",
            row.budget,
            row.early_transfer,
            row.early_baseline,
            row.early_wins,
            row.pairs,
            row.final_transfer,
            row.final_baseline
        );
    }
    Ok(())
}

fn metrics(trace: &Path, demand: &Path, common: &Common) -> anyhow::Result<()> {
    let overrides = Overrides {
        scenario: Some(Scenario::Mod),
        profile: common.profile,
        ..Overrides::default()
    };
    let config = match &common.config {
        Some(path) => ExperimentConfig::load(path, &overrides)?,
        None => ExperimentConfig::resolve(None, &overrides)?,
    };
    let world = World::new(&config.mobility)?;
    let requests = ingest_trips_csv(
        demand,
        world.network.node_count(),
        config.mobility.demand.expiry_s,
    )
    .with_context(|| format!("reading demand {}", demand.display()))?;
    let file = File::open(trace).with_context(|| format!("opening {}", trace.display()))?;
    let events = serde_json::Deserializer::from_reader(BufReader::new(file))
        .into_iter::<TraceEvent>()
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("parsing {}", trace.display()))?;
    let m = compute_mod_metrics(&events, &requests, &world.network)?;
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    let label = trace
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    write_metric_table(&common.out.join("mod_metrics.csv"), &[(label, m.headline())])?;
    println!(
        "served {:.2}%  shared {:.2}%  sigma_pass {:.3}  km {:.3}  detour {:.2}%",
        m.served_pct, m.rs_pct, m.sigma_pass, m.mean_distance_km, m.detour_ratio
    );
    Ok(())
}

fn study(common: &Common) -> anyhow::Result<()> {
    let config = common.config_with(Mode::NoTransfer, Some(Scenario::Mod))?;
    if config.scenario != Scenario::Mod {
        bail!("the study verb runs the mod scenario");
    }
    let study = run_mod_study(&config)?;
    write_study(&study, &common.out)?;
    for (label, row) in study.table() {
        println!("{label}: {row:?}");
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::TrainSource(c) => run(c, Mode::TrainSource),
        Command::Transfer(c) => transfer(c),
        Command::Baseline { mode, common } => {
            if matches!(mode, Mode::TrainSource | Mode::Transfer) {
                Err(anyhow::anyhow!("use the {mode} verb instead of baseline"))
            } else {
                run(common, *mode)
            }
        }
        Command::Evaluate(c) => run(c, Mode::PolicyTransfer),
        Command::Metrics {
            trace,
            demand,
            common,
        } => metrics(trace, demand, common),
        Command::Study(c) => study(c),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
