//! `isac` — command-line front end for the simulator and trainer.
//!
//! Three subcommands:
//!
//! * `run` trains (or, for `ga`/`random`, just rolls out) one experiment
//!   over its seed list and writes per-seed metrics, traces, and
//!   checkpoints.
//! * `aggregate` rebuilds the cross-seed summary of a finished run.
//! * `sweep` repeats an experiment once per value of a single config field.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use isac_core::config::{apply_override, experiment_from_value, ExperimentConfig, PolicyKind};
use isac_core::harness;

#[derive(Parser)]
#[command(name = "isac", version, about = "Multi-UAV ISAC simulator and trainer")]
struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment over its seed list.
    Run(RunArgs),
    /// Rebuild `aggregate.csv` from the seed directories of a finished run.
    Aggregate {
        /// Run directory containing `seed_*` subdirectories.
        #[arg(long)]
        dir: PathBuf,
    },
    /// Repeat the experiment once per value of one config field.
    Sweep(SweepArgs),
}

/// Flags shared by `run` and `sweep` that assemble the experiment.
#[derive(Args)]
struct ConfigArgs {
    /// Experiment JSON file; omitted = built-in default scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Policy override: chappo, happo, ncl, nkr, nqr, ga, or random.
    #[arg(long)]
    policy: Option<String>,
    /// Seed list override, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Training-round count override.
    #[arg(long)]
    episodes: Option<usize>,
    /// Field override `path.to.field=value` (value is a JSON literal);
    /// repeatable, applied after every other flag.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn build(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = &self.policy {
            cfg.policy = PolicyKind::parse(p)?;
        }
        if !self.seeds.is_empty() {
            cfg.seeds = self.seeds.clone();
        }
        if let Some(e) = self.episodes {
            cfg.trainer.episodes = e;
        }
        if !self.sets.is_empty() {
            let mut json = serde_json::to_value(&cfg)?;
            for spec in &self.sets {
                apply_override(&mut json, spec).with_context(|| format!("--set {spec}"))?;
            }
            cfg = experiment_from_value(json)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for run artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dotted config path to vary, e.g. `env.kron_rank`.
    #[arg(long)]
    param: String,
    /// Values to try (JSON literals), comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// Root directory; each value gets a `<field>=<value>` subdirectory.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite non-empty output directories.
    #[arg(long)]
    force: bool,
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.config.build()?;
            let summary = harness::run(&cfg, &args.out, args.force)?;
            println!(
                "{} `{}` finished: {} seed(s) -> {}",
                cfg.policy.name(),
                cfg.name,
                summary.per_seed.len(),
                summary.out_dir.display()
            );
            for seed in &summary.per_seed {
                let last = seed.rows.last().context("run produced no rounds")?;
                println!(
                    "  seed {}: final mean reward {:.2}, eval rho {:.4}, rmse [{:.2}, {:.2}, {:.2}] m",
                    seed.seed,
                    last.mean_reward,
                    seed.eval.mean_rho,
                    seed.eval.rmse[0],
                    seed.eval.rmse[1],
                    seed.eval.rmse[2],
                );
            }
        }
        Command::Aggregate { dir } => {
            let rows = harness::aggregate(&dir)?;
            println!("wrote {} ({} cells)", dir.join("aggregate.csv").display(), rows.len());
        }
        Command::Sweep(args) => {
            let base = args.config.build()?;
            let summaries =
                harness::sweep(&base, &args.param, &args.values, &args.out, args.force)?;
            println!("{} of `{}` -> {}", args.param, base.name, args.out.display());
            for (value, summary) in args.values.iter().zip(&summaries) {
                let n = summary.per_seed.len() as f64;
                let rho =
                    summary.per_seed.iter().map(|s| s.eval.mean_rho).sum::<f64>() / n;
                let reward = summary
                    .per_seed
                    .iter()
                    .filter_map(|s| s.rows.last())
                    .map(|r| r.mean_reward)
                    .sum::<f64>()
                    / n;
                println!("  {}={value}: mean eval rho {rho:.4}, final reward {reward:.2}", args.param);
            }
        }
    }
    Ok(())
}
