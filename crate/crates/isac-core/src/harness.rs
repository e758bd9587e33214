//! Experiment harness: runs one configuration over its seed list, writes
//! per-seed artifacts, aggregates them, and drives parameter sweeps.
//!
//! Layout under the output directory:
//!
//! ```text
//! out/
//!   config.json              the experiment as given
//!   seed_<s>/
//!     metrics.csv            one row per training round
//!     trace.csv              per-slot log of the final evaluation episode
//!     checkpoint.bin         trained parameters (learned policies only)
//!   aggregate.csv            per-round mean ± std across seeds
//! ```
//!
//! Every CSV starts with a comment line carrying a schema tag and the
//! seed-independent config fingerprint, so aggregation can refuse to mix
//! incompatible runs.  All artifacts are byte-reproducible except the
//! wall-clock column of `metrics.csv`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::baselines::{GaPolicy, RandomPolicy, SlotPolicy};
use crate::config::{ConfigError, ExperimentConfig, PolicyKind};
use crate::env::{EnvError, IsacEnv, StepInfo};
use crate::happo::{EvalTrace, MetricsRow, TrainError, Trainer};
use crate::seeds::{Domain, SeedSplitter};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("training: {0}")]
    Train(#[from] TrainError),
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("output directory {0} is not empty (use force to overwrite)")]
    NotEmpty(PathBuf),
    #[error("schema mismatch: {0}")]
    Schema(String),
}

// ─── Run artifacts ─────────────────────────────────────────────────────────

/// Summary statistics of one evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub episode_return: f64,
    pub mean_rho: f64,
    pub mean_rho_bs: f64,
    pub rmse: [f64; 3],
}

impl EvalSummary {
    pub fn from_trace(trace: &EvalTrace) -> Self {
        let slots = trace.infos.len().max(1) as f64;
        let mut sq = [0.0; 3];
        for info in &trace.infos {
            for ax in 0..3 {
                let e = info.target_estimate[ax] - info.target_truth[ax];
                sq[ax] += e * e;
            }
        }
        Self {
            episode_return: trace.episode_return,
            mean_rho: trace.infos.iter().map(|i| i.rho).sum::<f64>() / slots,
            mean_rho_bs: trace.infos.iter().map(|i| i.rho_bs_only).sum::<f64>() / slots,
            rmse: sq.map(|s| (s / slots).sqrt()),
        }
    }
}

/// One seed's outputs, kept in memory for callers that want to inspect a
/// run without re-parsing its CSV files.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub eval: EvalSummary,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub fingerprint: u64,
    pub per_seed: Vec<SeedRun>,
}

// ─── Running ───────────────────────────────────────────────────────────────

/// Runs the experiment over all its seeds into `out_dir`.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path, force: bool) -> Result<RunSummary, HarnessError> {
    cfg.validate()?;
    prepare_dir(out_dir, force)?;
    fs::write(out_dir.join("config.json"), serde_json::to_string_pretty(cfg).map_err(ConfigError::from)? + "\n")?;

    let fingerprint = cfg.fingerprint();
    let resolved = cfg.resolved();
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let seed_dir = out_dir.join(format!("seed_{seed}"));
        fs::create_dir_all(&seed_dir)?;
        let run = if cfg.policy.is_learned() {
            run_seed_learned(&resolved, seed, &seed_dir, fingerprint)?
        } else {
            run_seed_baseline(&resolved, seed, &seed_dir, fingerprint)?
        };
        log::info!(
            "{} seed {seed}: final reward {:.1}, eval rho {:.3}",
            cfg.policy.name(),
            run.rows.last().map_or(f64::NAN, |r| r.mean_reward),
            run.eval.mean_rho
        );
        per_seed.push(run);
    }
    aggregate(out_dir)?;
    Ok(RunSummary { out_dir: out_dir.to_path_buf(), fingerprint, per_seed })
}

fn prepare_dir(dir: &Path, force: bool) -> Result<(), HarnessError> {
    if dir.exists() && dir.read_dir()?.next().is_some() {
        if !force {
            return Err(HarnessError::NotEmpty(dir.to_path_buf()));
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn run_seed_learned(
    cfg: &ExperimentConfig,
    seed: u64,
    seed_dir: &Path,
    fingerprint: u64,
) -> Result<SeedRun, HarnessError> {
    let mut trainer = Trainer::new(&cfg.env, &cfg.trainer, seed)?;
    let mut metrics = fs::File::create(seed_dir.join("metrics.csv"))?;
    writeln!(metrics, "# isac-metrics v1 fingerprint={fingerprint:016x}")?;
    writeln!(metrics, "{}", MetricsRow::CSV_HEADER)?;
    let mut io_err = None;
    let rows = trainer.train(|row| {
        if let Err(e) = writeln!(metrics, "{}", row.to_csv()) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    trainer.save_checkpoint(&seed_dir.join("checkpoint.bin"))?;
    let trace = trainer.eval_episode(0)?;
    write_trace(&seed_dir.join("trace.csv"), fingerprint, &trace.infos, &trace.rewards)?;
    Ok(SeedRun { seed, rows, eval: EvalSummary::from_trace(&trace) })
}

/// Baselines produce the same `metrics.csv` schema so their curves drop
/// straight into the learned-policy plots; there is no checkpoint.
fn run_seed_baseline(
    cfg: &ExperimentConfig,
    seed: u64,
    seed_dir: &Path,
    fingerprint: u64,
) -> Result<SeedRun, HarnessError> {
    let splitter = SeedSplitter::new(seed);
    let workers = cfg.trainer.workers;
    let make_policy = |s: u64| -> Box<dyn SlotPolicy> {
        match cfg.policy {
            PolicyKind::Ga => Box::new(GaPolicy::new(s)),
            _ => Box::new(RandomPolicy::new(s)),
        }
    };

    let mut metrics = fs::File::create(seed_dir.join("metrics.csv"))?;
    writeln!(metrics, "# isac-metrics v1 fingerprint={fingerprint:016x}")?;
    writeln!(metrics, "{}", MetricsRow::CSV_HEADER)?;
    let mut rows = Vec::with_capacity(cfg.trainer.episodes);
    for round in 0..cfg.trainer.episodes {
        let started = std::time::Instant::now();
        let mut acc = BaselineAccumulator::default();
        for w in 0..workers {
            let idx = (round * workers + w) as u64;
            let mut env = IsacEnv::new(&cfg.env, splitter.seed(Domain::Env, idx))?;
            let mut policy = make_policy(splitter.seed(Domain::Baseline, idx));
            for _ in 0..env.horizon() {
                let out = policy.step_slot(&mut env)?;
                acc.push(&out.info, &out.reward.comm);
            }
            acc.episode_returns.push(env.episode_return());
        }
        let mut row = acc.into_row(round, cfg);
        row.wall_s = started.elapsed().as_secs_f64();
        writeln!(metrics, "{}", row.to_csv())?;
        rows.push(row);
    }

    // Evaluation episode from dedicated streams.
    let mut env = IsacEnv::new(&cfg.env, splitter.seed(Domain::Eval, 0))?;
    let mut policy = make_policy(splitter.seed(Domain::Baseline, u64::MAX));
    let mut infos = Vec::with_capacity(env.horizon());
    let mut rewards = Vec::with_capacity(env.horizon());
    for _ in 0..env.horizon() {
        let out = policy.step_slot(&mut env)?;
        rewards.push(out.reward.total);
        infos.push(out.info);
    }
    let trace =
        EvalTrace { infos, rewards, episode_return: env.episode_return() };
    write_trace(&seed_dir.join("trace.csv"), fingerprint, &trace.infos, &trace.rewards)?;
    Ok(SeedRun { seed, rows, eval: EvalSummary::from_trace(&trace) })
}

#[derive(Default)]
struct BaselineAccumulator {
    episode_returns: Vec<f64>,
    slots: usize,
    rho_sum: f64,
    rho_bs_sum: f64,
    violations: usize,
    sq_err: [f64; 3],
}

impl BaselineAccumulator {
    fn push(&mut self, info: &StepInfo, shortfalls: &[f64]) {
        self.slots += 1;
        self.rho_sum += info.rho;
        self.rho_bs_sum += info.rho_bs_only;
        self.violations += shortfalls.iter().filter(|&&s| s < 0.0).count();
        for ax in 0..3 {
            let e = info.target_estimate[ax] - info.target_truth[ax];
            self.sq_err[ax] += e * e;
        }
    }

    fn into_row(self, round: usize, cfg: &ExperimentConfig) -> MetricsRow {
        let slots = self.slots.max(1) as f64;
        let uav_slots = (self.slots * cfg.env.num_uavs).max(1) as f64;
        MetricsRow {
            episode: round,
            // Baselines always face the final difficulty.
            level: cfg.trainer.curriculum_levels,
            mean_reward: self.episode_returns.iter().sum::<f64>()
                / self.episode_returns.len().max(1) as f64,
            mean_rho: self.rho_sum / slots,
            mean_rho_bs: self.rho_bs_sum / slots,
            violation_rate: self.violations as f64 / uav_slots,
            rmse_x: (self.sq_err[0] / slots).sqrt(),
            rmse_y: (self.sq_err[1] / slots).sqrt(),
            rmse_z: (self.sq_err[2] / slots).sqrt(),
            wall_s: 0.0,
        }
    }
}

// ─── Trace CSV ─────────────────────────────────────────────────────────────

fn write_trace(
    path: &Path,
    fingerprint: u64,
    infos: &[StepInfo],
    rewards: &[f64],
) -> Result<(), HarnessError> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "# isac-trace v1 fingerprint={fingerprint:016x}")?;
    let n = infos.first().map_or(0, |i| i.uav_positions.len());
    let mut header =
        "slot,reward,rho,rho_bs,truth_x,truth_y,truth_z,est_x,est_y,est_z".to_string();
    for i in 0..n {
        header.push_str(&format!(",uav{i}_x,uav{i}_y,uav{i}_z,sinr{i}_db"));
    }
    header.push_str(",sinr_sense_bs,reverted");
    writeln!(f, "{header}")?;
    for (slot, (info, reward)) in infos.iter().zip(rewards).enumerate() {
        let mut line = format!(
            "{slot},{reward},{},{},{},{},{},{},{},{}",
            info.rho,
            info.rho_bs_only,
            info.target_truth[0],
            info.target_truth[1],
            info.target_truth[2],
            info.target_estimate[0],
            info.target_estimate[1],
            info.target_estimate[2],
        );
        for i in 0..n {
            let p = &info.uav_positions[i];
            line.push_str(&format!(",{},{},{},{}", p.x, p.y, p.z, info.sinr_comm_db[i]));
        }
        line.push_str(&format!(",{},{}", info.sinr_sense_bs, u8::from(info.movement_reverted)));
        writeln!(f, "{line}")?;
    }
    Ok(())
}

// ─── Aggregation ───────────────────────────────────────────────────────────

/// One aggregated cell: a metrics column at one round, mean ± std across
/// seeds (sample std, 0 for a single seed).
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub episode: usize,
    pub field: String,
    pub mean: f64,
    pub std: f64,
}

/// Aggregates all `seed_*/metrics.csv` under `run_dir` into
/// `aggregate.csv` (long format).  Refuses to mix files with different
/// fingerprints, headers, or row counts.
pub fn aggregate(run_dir: &Path) -> Result<Vec<AggregateRow>, HarnessError> {
    let mut seed_dirs: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(run_dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stripped) = name.strip_prefix("seed_") {
            if let Ok(seed) = stripped.parse::<u64>() {
                seed_dirs.push((seed, entry.path()));
            }
        }
    }
    seed_dirs.sort_by_key(|&(seed, _)| seed);
    if seed_dirs.is_empty() {
        return Err(HarnessError::Schema(format!("no seed_* directories in {}", run_dir.display())));
    }

    let mut tag: Option<String> = None;
    let mut header: Option<Vec<String>> = None;
    let mut tables: Vec<Vec<Vec<f64>>> = Vec::new();
    for (seed, dir) in &seed_dirs {
        let path = dir.join("metrics.csv");
        let text = fs::read_to_string(&path)?;
        let mut lines = text.lines();
        let this_tag = lines
            .next()
            .ok_or_else(|| HarnessError::Schema(format!("{} is empty", path.display())))?;
        match &tag {
            None => tag = Some(this_tag.to_string()),
            Some(t) if t != this_tag => {
                return Err(HarnessError::Schema(format!(
                    "seed {seed}: tag `{this_tag}` differs from `{t}`"
                )))
            }
            _ => {}
        }
        let this_header: Vec<String> = lines
            .next()
            .ok_or_else(|| HarnessError::Schema(format!("{} lacks a header", path.display())))?
            .split(',')
            .map(str::to_string)
            .collect();
        match &header {
            None => header = Some(this_header),
            Some(h) if *h != this_header => {
                return Err(HarnessError::Schema(format!("seed {seed}: column header differs")))
            }
            _ => {}
        }
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let row: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
            rows.push(row.map_err(|e| {
                HarnessError::Schema(format!("seed {seed}: bad number in `{line}`: {e}"))
            })?);
        }
        if let Some(first) = tables.first() {
            if first.len() != rows.len() {
                return Err(HarnessError::Schema(format!(
                    "seed {seed}: {} rows, expected {}",
                    rows.len(),
                    first.len()
                )));
            }
        }
        tables.push(rows);
    }

    let header = header.unwrap();
    let n_seeds = tables.len();
    let mut out_rows = Vec::new();
    for r in 0..tables[0].len() {
        let episode = tables[0][r][0] as usize;
        for (c, field) in header.iter().enumerate().skip(1) {
            let vals: Vec<f64> = tables.iter().map(|t| t[r][c]).collect();
            let mean = vals.iter().sum::<f64>() / n_seeds as f64;
            let std = if n_seeds > 1 {
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n_seeds - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            out_rows.push(AggregateRow { episode, field: field.clone(), mean, std });
        }
    }

    let fingerprint = tag
        .unwrap()
        .rsplit_once('=')
        .map(|(_, v)| v.to_string())
        .unwrap_or_default();
    let mut f = fs::File::create(run_dir.join("aggregate.csv"))?;
    writeln!(f, "# isac-aggregate v1 fingerprint={fingerprint} seeds={n_seeds}")?;
    writeln!(f, "episode,field,mean,std")?;
    for row in &out_rows {
        writeln!(f, "{},{},{},{}", row.episode, row.field, row.mean, row.std)?;
    }
    Ok(out_rows)
}

// ─── Sweeps ────────────────────────────────────────────────────────────────

/// Runs the base experiment once per value of a single overridden field
/// (dotted path into the config, e.g. `env.kron_rank`).  Each value gets
/// its own subdirectory `<leaf>=<value>` under `out_root`.
pub fn sweep(
    base: &ExperimentConfig,
    param: &str,
    values: &[String],
    out_root: &Path,
    force: bool,
) -> Result<Vec<RunSummary>, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Schema("sweep needs at least one value".into()));
    }
    fs::create_dir_all(out_root)?;
    let leaf = param.rsplit('.').next().unwrap_or(param);
    let mut summaries = Vec::with_capacity(values.len());
    for value in values {
        let mut json = serde_json::to_value(base).map_err(ConfigError::from)?;
        crate::config::apply_override(&mut json, &format!("{param}={value}"))?;
        let mut cfg = crate::config::experiment_from_value(json)?;
        cfg.name = format!("{}_{leaf}={value}", base.name);
        let dir = out_root.join(format!("{leaf}={value}"));
        summaries.push(run(&cfg, &dir, force)?);
    }
    Ok(summaries)
}

// ─── Tests ─────────────────────────────────────────────────────────────────
