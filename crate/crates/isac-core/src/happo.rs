//! Sequential multi-agent PPO with a task curriculum.
//!
//! One training round: every worker rolls one full episode in its own
//! environment replica (independent seed streams, so the parallel result is
//! identical to a serial run), the curriculum is checked against the mean
//! episode reward, advantages come from GAE, and then the agents are updated
//! *sequentially* in a random order.  Each agent maximises the clipped
//! surrogate against a running factor `M` that starts as the advantage and
//! is multiplied after each agent's update by that agent's final probability
//! ratio — so later agents in the order see the already-updated behaviour of
//! earlier ones.  The critic regresses on the GAE returns afterwards.
//!
//! All per-round randomness is re-derived from `(master seed, round)` via
//! [`SeedSplitter`], which keeps checkpoint resume bit-exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{EnvConfig, GradingSet, TrainerConfig};
use crate::env::{agent_input, EnvError, IsacEnv, JointAction, ObsNormalizer, StepInfo};
use crate::nn::{clip_grad_norm, read_checkpoint, write_checkpoint, Adam, Block, GaussianPolicy, MlpSpec, NnError};
use crate::seeds::{Domain, SeedSplitter};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("config: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] NnError),
    #[error("checkpoint schema mismatch: {0}")]
    BadCheckpoint(String),
    #[error("training diverged: {0}")]
    Diverged(&'static str),
}

// ─── Rollout storage ───────────────────────────────────────────────────────

/// One worker's episode: per-slot tensors plus episode summaries.
#[derive(Debug, Clone, Default)]
pub struct EpisodeRollout {
    /// Raw critic-state vectors (for normalizer statistics updates).
    pub raw_states: Vec<Vec<f64>>,
    /// Normalized observation cores (policy inputs before the one-hot id).
    pub norm_cores: Vec<Vec<f64>>,
    /// Normalized critic states.
    pub norm_states: Vec<Vec<f64>>,
    /// `[slot][agent]` sampled raw actions.
    pub actions: Vec<Vec<Vec<f64>>>,
    /// `[slot][agent]` log-densities at collection time.
    pub logps: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// De-normalized value predictions at collection time.
    pub values: Vec<f64>,
    pub episode_return: f64,
    pub rho_sum: f64,
    pub rho_bs_sum: f64,
    /// Count of (slot, UAV) pairs with a positive SINR shortfall.
    pub violation_count: usize,
    /// Per-axis sums of squared position estimation error.
    pub sq_err: [f64; 3],
}

/// One collection round across all workers, ordered by worker index.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub episodes: Vec<EpisodeRollout>,
}

impl RolloutBatch {
    pub fn num_slots(&self) -> usize {
        self.episodes.iter().map(|e| e.rewards.len()).sum()
    }

    pub fn mean_episode_return(&self) -> f64 {
        let n = self.episodes.len().max(1);
        self.episodes.iter().map(|e| e.episode_return).sum::<f64>() / n as f64
    }
}

// ─── GAE ───────────────────────────────────────────────────────────────────

/// Generalized advantage estimation over one episode with terminal
/// bootstrap value zero.  Returns `(advantages, returns)` where
/// `return_t = advantage_t + value_t`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len());
    let t_max = rewards.len();
    let mut adv = vec![0.0; t_max];
    let mut acc = 0.0;
    for t in (0..t_max).rev() {
        let v_next = if t + 1 < t_max { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * v_next - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Scale-only normalization: divides by the batch standard deviation without
/// centering, so the sign (and relative magnitude) of every sample is
/// preserved.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if n < 2.0 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    adv.iter_mut().for_each(|a| *a /= std);
}

// ─── Value-target normalization ────────────────────────────────────────────

/// Running mean/std of regression targets; disabled it is the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueNormalizer {
    enabled: bool,
    count: f64,
    mean: f64,
    m2: f64,
}

impl ValueNormalizer {
    pub fn new(enabled: bool) -> Self {
        Self { enabled, count: 0.0, mean: 0.0, m2: 0.0 }
    }

    pub fn update(&mut self, xs: &[f64]) {
        if !self.enabled {
            return;
        }
        for &x in xs {
            self.count += 1.0;
            let d = x - self.mean;
            self.mean += d / self.count;
            self.m2 += d * (x - self.mean);
        }
    }

    pub fn mean(&self) -> f64 {
        if self.enabled && self.count >= 1.0 {
            self.mean
        } else {
            0.0
        }
    }

    pub fn std(&self) -> f64 {
        if self.enabled && self.count >= 2.0 {
            (self.m2 / self.count).sqrt().max(1e-8)
        } else {
            1.0
        }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean()) / self.std()
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std() + self.mean()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        vec![if self.enabled { 1.0 } else { 0.0 }, self.count, self.mean, self.m2]
    }

    pub fn from_flat(flat: &[f64]) -> Option<Self> {
        if flat.len() != 4 {
            return None;
        }
        Some(Self { enabled: flat[0] != 0.0, count: flat[1], mean: flat[2], m2: flat[3] })
    }
}

// ─── Clipped-surrogate pieces ──────────────────────────────────────────────

/// Mean clipped surrogate over a batch and (optionally) its parameter
/// gradient: `mean_i min(ratio_i·m_i, clip(ratio_i, 1±ε)·m_i)`.
///
/// Ratios are taken against log-densities stored at collection time and
/// clamped at `ratio_clamp`.  Per standard PPO, a sample contributes no
/// gradient when the unclipped branch is not the active min (the clipped
/// branch is locally constant in the parameters).
pub fn surrogate_and_grad(
    policy: &GaussianPolicy,
    params: &[f64],
    inputs: &[Vec<f64>],
    actions: &[&[f64]],
    old_logps: &[f64],
    m: &[f64],
    clip_eps: f64,
    ratio_clamp: f64,
    mut grads: Option<&mut [f64]>,
) -> f64 {
    let count = inputs.len() as f64;
    let mut total = 0.0;
    for i in 0..inputs.len() {
        let logp = policy.log_prob(params, &inputs[i], actions[i]);
        let mut ratio = (logp - old_logps[i]).exp();
        if ratio > ratio_clamp {
            // Routine under aggressive multi-epoch updates; debug level keeps
            // long runs from flooding the log.
            log::debug!("probability ratio {ratio:.3e} clamped to {ratio_clamp:.1e}");
            ratio = ratio_clamp;
        }
        let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
        let (obj_un, obj_cl) = (ratio * m[i], clipped * m[i]);
        total += obj_un.min(obj_cl);
        if obj_un <= obj_cl {
            if let Some(g) = grads.as_deref_mut() {
                policy.log_prob_grad(params, &inputs[i], actions[i], m[i] * ratio / count, g);
            }
        }
    }
    total / count
}

/// Multiplies each running factor by the (clamped) final probability ratio
/// of the just-updated policy — the hand-off to the next agent in the
/// sequential order.
pub fn update_m_factors(
    policy: &GaussianPolicy,
    params: &[f64],
    inputs: &[Vec<f64>],
    actions: &[&[f64]],
    old_logps: &[f64],
    m: &mut [f64],
    ratio_clamp: f64,
) {
    for i in 0..inputs.len() {
        let logp = policy.log_prob(params, &inputs[i], actions[i]);
        let ratio = (logp - old_logps[i]).exp().min(ratio_clamp);
        m[i] *= ratio;
    }
}

// ─── Curriculum ────────────────────────────────────────────────────────────

/// Level state of the task curriculum.  Disabled curricula sit at the final
/// level permanently.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumState {
    pub enabled: bool,
    pub level: usize,
    pub levels: usize,
    pub reduced: GradingSet,
    pub final_grading: GradingSet,
    pub threshold: f64,
    /// Rounds at which a transition fired.
    pub transitions: Vec<usize>,
}

impl CurriculumState {
    pub fn new(
        enabled: bool,
        levels: usize,
        reduced: GradingSet,
        final_grading: GradingSet,
        threshold: f64,
    ) -> Self {
        let level = if enabled { 1 } else { levels };
        Self { enabled, level, levels, reduced, final_grading, threshold, transitions: Vec::new() }
    }

    /// Grading of the current level.
    pub fn grading(&self) -> GradingSet {
        GradingSet::at_level(self.level, self.levels, &self.reduced, &self.final_grading)
    }

    /// Advances one level when the mean episode reward clears the threshold;
    /// levels never decrease and stop at the final one.
    pub fn advance_if(&mut self, mean_reward: f64, round: usize) -> bool {
        if self.enabled && self.level < self.levels && mean_reward > self.threshold {
            self.level += 1;
            self.transitions.push(round);
            return true;
        }
        false
    }
}

// ─── Metrics ───────────────────────────────────────────────────────────────

/// One row of the per-round training log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    /// Collection-round index, 0-based.
    pub episode: usize,
    pub level: usize,
    /// Mean episode return over the round's workers.
    pub mean_reward: f64,
    /// Mean sensing cost over all slots of the round.
    pub mean_rho: f64,
    /// Mean sensing cost of the BS-only counterfactual over the same slots.
    pub mean_rho_bs: f64,
    /// Fraction of (slot, UAV) pairs violating the SINR floor.
    pub violation_rate: f64,
    pub rmse_x: f64,
    pub rmse_y: f64,
    pub rmse_z: f64,
    pub wall_s: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str =
        "episode,level,mean_reward,mean_rho,mean_rho_bs,violation_rate,rmse_x,rmse_y,rmse_z,wall_s";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.episode,
            self.level,
            self.mean_reward,
            self.mean_rho,
            self.mean_rho_bs,
            self.violation_rate,
            self.rmse_x,
            self.rmse_y,
            self.rmse_z,
            self.wall_s
        )
    }
}

// ─── Networks ──────────────────────────────────────────────────────────────

/// Actor and critic parameter state.
#[derive(Debug, Clone)]
pub struct Nets {
    pub actors: Vec<GaussianPolicy>,
    pub actor_params: Vec<Vec<f64>>,
    pub critic: MlpSpec,
    pub critic_params: Vec<f64>,
}

impl Nets {
    /// Builds actors for `n_uavs` displacement agents plus one beam agent,
    /// and the centralized critic.
    fn build(env: &IsacEnv, cfg: &TrainerConfig, rng: &mut ChaCha8Rng) -> Self {
        let n_agents = env.num_agents();
        let input = env.core_dim() + n_agents;
        let (uav_dim, bs_dim) = env.action_dims();
        let mut actors = Vec::with_capacity(n_agents);
        let mut actor_params = Vec::with_capacity(n_agents);
        for a in 0..n_agents {
            let bs = a + 1 == n_agents;
            let out = if bs { bs_dim } else { uav_dim };
            let std =
                if bs { cfg.initial_std * cfg.bs_std_scale } else { cfg.initial_std };
            let pol = GaussianPolicy::new(input, cfg.hidden, cfg.hidden_layers, out);
            actor_params.push(pol.init_params(rng, std));
            actors.push(pol);
        }
        let critic = MlpSpec {
            input: env.core_dim(),
            hidden: cfg.hidden,
            hidden_layers: cfg.hidden_layers,
            output: 1,
        };
        let critic_params = critic.init_params(rng, 1.0);
        Self { actors, actor_params, critic, critic_params }
    }
}

// ─── Trainer ───────────────────────────────────────────────────────────────

/// Full training state; one instance per (config, master seed) run.
pub struct Trainer {
    /// Scenario at final difficulty (grading endpoint).
    base_env: EnvConfig,
    /// Scenario at the current curriculum level.
    graded_env: EnvConfig,
    cfg: TrainerConfig,
    pub nets: Nets,
    actor_opts: Vec<Adam>,
    critic_opt: Adam,
    pub obs_norm: ObsNormalizer,
    pub val_norm: ValueNormalizer,
    pub curriculum: CurriculumState,
    splitter: SeedSplitter,
    round: usize,
}

impl Trainer {
    pub fn new(env: &EnvConfig, cfg: &TrainerConfig, master_seed: u64) -> Result<Self, TrainError> {
        cfg.validate()?;
        let splitter = SeedSplitter::new(master_seed);
        let probe = IsacEnv::new(env, 0)?;
        let mut init_rng = splitter.stream(Domain::Trainer, u64::MAX);
        let nets = Nets::build(&probe, cfg, &mut init_rng);
        let actor_opts =
            nets.actor_params.iter().map(|p| Adam::new(p.len(), cfg.lr)).collect::<Vec<_>>();
        let critic_opt = Adam::new(nets.critic_params.len(), cfg.lr);
        let curriculum = CurriculumState::new(
            cfg.curriculum,
            cfg.curriculum_levels,
            cfg.reduced_grading,
            env.grading_endpoint(),
            cfg.reward_threshold,
        );
        let mut graded_env = env.clone();
        graded_env.apply_grading(&curriculum.grading());
        let mut obs_norm = ObsNormalizer::new(probe.core_dim());
        if !cfg.obs_norm {
            obs_norm.set_frozen(true);
        }
        Ok(Self {
            base_env: env.clone(),
            graded_env,
            cfg: cfg.clone(),
            nets,
            actor_opts,
            critic_opt,
            obs_norm,
            val_norm: ValueNormalizer::new(cfg.value_norm),
            curriculum,
            splitter,
            round: 0,
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn num_agents(&self) -> usize {
        self.nets.actors.len()
    }

    /// Environment config at the current curriculum grading.
    pub fn graded_env(&self) -> &EnvConfig {
        &self.graded_env
    }

    /// Runs all remaining rounds, handing each metrics row to `sink`.
    pub fn train(
        &mut self,
        mut sink: impl FnMut(&MetricsRow),
    ) -> Result<Vec<MetricsRow>, TrainError> {
        let mut rows = Vec::new();
        while self.round < self.cfg.episodes {
            let row = self.train_round()?;
            sink(&row);
            rows.push(row);
        }
        Ok(rows)
    }

    /// One full round: collect → curriculum check → GAE → sequential actor
    /// updates → critic update.
    pub fn train_round(&mut self) -> Result<MetricsRow, TrainError> {
        let started = std::time::Instant::now();
        let batch = self.collect_rollouts()?;
        let mut row = self.summarize(&batch);

        // Curriculum check happens right after collection; a transition
        // re-grades the environment for the *next* round and resets the
        // optimizer moments while keeping all parameters.
        if self.curriculum.advance_if(row.mean_reward, self.round) {
            self.graded_env = self.base_env.clone();
            self.graded_env.apply_grading(&self.curriculum.grading());
            self.actor_opts.iter_mut().for_each(Adam::reset);
            self.critic_opt.reset();
            log::info!(
                "curriculum advanced to level {} at round {}",
                self.curriculum.level,
                self.round
            );
        }

        // Fold this round's raw states into the running observation
        // statistics (takes effect next round; this round's tensors were
        // normalized at collection time).
        for ep in &batch.episodes {
            for s in &ep.raw_states {
                self.obs_norm.update(s);
            }
        }

        // Advantages and returns.
        let mut advantages = Vec::with_capacity(batch.num_slots());
        let mut returns = Vec::with_capacity(batch.num_slots());
        for ep in &batch.episodes {
            let (a, r) = compute_gae(&ep.rewards, &ep.values, self.cfg.gamma, self.cfg.gae_lambda);
            advantages.extend(a);
            returns.extend(r);
        }
        normalize_advantages(&mut advantages);

        self.update_actors_sequentially(&batch, advantages)?;
        self.update_critic(&batch, &returns)?;

        if log::log_enabled!(log::Level::Debug) {
            let stds: Vec<String> = self
                .nets
                .actors
                .iter()
                .zip(&self.nets.actor_params)
                .map(|(pol, p)| {
                    let s = pol.stds(p);
                    format!("{:.4}", s.iter().sum::<f64>() / s.len() as f64)
                })
                .collect();
            log::debug!("round {} mean action std per agent: {}", self.round, stds.join(" "));
        }

        self.round += 1;
        row.wall_s = started.elapsed().as_secs_f64();
        Ok(row)
    }

    fn summarize(&self, batch: &RolloutBatch) -> MetricsRow {
        let slots: usize = batch.num_slots();
        let uav_slots: usize = slots * self.base_env.num_uavs;
        let rho_sum: f64 = batch.episodes.iter().map(|e| e.rho_sum).sum();
        let rho_bs_sum: f64 = batch.episodes.iter().map(|e| e.rho_bs_sum).sum();
        let violations: usize = batch.episodes.iter().map(|e| e.violation_count).sum();
        let mut sq = [0.0; 3];
        for e in &batch.episodes {
            for ax in 0..3 {
                sq[ax] += e.sq_err[ax];
            }
        }
        MetricsRow {
            episode: self.round,
            level: self.curriculum.level,
            mean_reward: batch.mean_episode_return(),
            mean_rho: rho_sum / slots.max(1) as f64,
            mean_rho_bs: rho_bs_sum / slots.max(1) as f64,
            violation_rate: violations as f64 / uav_slots.max(1) as f64,
            rmse_x: (sq[0] / slots.max(1) as f64).sqrt(),
            rmse_y: (sq[1] / slots.max(1) as f64).sqrt(),
            rmse_z: (sq[2] / slots.max(1) as f64).sqrt(),
            wall_s: 0.0,
        }
    }

    /// Collects one episode per worker in parallel.  Every worker derives
    /// its env and sampling streams from `(round, worker)`, so results are
    /// identical to a serial run and independent of thread scheduling.
    pub fn collect_rollouts(&self) -> Result<RolloutBatch, TrainError> {
        let workers = self.cfg.workers;
        let episodes: Vec<Result<EpisodeRollout, TrainError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let env_cfg = &self.graded_env;
                    let nets = &self.nets;
                    let obs_norm = &self.obs_norm;
                    let (v_mean, v_std) = (self.val_norm.mean(), self.val_norm.std());
                    let idx = (self.round * workers + w) as u64;
                    let env_seed = self.splitter.seed(Domain::Env, idx);
                    let policy_seed = self.splitter.seed(Domain::Policy, idx);
                    scope.spawn(move || {
                        collect_one(env_cfg, nets, obs_norm, v_mean, v_std, env_seed, policy_seed)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        let mut batch = RolloutBatch::default();
        for (w, ep) in episodes.into_iter().enumerate() {
            match ep {
                Ok(e) => batch.episodes.push(e),
                // An aborted episode is dropped and refilled from a fresh
                // stream so the batch keeps its size.
                Err(err) => {
                    log::warn!("worker {w} episode aborted ({err}); refilling");
                    let idx = (self.round * workers + w) as u64 ^ 0x5ca1_ab1e;
                    let ep = collect_one(
                        &self.graded_env,
                        &self.nets,
                        &self.obs_norm,
                        self.val_norm.mean(),
                        self.val_norm.std(),
                        self.splitter.seed(Domain::Env, idx),
                        self.splitter.seed(Domain::Policy, idx),
                    )?;
                    batch.episodes.push(ep);
                }
            }
        }
        Ok(batch)
    }

    /// Sequential agent updates against the shared running factor.
    fn update_actors_sequentially(
        &mut self,
        batch: &RolloutBatch,
        mut m: Vec<f64>,
    ) -> Result<(), TrainError> {
        let n_agents = self.num_agents();
        // Random agent order, re-derived per round.
        let mut order: Vec<usize> = (0..n_agents).collect();
        let mut perm_rng = self.splitter.stream(Domain::Trainer, self.round as u64);
        for i in (1..order.len()).rev() {
            order.swap(i, perm_rng.gen_range(0..=i));
        }

        for &agent in &order {
            let policy = self.nets.actors[agent];
            let inputs: Vec<Vec<f64>> = batch
                .episodes
                .iter()
                .flat_map(|e| {
                    e.norm_cores.iter().map(move |c| agent_input(c, agent, n_agents))
                })
                .collect();
            let actions: Vec<&[f64]> = batch
                .episodes
                .iter()
                .flat_map(|e| e.actions.iter().map(move |a| a[agent].as_slice()))
                .collect();
            let old_logps: Vec<f64> = batch
                .episodes
                .iter()
                .flat_map(|e| e.logps.iter().map(move |l| l[agent]))
                .collect();

            let params = &mut self.nets.actor_params[agent];
            for _ in 0..self.cfg.epochs {
                let mut grads = vec![0.0; params.len()];
                let surrogate = surrogate_and_grad(
                    &policy,
                    params,
                    &inputs,
                    &actions,
                    &old_logps,
                    &m,
                    self.cfg.clip_eps,
                    self.cfg.ratio_clamp,
                    Some(&mut grads),
                );
                if !surrogate.is_finite() {
                    return Err(TrainError::Diverged("actor surrogate"));
                }
                policy.entropy_grad(self.cfg.entropy_coef, &mut grads);
                // Ascent on the objective = descent on its negation.
                grads.iter_mut().for_each(|g| *g = -*g);
                clip_grad_norm(&mut grads, self.cfg.grad_clip);
                self.actor_opts[agent].step(params, &grads);
                policy.clamp_log_std(params);
            }
            update_m_factors(
                &policy,
                params,
                &inputs,
                &actions,
                &old_logps,
                &mut m,
                self.cfg.ratio_clamp,
            );
        }
        Ok(())
    }

    /// Critic regression on the (normalized) GAE returns.
    fn update_critic(&mut self, batch: &RolloutBatch, returns: &[f64]) -> Result<(), TrainError> {
        self.val_norm.update(returns);
        let targets: Vec<f64> = returns.iter().map(|&r| self.val_norm.normalize(r)).collect();
        let inputs: Vec<&[f64]> = batch
            .episodes
            .iter()
            .flat_map(|e| e.norm_states.iter().map(|s| s.as_slice()))
            .collect();
        let (_, after) = regress_critic(
            &self.nets.critic,
            &mut self.nets.critic_params,
            &mut self.critic_opt,
            &inputs,
            &targets,
            self.cfg.epochs,
        );
        if !after.is_finite() {
            return Err(TrainError::Diverged("critic loss"));
        }
        Ok(())
    }

    // ── Evaluation ───────────────────────────────────────────────────

    /// One deterministic episode under the trained policy: mean actions,
    /// frozen normalizer.  Returns per-slot diagnostics and rewards.
    pub fn eval_episode(&self, eval_index: u64) -> Result<EvalTrace, TrainError> {
        let mut frozen = self.obs_norm.clone();
        frozen.set_frozen(true);
        let mut env = IsacEnv::new(&self.graded_env, self.splitter.seed(Domain::Eval, eval_index))?;
        let n_agents = self.num_agents();
        let mut obs = env.observation();
        let mut infos = Vec::with_capacity(env.horizon());
        let mut rewards = Vec::with_capacity(env.horizon());
        for _ in 0..env.horizon() {
            let core_n = frozen.normalize(&obs.core);
            let action = joint_action_from(
                &self.nets,
                n_agents,
                |policy, params, input| policy.mean_std(params, input).0,
                &core_n,
            );
            let out = env.step(&action)?;
            rewards.push(out.reward.total);
            infos.push(out.info);
            obs = out.obs;
        }
        Ok(EvalTrace { infos, rewards, episode_return: env.episode_return() })
    }

    // ── Checkpointing ────────────────────────────────────────────────

    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<(), TrainError> {
        let mut blocks = vec![Block::vector(
            "meta",
            vec![
                1.0,
                f64::from_bits(self.splitter.master()),
                self.round as f64,
                self.curriculum.level as f64,
                self.curriculum.transitions.len() as f64,
            ],
        )];
        blocks.push(Block::vector(
            "curriculum/transitions",
            self.curriculum.transitions.iter().map(|&r| r as f64).collect(),
        ));
        for (i, p) in self.nets.actor_params.iter().enumerate() {
            blocks.push(Block::vector(&format!("actor{i}/params"), p.clone()));
            blocks.push(Block::vector(&format!("actor{i}/adam"), self.actor_opts[i].to_flat()));
        }
        blocks.push(Block::vector("critic/params", self.nets.critic_params.clone()));
        blocks.push(Block::vector("critic/adam", self.critic_opt.to_flat()));
        blocks.push(Block::vector("obs_norm", self.obs_norm.to_flat()));
        blocks.push(Block::vector("val_norm", self.val_norm.to_flat()));
        write_checkpoint(path, &blocks)?;
        Ok(())
    }

    /// Restores a trainer saved by [`Trainer::save_checkpoint`].  The
    /// configs must match the saved shapes.
    pub fn load_checkpoint(
        env: &EnvConfig,
        cfg: &TrainerConfig,
        path: &std::path::Path,
    ) -> Result<Self, TrainError> {
        let blocks = read_checkpoint(path)?;
        let get = |name: &str| -> Result<&Block, TrainError> {
            blocks
                .iter()
                .find(|b| b.name == name)
                .ok_or_else(|| TrainError::BadCheckpoint(format!("missing block `{name}`")))
        };
        let meta = get("meta")?;
        if meta.data.len() != 5 || meta.data[0] != 1.0 {
            return Err(TrainError::BadCheckpoint("unsupported meta version".into()));
        }
        let master_seed = meta.data[1].to_bits();
        let mut tr = Trainer::new(env, cfg, master_seed)?;
        tr.round = meta.data[2] as usize;
        tr.curriculum.level = meta.data[3] as usize;
        tr.curriculum.transitions =
            get("curriculum/transitions")?.data.iter().map(|&x| x as usize).collect();
        tr.graded_env = tr.base_env.clone();
        tr.graded_env.apply_grading(&tr.curriculum.grading());
        for i in 0..tr.nets.actor_params.len() {
            let p = get(&format!("actor{i}/params"))?;
            if p.data.len() != tr.nets.actor_params[i].len() {
                return Err(TrainError::BadCheckpoint(format!("actor{i} size mismatch")));
            }
            tr.nets.actor_params[i] = p.data.clone();
            tr.actor_opts[i] =
                Adam::from_flat(p.data.len(), cfg.lr, &get(&format!("actor{i}/adam"))?.data)
                    .ok_or_else(|| TrainError::BadCheckpoint(format!("actor{i} adam")))?;
        }
        let cp = get("critic/params")?;
        if cp.data.len() != tr.nets.critic_params.len() {
            return Err(TrainError::BadCheckpoint("critic size mismatch".into()));
        }
        tr.nets.critic_params = cp.data.clone();
        tr.critic_opt = Adam::from_flat(cp.data.len(), cfg.lr, &get("critic/adam")?.data)
            .ok_or_else(|| TrainError::BadCheckpoint("critic adam".into()))?;
        tr.obs_norm = ObsNormalizer::from_flat(&get("obs_norm")?.data)
            .ok_or_else(|| TrainError::BadCheckpoint("obs_norm".into()))?;
        tr.val_norm = ValueNormalizer::from_flat(&get("val_norm")?.data)
            .ok_or_else(|| TrainError::BadCheckpoint("val_norm".into()))?;
        Ok(tr)
    }
}

/// Per-slot record of a deterministic evaluation episode.
#[derive(Debug, Clone)]
pub struct EvalTrace {
    pub infos: Vec<StepInfo>,
    pub rewards: Vec<f64>,
    pub episode_return: f64,
}

/// Critic regression: `epochs` full-batch steps minimizing the mean squared
/// error; returns `(loss before, loss after)`.
pub fn regress_critic(
    spec: &MlpSpec,
    params: &mut Vec<f64>,
    opt: &mut Adam,
    inputs: &[&[f64]],
    targets: &[f64],
    epochs: usize,
) -> (f64, f64) {
    let count = inputs.len() as f64;
    let loss_of = |p: &[f64]| -> f64 {
        inputs
            .iter()
            .zip(targets)
            .map(|(x, &t)| {
                let (out, _) = spec.forward(p, x);
                (out[0] - t) * (out[0] - t)
            })
            .sum::<f64>()
            / count
    };
    let before = loss_of(params);
    for _ in 0..epochs {
        let mut grads = vec![0.0; params.len()];
        for (x, &t) in inputs.iter().zip(targets) {
            let (out, cache) = spec.forward(params, x);
            spec.backward(params, &cache, &[2.0 * (out[0] - t) / count], &mut grads);
        }
        opt.step(params, &grads);
    }
    (before, loss_of(params))
}

/// Builds a joint env action from per-agent policy outputs (the last agent
/// steers the beams, the others one UAV each).
fn joint_action_from(
    nets: &Nets,
    n_agents: usize,
    act: impl Fn(&GaussianPolicy, &[f64], &[f64]) -> Vec<f64>,
    core_n: &[f64],
) -> JointAction {
    let mut per_agent = Vec::with_capacity(n_agents);
    for a in 0..n_agents {
        let input = agent_input(core_n, a, n_agents);
        per_agent.push(act(&nets.actors[a], &nets.actor_params[a], &input));
    }
    JointAction {
        uav_deltas: per_agent[..n_agents - 1]
            .iter()
            .map(|v| nalgebra::Vector3::new(v[0], v[1], v[2]))
            .collect(),
        bs_beams: per_agent[n_agents - 1].clone(),
    }
}

/// One worker's full-episode rollout.
fn collect_one(
    env_cfg: &EnvConfig,
    nets: &Nets,
    obs_norm: &ObsNormalizer,
    v_mean: f64,
    v_std: f64,
    env_seed: u64,
    policy_seed: u64,
) -> Result<EpisodeRollout, TrainError> {
    let mut env = IsacEnv::new(env_cfg, env_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(policy_seed);
    let n_agents = env.num_agents();
    let n_uavs = env_cfg.num_uavs;
    let mut obs = env.observation();
    let mut ep = EpisodeRollout::default();
    for _ in 0..env.horizon() {
        let core_n = obs_norm.normalize(&obs.core);
        let state_n = obs_norm.normalize(&obs.state);
        let (v_out, _) = nets.critic.forward(&nets.critic_params, &state_n);
        let value = v_out[0] * v_std + v_mean;

        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_agents);
        let mut logps = Vec::with_capacity(n_agents);
        for a in 0..n_agents {
            let input = agent_input(&core_n, a, n_agents);
            let (act, logp) = nets.actors[a].sample(&nets.actor_params[a], &input, &mut rng);
            acts.push(act);
            logps.push(logp);
        }
        let action = JointAction {
            uav_deltas: (0..n_uavs)
                .map(|i| nalgebra::Vector3::new(acts[i][0], acts[i][1], acts[i][2]))
                .collect(),
            bs_beams: acts[n_agents - 1].clone(),
        };
        let out = env.step(&action)?;

        ep.raw_states.push(obs.state.clone());
        ep.norm_cores.push(core_n);
        ep.norm_states.push(state_n);
        ep.actions.push(acts);
        ep.logps.push(logps);
        ep.rewards.push(out.reward.total);
        ep.values.push(value);
        ep.rho_sum += out.info.rho;
        ep.rho_bs_sum += out.info.rho_bs_only;
        ep.violation_count += out.reward.comm.iter().filter(|&&s| s < 0.0).count();
        for ax in 0..3 {
            let e = out.info.target_estimate[ax] - out.info.target_truth[ax];
            ep.sq_err[ax] += e * e;
        }
        obs = out.obs;
    }
    ep.episode_return = env.episode_return();
    Ok(ep)
}

// ─── Tests ─────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn tiny_env() -> EnvConfig {
        EnvConfig { horizon: 5, ..EnvConfig::default() }
    }

    fn tiny_trainer_cfg() -> TrainerConfig {
        TrainerConfig {
            workers: 2,
            hidden: 8,
            epochs: 2,
            episodes: 3,
            ..TrainerConfig::default()
        }
    }

    // ── GAE ──────────────────────────────────────────────────────────

    #[test]
    fn gae_lambda_zero_is_one_step_td() {
        let rewards = [1.0, -2.0, 0.5];
        let values = [0.3, 0.1, -0.4];
        let (adv, ret) = compute_gae(&rewards, &values, 0.9, 0.0);
        for t in 0..3 {
            let v_next = if t + 1 < 3 { values[t + 1] } else { 0.0 };
            assert_relative_eq!(adv[t], rewards[t] + 0.9 * v_next - values[t], epsilon = 1e-12);
            assert_relative_eq!(ret[t], adv[t] + values[t], epsilon = 1e-12);
        }
    }

    #[test]
    fn gae_monte_carlo_limit_is_reward_to_go() {
        let rewards = [1.0, 2.0, 3.0, 4.0];
        let values = [0.0; 4];
        let (adv, _) = compute_gae(&rewards, &values, 1.0, 1.0);
        assert_relative_eq!(adv[0], 10.0, epsilon = 1e-12);
        assert_relative_eq!(adv[1], 9.0, epsilon = 1e-12);
        assert_relative_eq!(adv[2], 7.0, epsilon = 1e-12);
        assert_relative_eq!(adv[3], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn gae_matches_hand_recursion() {
        // γ = 0.9, λ = 0.5; worked by hand from the tail:
        // δ = [r + γV' − V] = [-0.5+0.9·0.2−0.1, 1+0.9·(-0.3)−0.2, 0.3−(−0.3),
        //      2−0.5, −1−0.0] with V = [0.1, 0.2, −0.3, 0.5, 0.0].
        let rewards = [-0.5, 1.0, 0.3, 2.0, -1.0];
        let values = [0.1, 0.2, -0.3, 0.5, 0.0];
        let (adv, _) = compute_gae(&rewards, &values, 0.9, 0.5);
        let delta = [
            -0.5 + 0.9 * 0.2 - 0.1,
            1.0 + 0.9 * (-0.3) - 0.2,
            0.3 + 0.9 * 0.5 - (-0.3),
            2.0 + 0.9 * 0.0 - 0.5,
            -1.0 - 0.0,
        ];
        let mut expect = [0.0; 5];
        let mut acc = 0.0;
        for t in (0..5).rev() {
            acc = delta[t] + 0.45 * acc;
            expect[t] = acc;
        }
        for t in 0..5 {
            assert_relative_eq!(adv[t], expect[t], epsilon = 1e-12);
        }
    }

    #[test]
    fn advantage_normalization_preserves_signs_and_ratios() {
        let mut adv = vec![3.0, -1.5, 0.75, -6.0];
        let orig = adv.clone();
        normalize_advantages(&mut adv);
        for (a, o) in adv.iter().zip(&orig) {
            assert_eq!(a.signum(), o.signum());
        }
        // Scale-only: pairwise ratios are unchanged.
        assert_relative_eq!(adv[0] / adv[1], orig[0] / orig[1], epsilon = 1e-12);
        assert_relative_eq!(adv[3] / adv[2], orig[3] / orig[2], epsilon = 1e-12);
    }

    // ── Surrogate ────────────────────────────────────────────────────

    fn toy_policy_batch() -> (GaussianPolicy, Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let policy = GaussianPolicy::new(3, 6, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let params = policy.init_params(&mut rng, 0.5);
        let inputs: Vec<Vec<f64>> =
            (0..6).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let actions: Vec<Vec<f64>> =
            (0..6).map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        (policy, params, inputs, actions)
    }

    #[test]
    fn surrogate_on_policy_identity() {
        // Old log-probs computed from the same parameters ⇒ ratio ≡ 1 and
        // the surrogate is exactly the mean factor; gradient matches the
        // plain policy-gradient direction (no clipping active).
        let (policy, params, inputs, actions) = toy_policy_batch();
        let action_refs: Vec<&[f64]> = actions.iter().map(|a| a.as_slice()).collect();
        let old: Vec<f64> = inputs
            .iter()
            .zip(&action_refs)
            .map(|(x, a)| policy.log_prob(&params, x, a))
            .collect();
        let m = vec![2.0, -1.0, 0.5, 3.0, -0.25, 1.5];
        let surrogate = surrogate_and_grad(
            &policy, &params, &inputs, &action_refs, &old, &m, 0.2, 1e4, None,
        );
        let mean_m = m.iter().sum::<f64>() / m.len() as f64;
        assert_relative_eq!(surrogate, mean_m, epsilon = 1e-12);
    }

    #[test]
    fn surrogate_clips_both_sides() {
        // Doctored old log-probs put each ratio exactly at 1.5 / 0.5; the
        // clip endpoints 1.2 / 0.8 decide the objective and its gradient.
        let (policy, params, inputs, actions) = toy_policy_batch();
        let action_refs: Vec<&[f64]> = actions.iter().map(|a| a.as_slice()).collect();
        let logp0 = policy.log_prob(&params, &inputs[0], action_refs[0]);

        // Positive advantage, ratio 1.5 → clipped to 1.2, zero gradient.
        let old = vec![logp0 - 1.5f64.ln()];
        let mut grads = vec![0.0; params.len()];
        let s = surrogate_and_grad(
            &policy,
            &params,
            &inputs[..1],
            &action_refs[..1],
            &old,
            &[2.0],
            0.2,
            1e4,
            Some(&mut grads),
        );
        assert_relative_eq!(s, 1.2 * 2.0, epsilon = 1e-9);
        assert!(grads.iter().all(|&g| g == 0.0), "clipped-out sample must not leak gradient");

        // Negative advantage, ratio 0.5 → clipped branch 0.8·m is the min,
        // still zero gradient.
        let old = vec![logp0 - 0.5f64.ln()];
        let mut grads = vec![0.0; params.len()];
        let s = surrogate_and_grad(
            &policy,
            &params,
            &inputs[..1],
            &action_refs[..1],
            &old,
            &[-2.0],
            0.2,
            1e4,
            Some(&mut grads),
        );
        assert_relative_eq!(s, 0.8 * -2.0, epsilon = 1e-9);
        assert!(grads.iter().all(|&g| g == 0.0));

        // Positive advantage, ratio 0.5 → unclipped branch active, gradient
        // flows.
        let old = vec![logp0 - 0.5f64.ln()];
        let mut grads = vec![0.0; params.len()];
        let s = surrogate_and_grad(
            &policy,
            &params,
            &inputs[..1],
            &action_refs[..1],
            &old,
            &[2.0],
            0.2,
            1e4,
            Some(&mut grads),
        );
        assert_relative_eq!(s, 0.5 * 2.0, epsilon = 1e-9);
        assert!(grads.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        // On a smooth configuration (ratios inside the clip band) the
        // analytic batch gradient must match central differences.
        let (policy, params, inputs, actions) = toy_policy_batch();
        let action_refs: Vec<&[f64]> = actions.iter().map(|a| a.as_slice()).collect();
        let old: Vec<f64> = inputs
            .iter()
            .zip(&action_refs)
            .map(|(x, a)| policy.log_prob(&params, x, a) - 0.02)
            .collect();
        let m = vec![1.0, -2.0, 0.5, 1.5, -0.75, 2.0];
        let mut grads = vec![0.0; params.len()];
        surrogate_and_grad(
            &policy, &params, &inputs, &action_refs, &old, &m, 0.2, 1e4, Some(&mut grads),
        );
        let f = |p: &[f64]| {
            surrogate_and_grad(&policy, p, &inputs, &action_refs, &old, &m, 0.2, 1e4, None)
        };
        let h = 1e-6;
        for i in (0..params.len()).step_by(7) {
            let mut pp = params.clone();
            let mut pm = params.clone();
            pp[i] += h;
            pm[i] -= h;
            let fd = (f(&pp) - f(&pm)) / (2.0 * h);
            assert!(
                (grads[i] - fd).abs() / fd.abs().max(1e-4) < 1e-4,
                "param {i}: analytic {} vs fd {fd}",
                grads[i]
            );
        }
    }

    #[test]
    fn m_factor_multiplies_by_final_ratio() {
        // Hand-set ratio of 2 on every sample: the factor table doubles.
        let (policy, params, inputs, actions) = toy_policy_batch();
        let action_refs: Vec<&[f64]> = actions.iter().map(|a| a.as_slice()).collect();
        let old: Vec<f64> = inputs
            .iter()
            .zip(&action_refs)
            .map(|(x, a)| policy.log_prob(&params, x, a) - 2.0f64.ln())
            .collect();
        let mut m = vec![1.0, -0.5, 2.0, 0.25, -3.0, 0.1];
        let orig = m.clone();
        update_m_factors(&policy, &params, &inputs, &action_refs, &old, &mut m, 1e4);
        for (new, old_m) in m.iter().zip(&orig) {
            assert_relative_eq!(new, &(2.0 * old_m), epsilon = 1e-9);
        }
    }

    #[test]
    fn untouched_policy_keeps_m_unchanged() {
        let (policy, params, inputs, actions) = toy_policy_batch();
        let action_refs: Vec<&[f64]> = actions.iter().map(|a| a.as_slice()).collect();
        let old: Vec<f64> = inputs
            .iter()
            .zip(&action_refs)
            .map(|(x, a)| policy.log_prob(&params, x, a))
            .collect();
        let mut m = vec![1.0, -0.5, 2.0, 0.25, -3.0, 0.1];
        let orig = m.clone();
        update_m_factors(&policy, &params, &inputs, &action_refs, &old, &mut m, 1e4);
        for (new, old_m) in m.iter().zip(&orig) {
            assert_relative_eq!(new, old_m, epsilon = 1e-12);
        }
    }

    // ── Critic regression ────────────────────────────────────────────

    #[test]
    fn critic_fixed_point_has_zero_loss_and_keeps_params() {
        let spec = MlpSpec { input: 2, hidden: 4, hidden_layers: 1, output: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = spec.init_params(&mut rng, 1.0);
        let inputs_owned: Vec<Vec<f64>> =
            (0..5).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let inputs: Vec<&[f64]> = inputs_owned.iter().map(|x| x.as_slice()).collect();
        let targets: Vec<f64> =
            inputs.iter().map(|x| spec.forward(&params, x).0[0]).collect();
        let before = params.clone();
        let mut opt = Adam::new(params.len(), 1e-3);
        let (l0, l1) = regress_critic(&spec, &mut params, &mut opt, &inputs, &targets, 3);
        assert_abs_diff_eq!(l0, 0.0, epsilon = 1e-20);
        assert_abs_diff_eq!(l1, 0.0, epsilon = 1e-20);
        assert_eq!(params, before, "zero gradient must not move parameters");
    }

    #[test]
    fn critic_regresses_to_constant() {
        let spec = MlpSpec { input: 2, hidden: 8, hidden_layers: 2, output: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = spec.init_params(&mut rng, 1.0);
        let inputs_owned: Vec<Vec<f64>> =
            (0..8).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let inputs: Vec<&[f64]> = inputs_owned.iter().map(|x| x.as_slice()).collect();
        let targets = vec![0.7; 8];
        let mut opt = Adam::new(params.len(), 1e-2);
        let (_, after) = regress_critic(&spec, &mut params, &mut opt, &inputs, &targets, 2000);
        assert!(after < 1e-4, "loss after regression: {after}");
        for x in &inputs {
            assert_abs_diff_eq!(spec.forward(&params, x).0[0], 0.7, epsilon = 1e-2);
        }
    }

    #[test]
    fn critic_loss_is_mean_not_sum() {
        let spec = MlpSpec { input: 1, hidden: 4, hidden_layers: 1, output: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = spec.init_params(&mut rng, 1.0);
        let a = vec![0.5];
        let b = vec![-0.25];
        let single: Vec<&[f64]> = vec![&a, &b];
        let doubled: Vec<&[f64]> = vec![&a, &b, &a, &b];
        let loss = |inputs: &[&[f64]], targets: &[f64]| {
            let mut p = params.clone();
            let mut opt = Adam::new(p.len(), 0.0); // lr 0: measure only
            regress_critic(&spec, &mut p, &mut opt, inputs, targets, 1).0
        };
        let l1 = loss(&single, &[1.0, -1.0]);
        let l2 = loss(&doubled, &[1.0, -1.0, 1.0, -1.0]);
        assert_relative_eq!(l1, l2, epsilon = 1e-12);
    }

    // ── Curriculum ───────────────────────────────────────────────────

    fn curriculum_fixture() -> CurriculumState {
        CurriculumState::new(
            true,
            2,
            GradingSet::reduced_default(),
            EnvConfig::default().grading_endpoint(),
            -800.0,
        )
    }

    #[test]
    fn curriculum_starts_reduced_and_ends_exact() {
        let mut c = curriculum_fixture();
        assert_eq!(c.level, 1);
        assert_eq!(c.grading(), GradingSet::reduced_default());
        assert!(c.advance_if(-700.0, 10));
        assert_eq!(c.level, 2);
        assert_eq!(c.grading(), EnvConfig::default().grading_endpoint());
    }

    #[test]
    fn curriculum_ignores_subthreshold_rewards() {
        let mut c = curriculum_fixture();
        assert!(!c.advance_if(-900.0, 0));
        assert_eq!(c.level, 1);
        assert!(c.transitions.is_empty());
    }

    #[test]
    fn curriculum_fires_exactly_once() {
        let mut c = curriculum_fixture();
        let rewards = [-1000.0, -850.0, -700.0, -500.0, -100.0];
        for (round, &r) in rewards.iter().enumerate() {
            c.advance_if(r, round);
        }
        assert_eq!(c.transitions, vec![2], "only the first crossing fires");
        assert_eq!(c.level, 2);
    }

    #[test]
    fn disabled_curriculum_sits_at_final_level() {
        let c = CurriculumState::new(
            false,
            2,
            GradingSet::reduced_default(),
            EnvConfig::default().grading_endpoint(),
            -800.0,
        );
        assert_eq!(c.level, 2);
        assert_eq!(c.grading(), EnvConfig::default().grading_endpoint());
    }

    // ── Collection and training ──────────────────────────────────────

    #[test]
    fn collection_has_matching_chronology() {
        let tr = Trainer::new(&tiny_env(), &tiny_trainer_cfg(), 3).unwrap();
        let batch = tr.collect_rollouts().unwrap();
        assert_eq!(batch.episodes.len(), 2);
        for ep in &batch.episodes {
            assert_eq!(ep.rewards.len(), 5);
            assert_eq!(ep.actions.len(), 5);
            assert_eq!(ep.logps.len(), 5);
            assert_eq!(ep.values.len(), 5);
            assert_eq!(ep.norm_cores.len(), 5);
            // Batch reward bookkeeping equals the env-side episode sum.
            assert_relative_eq!(
                ep.rewards.iter().sum::<f64>(),
                ep.episode_return,
                epsilon = 1e-9
            );
            for slot in &ep.actions {
                assert_eq!(slot.len(), 3, "two UAV agents plus the beam agent");
                assert_eq!(slot[0].len(), 3);
                assert_eq!(slot[2].len(), tr.nets.actors[2].action_dim());
            }
        }
    }

    #[test]
    fn collection_is_deterministic() {
        let tr = Trainer::new(&tiny_env(), &tiny_trainer_cfg(), 11).unwrap();
        let a = tr.collect_rollouts().unwrap();
        let b = tr.collect_rollouts().unwrap();
        for (x, y) in a.episodes.iter().zip(&b.episodes) {
            assert_eq!(x.rewards, y.rewards);
            assert_eq!(x.logps, y.logps);
        }
    }

    #[test]
    fn single_round_emits_finite_metrics() {
        let mut tr = Trainer::new(
            &tiny_env(),
            &TrainerConfig { episodes: 1, ..tiny_trainer_cfg() },
            5,
        )
        .unwrap();
        let rows = tr.train(|_| {}).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!(r.episode, 0);
        assert!(r.mean_reward.is_finite() && r.mean_reward <= 0.0);
        assert!(r.mean_rho.is_finite() && r.mean_rho > 0.0);
        assert!((0.0..=1.0).contains(&r.violation_rate));
        assert!(r.rmse_x.is_finite() && r.rmse_y.is_finite() && r.rmse_z.is_finite());
    }

    #[test]
    fn training_is_bit_reproducible() {
        let run = |seed: u64| -> Vec<MetricsRow> {
            let mut tr = Trainer::new(&tiny_env(), &tiny_trainer_cfg(), seed).unwrap();
            tr.train(|_| {}).unwrap()
        };
        let (a, b) = (run(9), run(9));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mean_reward.to_bits(), y.mean_reward.to_bits());
            assert_eq!(x.mean_rho.to_bits(), y.mean_rho.to_bits());
            assert_eq!(x.violation_rate.to_bits(), y.violation_rate.to_bits());
        }
        assert_ne!(
            run(9)[2].mean_reward.to_bits(),
            run(10)[2].mean_reward.to_bits(),
            "different seeds should differ"
        );
    }

    #[test]
    fn checkpoint_resume_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("resume.ckpt");
        let cfg = tiny_trainer_cfg();

        let mut straight = Trainer::new(&tiny_env(), &cfg, 21).unwrap();
        let rows = straight.train(|_| {}).unwrap();

        let mut partial = Trainer::new(&tiny_env(), &cfg, 21).unwrap();
        partial.train_round().unwrap();
        partial.train_round().unwrap();
        partial.save_checkpoint(&path).unwrap();
        let mut resumed = Trainer::load_checkpoint(&tiny_env(), &cfg, &path).unwrap();
        assert_eq!(resumed.round(), 2);
        let last = resumed.train_round().unwrap();

        assert_eq!(last.mean_reward.to_bits(), rows[2].mean_reward.to_bits());
        assert_eq!(last.mean_rho.to_bits(), rows[2].mean_rho.to_bits());
        for (p, q) in resumed.nets.actor_params.iter().zip(&straight.nets.actor_params) {
            assert!(p.iter().zip(q).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn eval_episode_is_deterministic_and_full_length() {
        let mut tr = Trainer::new(
            &tiny_env(),
            &TrainerConfig { episodes: 1, ..tiny_trainer_cfg() },
            2,
        )
        .unwrap();
        tr.train(|_| {}).unwrap();
        let a = tr.eval_episode(0).unwrap();
        let b = tr.eval_episode(0).unwrap();
        assert_eq!(a.infos.len(), 5);
        assert_eq!(a.episode_return.to_bits(), b.episode_return.to_bits());
        for (x, y) in a.rewards.iter().zip(&b.rewards) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
