//! The multi-agent decision process tying everything together.
//!
//! Each slot: decode the BS beam action, project UAV waypoints onto the
//! speed/separation constraint set, advance the true target, realise
//! channels and SINRs, turn sensing SINRs into estimation bounds, fuse them
//! into the measurement covariance Ψ, sample a spherical measurement, run
//! the EKF and the information recursion, and score the slot with the
//! sensing-plus-communication reward.  A second, always-on information
//! recursion fed by the BS-only Ψ rides along so the value of fusion is
//! observable inside a single episode.
//!
//! All per-slot randomness can be pre-drawn as a [`SlotRandomness`] and
//! replayed, which lets search-based policies score many candidate actions
//! against the *same* realisation the environment will actually step with.

use nalgebra::{DMatrix, Matrix6, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::beam::{rescale_to_power, BeamDecoder, BeamError};
use crate::channel::{
    compute_sinrs, link_gains, ChannelError, LinkGains, ScatterDraws, Scene, SinrReport,
    WorldState,
};
use crate::config::{linear_to_db, EnvConfig, GradingSet};
use crate::fusion::{
    ci_fuse, crb_from_sinr_capped, measurement_covariance, FusionError, FusionWeights,
};
use crate::tracking::{
    ekf_step, fim_update, h_measure, propagate_truth_with, wrap_angle, FisherState,
    KinematicState, MotionModel, SphericalMeasurement, TrackingError,
};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("channel: {0}")]
    Channel(#[from] ChannelError),
    #[error("tracking: {0}")]
    Tracking(#[from] TrackingError),
    #[error("fusion: {0}")]
    Fusion(#[from] FusionError),
    #[error("beam action: {0}")]
    Beam(#[from] BeamError),
    #[error("episode already finished at slot {0}")]
    EpisodeOver(usize),
    #[error("bad action shape: {0}")]
    BadAction(String),
    #[error("non-finite value at stage `{0}`")]
    NonFinite(&'static str),
}

// ─── Actions, observations, rewards ────────────────────────────────────────

/// Raw joint action before any feasibility mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAction {
    /// Per-UAV displacement requests, metres.
    pub uav_deltas: Vec<Vector3<f64>>,
    /// Raw BS beam vector in the decoder's input layout.
    pub bs_beams: Vec<f64>,
}

/// Shared observation core plus the critic state for one slot.
///
/// Layout of both vectors: `N` downlink SINRs (dB), `3N` UAV coordinates
/// (scaled 1/100), the sensing cost ρ, then six target-state entries
/// (positions scaled 1/100, velocities raw).  `core` carries the tracker
/// estimate of the target, `state` the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct JointObservation {
    pub core: Vec<f64>,
    pub state: Vec<f64>,
}

/// Dimension of the shared observation core for `n` UAVs.
pub fn core_dim(num_uavs: usize) -> usize {
    4 * num_uavs + 7
}

/// Appends a one-hot agent id after the (possibly normalized) core.
pub fn agent_input(core: &[f64], agent: usize, num_agents: usize) -> Vec<f64> {
    debug_assert!(agent < num_agents);
    let mut v = Vec::with_capacity(core.len() + num_agents);
    v.extend_from_slice(core);
    v.extend((0..num_agents).map(|i| if i == agent { 1.0 } else { 0.0 }));
    v
}

/// Reward components of one slot; both parts are nonpositive.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardBreakdown {
    /// Sensing part: `-ρ` after the configured cap/log conditioning.
    pub sense: f64,
    /// Per-UAV SINR shortfall in dB, `min(0, SINR_dB - γ_min_dB)`.
    pub comm: Vec<f64>,
    /// `λ_s·sense + λ_c·Σ comm`.
    pub total: f64,
}

impl RewardBreakdown {
    /// `rho_cap` bounds the sensing penalty per slot and `rho_log` compresses
    /// it to `ln(1 + ρ)`. When the tracker diverges the bound trace runs away
    /// by orders of magnitude; an unbounded linear penalty lets those slots
    /// drown every other learning signal in the advantage estimates, while a
    /// hard cap alone flattens the gradient over most of the range. Both
    /// apply to the reward only — the reported metric stays the raw trace.
    pub fn compose(
        rho: f64,
        shortfalls_db: Vec<f64>,
        lambda_s: f64,
        lambda_c: f64,
        rho_cap: f64,
        rho_log: bool,
    ) -> Self {
        debug_assert!(shortfalls_db.iter().all(|&s| s <= 0.0));
        let bounded = rho.min(rho_cap);
        let sense = -if rho_log { bounded.ln_1p() } else { bounded };
        let total = lambda_s * sense + lambda_c * shortfalls_db.iter().sum::<f64>();
        Self { sense, comm: shortfalls_db, total }
    }
}

/// Per-slot diagnostics the harness records.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// Post-update trace of the fused-Ψ recursion.
    pub rho: f64,
    /// Same trace under the BS-only Ψ (the no-fusion counterfactual).
    pub rho_bs_only: f64,
    pub sinr_comm_db: Vec<f64>,
    pub sinr_sense_bs: f64,
    pub sinr_sense_uav: Vec<f64>,
    pub uav_positions: Vec<Vector3<f64>>,
    pub target_truth: [f64; 6],
    pub target_estimate: [f64; 6],
    /// Waypoint resolution failed to converge and kept last slot's
    /// positions.
    pub movement_reverted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: JointObservation,
    pub reward: RewardBreakdown,
    pub done: bool,
    pub info: StepInfo,
}

/// Every random draw one slot consumes, pre-drawn so a slot can be replayed
/// or re-evaluated under identical randomness.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRandomness {
    /// Seed of the sub-stream used inside beam decoding (rank-deficiency
    /// fallback) and coincident-UAV tie-breaks.
    pub decode_seed: u64,
    /// Standard normals coloured into process noise (two per axis).
    pub process_normals: [f64; 6],
    pub scatter: ScatterDraws,
    /// Standard normals scaled by √Ψ into measurement noise.
    pub measurement_normals: [f64; 4],
}

// ─── Constraint projections ────────────────────────────────────────────────

/// Projects a displacement request onto the speed ball `‖Δu‖ ≤ max_speed`.
/// Boundary projections shrink by 1 − 1e-12 so the constraint survives
/// floating-point rounding exactly.
pub fn project_waypoint(raw: &Vector3<f64>, max_speed: f64) -> Vector3<f64> {
    let n = raw.norm();
    if n > max_speed {
        raw * (max_speed / n) * (1.0 - 1e-12)
    } else {
        *raw
    }
}

fn all_separated(positions: &[Vector3<f64>], min_sep: f64) -> bool {
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            if (positions[i] - positions[j]).norm() <= min_sep {
                return false;
            }
        }
    }
    true
}

/// One symmetric push sweep over all violating pairs.
fn push_pairs_once(positions: &mut [Vector3<f64>], min_sep: f64, rng: &mut impl Rng) {
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let diff = positions[i] - positions[j];
            let dist = diff.norm();
            if dist > min_sep {
                continue;
            }
            let dir = if dist < 1e-9 {
                // Coincident pair: split along a random axis.
                let v = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                let n = v.norm();
                if n > 1e-12 {
                    v / n
                } else {
                    Vector3::x()
                }
            } else {
                diff / dist
            };
            let push = (min_sep - dist) / 2.0 + 1e-6;
            positions[i] += dir * push;
            positions[j] -= dir * push;
        }
    }
}

/// Iterative pairwise separation repair: symmetric pushes until every pair
/// is strictly beyond `min_sep`, at most 50 sweeps.  Returns whether the
/// final layout is feasible.
pub fn enforce_separation(
    positions: &mut [Vector3<f64>],
    min_sep: f64,
    rng: &mut impl Rng,
) -> bool {
    for _ in 0..50 {
        if all_separated(positions, min_sep) {
            return true;
        }
        push_pairs_once(positions, min_sep, rng);
    }
    all_separated(positions, min_sep)
}

/// Full waypoint resolution: speed projection, then alternating separation
/// pushes and speed re-clamps so both constraints hold simultaneously.
/// Non-convergence reverts every UAV to its previous position (which is
/// feasible by induction) and reports it.
fn resolve_movement(
    prev: &[Vector3<f64>],
    raw: &[Vector3<f64>],
    max_speed: f64,
    min_sep: f64,
    rng: &mut impl Rng,
) -> (Vec<Vector3<f64>>, bool) {
    let mut pos: Vec<Vector3<f64>> =
        prev.iter().zip(raw).map(|(p, r)| p + project_waypoint(r, max_speed)).collect();
    for _ in 0..50 {
        if all_separated(&pos, min_sep) {
            return (pos, false);
        }
        push_pairs_once(&mut pos, min_sep, rng);
        for (p, prev_p) in pos.iter_mut().zip(prev) {
            let d = *p - prev_p;
            let n = d.norm();
            if n > max_speed {
                *p = prev_p + d * (max_speed / n) * (1.0 - 1e-12);
            }
        }
    }
    if all_separated(&pos, min_sep) {
        return (pos, false);
    }
    log::warn!("waypoint resolution did not converge; keeping previous positions");
    (prev.to_vec(), true)
}

// ─── Environment ───────────────────────────────────────────────────────────

/// One self-contained episode simulator.  Cloning yields an independent
/// replica (used to score candidate actions without committing them).
#[derive(Debug, Clone)]
pub struct IsacEnv {
    cfg: EnvConfig,
    scene: Scene,
    decoder: BeamDecoder,
    model: MotionModel,
    weights: FusionWeights,
    weights_bs: FusionWeights,
    accel: Vector3<f64>,

    slot: usize,
    uavs: Vec<Vector3<f64>>,
    truth: KinematicState,
    fisher: FisherState,
    /// Information matrix of the BS-only counterfactual recursion.
    info_bs: Matrix6<f64>,
    rho_bs: f64,
    last_sinr_db: Vec<f64>,
    episode_return: f64,
    rng: ChaCha8Rng,
}

impl IsacEnv {
    /// Builds and resets the environment.  Fails on invalid configs.
    pub fn new(cfg: &EnvConfig, seed: u64) -> Result<Self, EnvError> {
        cfg.validate().map_err(|e| EnvError::BadAction(e.to_string()))?;
        let n = cfg.num_uavs;
        let weights =
            if cfg.fusion { FusionWeights::uniform(n) } else { FusionWeights::bs_only(n) };
        let mut env = Self {
            cfg: cfg.clone(),
            scene: cfg.scene(),
            decoder: cfg.beam_decoder(),
            model: cfg.motion_model(),
            weights,
            weights_bs: FusionWeights::bs_only(n),
            accel: Vector3::from(cfg.target_accel),
            slot: 0,
            uavs: Vec::new(),
            truth: cfg.initial_target(),
            fisher: FisherState::init(cfg.initial_target(), Matrix6::identity())
                .expect("identity covariance inverts"),
            info_bs: Matrix6::identity(),
            rho_bs: 0.0,
            last_sinr_db: vec![0.0; n],
            episode_return: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        env.reset(seed)?;
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn num_agents(&self) -> usize {
        self.cfg.num_uavs + 1
    }

    /// `(per-UAV displacement dim, BS raw beam dim)`.
    pub fn action_dims(&self) -> (usize, usize) {
        (3, self.decoder.action_dim())
    }

    pub fn core_dim(&self) -> usize {
        core_dim(self.cfg.num_uavs)
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    pub fn episode_return(&self) -> f64 {
        self.episode_return
    }

    /// Applies new graded scenario knobs (curriculum transition).
    pub fn set_grading(&mut self, g: &GradingSet) {
        self.cfg.apply_grading(g);
    }

    /// Starts a fresh episode on a new random stream.
    pub fn reset(&mut self, seed: u64) -> Result<JointObservation, EnvError> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.slot = 0;
        self.episode_return = 0.0;
        self.uavs = self.cfg.uav_initial_positions();
        self.truth = self.cfg.initial_target();

        let mut m0 = Matrix6::zeros();
        for axis in 0..3 {
            m0[(axis, axis)] = self.cfg.init_pos_var;
            m0[(axis + 3, axis + 3)] = self.cfg.init_vel_var;
        }
        // The tracker starts on the true state with a diffuse covariance.
        self.fisher = FisherState::init(self.truth.clone(), m0)?;
        self.info_bs = self.fisher.info;
        self.rho_bs = self.fisher.trace_pcrb;

        // Slot-0 SINR entries come from a neutral beam matrix: equal-power
        // standard-basis beams.
        let m = self.scene.array.num_elements();
        let w0 = rescale_to_power(
            DMatrix::zeros(m, self.num_agents()),
            self.cfg.power_budget,
        );
        let world = self.world();
        let scatter = ScatterDraws::sample(&self.scene.params, self.cfg.num_uavs, &mut self.rng);
        let gains = link_gains(&self.scene.params, &world, &scatter)?;
        let report = compute_sinrs(&self.scene, &world, &w0, &gains)?;
        self.last_sinr_db = report.comm.iter().map(|&s| floor_db(s)).collect();
        Ok(self.observation())
    }

    fn world(&self) -> WorldState {
        WorldState {
            bs: Vector3::from(self.cfg.bs_position),
            uavs: self.uavs.clone(),
            target: self.truth.position(),
        }
    }

    /// Observation built from the stored slot state.
    pub fn observation(&self) -> JointObservation {
        let core = self.compose_vector(&self.fisher.estimate.zeta);
        let state = self.compose_vector(&self.truth.zeta);
        JointObservation { core, state }
    }

    fn compose_vector(&self, target: &Vector6<f64>) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.core_dim());
        v.extend_from_slice(&self.last_sinr_db);
        for u in &self.uavs {
            v.extend([u.x / 100.0, u.y / 100.0, u.z / 100.0]);
        }
        // The bound trace spans several decades within one episode; feed it
        // through log1p so the normalizer sees a usable dynamic range.
        v.push(self.fisher.trace_pcrb.ln_1p());
        for axis in 0..3 {
            v.push(target[axis] / 100.0);
        }
        for axis in 3..6 {
            v.push(target[axis]);
        }
        v
    }

    /// Pre-draws every random quantity the next slot will consume.
    pub fn draw_slot_randomness(&mut self) -> SlotRandomness {
        let decode_seed = self.rng.gen::<u64>();
        let mut process_normals = [0.0; 6];
        for z in process_normals.iter_mut() {
            *z = self.rng.sample(StandardNormal);
        }
        let scatter = ScatterDraws::sample(&self.scene.params, self.cfg.num_uavs, &mut self.rng);
        let mut measurement_normals = [0.0; 4];
        for z in measurement_normals.iter_mut() {
            *z = self.rng.sample(StandardNormal);
        }
        SlotRandomness { decode_seed, process_normals, scatter, measurement_normals }
    }

    /// Advances one slot with fresh randomness.
    pub fn step(&mut self, action: &JointAction) -> Result<StepOutcome, EnvError> {
        let draw = self.draw_slot_randomness();
        self.step_with_draw(action, &draw)
    }

    /// Scores an action on a replica without committing anything.
    pub fn evaluate_candidate(
        &self,
        action: &JointAction,
        draw: &SlotRandomness,
    ) -> Result<f64, EnvError> {
        let mut replica = self.clone();
        Ok(replica.step_with_draw(action, draw)?.reward.total)
    }

    /// Advances one slot under the given randomness draw.
    pub fn step_with_draw(
        &mut self,
        action: &JointAction,
        draw: &SlotRandomness,
    ) -> Result<StepOutcome, EnvError> {
        if self.slot >= self.cfg.horizon {
            return Err(EnvError::EpisodeOver(self.slot));
        }
        let n = self.cfg.num_uavs;
        if action.uav_deltas.len() != n {
            return Err(EnvError::BadAction(format!(
                "expected {n} UAV displacement vectors, got {}",
                action.uav_deltas.len()
            )));
        }
        let mut aux_rng = ChaCha8Rng::seed_from_u64(draw.decode_seed);

        // 1. Beam decode (errors on wrong raw length).
        let w = self.decoder.decode(&action.bs_beams, &mut aux_rng)?;
        debug_assert!(
            (w.total_power() - self.cfg.power_budget).abs() <= 1e-9 * self.cfg.power_budget,
            "decoded beams violate the power budget"
        );

        // 2. Waypoint resolution under both flight constraints.
        let (new_uavs, movement_reverted) = resolve_movement(
            &self.uavs,
            &action.uav_deltas,
            self.cfg.max_speed,
            self.cfg.min_separation,
            &mut aux_rng,
        );
        #[cfg(debug_assertions)]
        {
            for (p, q) in new_uavs.iter().zip(&self.uavs) {
                debug_assert!((p - q).norm() <= self.cfg.max_speed, "speed constraint violated");
            }
            debug_assert!(
                all_separated(&new_uavs, self.cfg.min_separation),
                "separation constraint violated"
            );
        }

        // 3. True target motion (acceleration unknown to the tracker).
        let noise = self.model.process_noise_from_normals(&draw.process_normals);
        let new_truth = propagate_truth_with(&self.truth, &self.model, &self.accel, &noise);

        // 4. Channels and SINRs at the new geometry.
        let world = WorldState {
            bs: Vector3::from(self.cfg.bs_position),
            uavs: new_uavs.clone(),
            target: new_truth.position(),
        };
        let gains: LinkGains = link_gains(&self.scene.params, &world, &draw.scatter)?;
        let report: SinrReport = compute_sinrs(&self.scene, &world, &w, &gains)?;
        let finite = report.comm.iter().all(|s| s.is_finite())
            && report.sense_bs.is_finite()
            && report.sense_uav.iter().all(|s| s.is_finite());
        if !finite {
            return Err(EnvError::NonFinite("sinr"));
        }

        // 5. Sensing bounds → covariance intersection → Ψ (fused and
        // BS-only).
        let consts = self.cfg.crb_constants();
        let mut bounds = Vec::with_capacity(n + 1);
        bounds.push(crb_from_sinr_capped(
            report.sense_bs,
            &consts,
            self.cfg.crb_linear_sinr,
            self.cfg.crb_cap,
        ));
        for &s in &report.sense_uav {
            bounds.push(crb_from_sinr_capped(
                s,
                &consts,
                self.cfg.crb_linear_sinr,
                self.cfg.crb_cap,
            ));
        }
        let fused = ci_fuse(&bounds, &self.weights)?;
        let bs_only = ci_fuse(&bounds, &self.weights_bs)?;
        let psi = measurement_covariance(&fused);
        let psi_bs = measurement_covariance(&bs_only);

        // 6. Spherical measurement of the true state, noise scaled by √Ψ.
        let ideal = h_measure(&new_truth)?;
        let mut z = ideal.as_vector();
        for c in 0..4 {
            z[c] += psi[(c, c)].sqrt() * draw.measurement_normals[c];
        }
        z[2] = wrap_angle(z[2]);
        let measurement = SphericalMeasurement::from_vector(&z);

        // 7. Tracker update; the information recursions share the EKF's
        // measurement Jacobian.
        let ekf = ekf_step(&self.fisher.estimate, &self.fisher.mse, &self.model, &measurement, &psi)?;
        let fim =
            fim_update(&self.fisher.info, &self.model, &ekf.jacobian, &psi, self.cfg.fim_literal)?;
        let fim_bs = fim_update(
            &self.info_bs,
            &self.model,
            &ekf.jacobian,
            &psi_bs,
            self.cfg.fim_literal,
        )?;

        // 8. Reward.
        let sinr_db: Vec<f64> = report.comm.iter().map(|&s| floor_db(s)).collect();
        let shortfalls: Vec<f64> = sinr_db
            .iter()
            .map(|&s| {
                (s - self.cfg.gamma_min_db).min(0.0).max(self.cfg.reward_shortfall_floor_db)
            })
            .collect();
        let reward = RewardBreakdown::compose(
            fim.trace_pcrb,
            shortfalls,
            self.cfg.lambda_sense,
            self.cfg.lambda_comm,
            self.cfg.reward_rho_cap,
            self.cfg.reward_rho_log,
        );
        if !reward.total.is_finite() {
            return Err(EnvError::NonFinite("reward"));
        }

        // 9. Commit the slot.
        self.uavs = new_uavs;
        self.truth = new_truth;
        self.fisher = FisherState {
            info: fim.info,
            pcrb: fim.pcrb,
            trace_pcrb: fim.trace_pcrb,
            estimate: ekf.estimate,
            mse: ekf.mse,
            gain: ekf.gain,
            jacobian: ekf.jacobian,
        };
        self.info_bs = fim_bs.info;
        self.rho_bs = fim_bs.trace_pcrb;
        self.last_sinr_db = sinr_db.clone();
        self.slot += 1;
        self.episode_return += reward.total;

        let info = StepInfo {
            rho: fim.trace_pcrb,
            rho_bs_only: fim_bs.trace_pcrb,
            sinr_comm_db: sinr_db,
            sinr_sense_bs: report.sense_bs,
            sinr_sense_uav: report.sense_uav,
            uav_positions: self.uavs.clone(),
            target_truth: vec6_to_array(&self.truth.zeta),
            target_estimate: vec6_to_array(&self.fisher.estimate.zeta),
            movement_reverted,
        };
        Ok(StepOutcome {
            obs: self.observation(),
            reward,
            done: self.slot >= self.cfg.horizon,
            info,
        })
    }
}

fn vec6_to_array(v: &Vector6<f64>) -> [f64; 6] {
    [v[0], v[1], v[2], v[3], v[4], v[5]]
}

/// SINR in dB with a −200 dB floor guarding `log(0)`.
pub fn floor_db(sinr: f64) -> f64 {
    linear_to_db(sinr.max(1e-20))
}

// ─── Observation normalization ─────────────────────────────────────────────

/// Per-dimension running standardization (Welford) with ±10σ clipping.
/// Frozen normalizers keep applying their statistics without updating them
/// (evaluation mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    frozen: bool,
}

impl ObsNormalizer {
    pub fn new(dim: usize) -> Self {
        Self { count: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim], frozen: false }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn update(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.mean.len());
        if self.frozen {
            return;
        }
        self.count += 1.0;
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / self.count;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    fn std(&self, i: usize) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2[i] / self.count).sqrt().max(1e-8)
        }
    }

    /// `(x - mean)/std`, clipped to ±10.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.mean.len());
        if self.count < 1.0 {
            return x.to_vec();
        }
        x.iter()
            .enumerate()
            .map(|(i, &v)| ((v - self.mean[i]) / self.std(i)).clamp(-10.0, 10.0))
            .collect()
    }

    /// Flat state for checkpointing: count, frozen flag, means, m2s.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = vec![self.count, if self.frozen { 1.0 } else { 0.0 }];
        v.extend_from_slice(&self.mean);
        v.extend_from_slice(&self.m2);
        v
    }

    pub fn from_flat(flat: &[f64]) -> Option<Self> {
        if flat.len() < 2 || (flat.len() - 2) % 2 != 0 {
            return None;
        }
        let dim = (flat.len() - 2) / 2;
        Some(Self {
            count: flat[0],
            frozen: flat[1] != 0.0,
            mean: flat[2..2 + dim].to_vec(),
            m2: flat[2 + dim..].to_vec(),
        })
    }
}

// ─── Tests ─────────────────────────────────────────────────────────────────
