//! Simulator and trainer for a multi-UAV integrated sensing and communication
//! (ISAC) system.
//!
//! A ground base station with a uniform planar array serves `N` UAV relays
//! with downlink beams while simultaneously tracking a moving aerial target
//! from the echoes of a dedicated sensing beam.  Each UAV also listens to the
//! target echo, so every slot produces `N + 1` noisy spherical observations of
//! the target.  Per-sensor error bounds are derived from the sensing SINRs,
//! fused by covariance intersection, and fed to an extended Kalman filter and
//! a posterior-bound recursion whose trace is the sensing cost.
//!
//! The control problem — UAV waypoints plus base-station beamforming under
//! speed, separation, power, and SINR constraints — is solved with a
//! heterogeneous-agent PPO trainer.  Three optional mechanisms, all on by
//! default, give the full method: a difficulty curriculum on the SINR floor
//! and bound constants, a Kronecker factorisation of the beam action space,
//! and a QR orthonormalisation of decoded beams.  Disabling all three yields
//! the plain HAPPO baseline; random and per-slot genetic-search baselines are
//! also provided.
//!
//! Module map:
//!
//! * [`channel`] — array steering, Rician link gains, sensing and comm SINRs.
//! * [`fusion`] — SINR-derived error bounds and covariance-intersection fusion.
//! * [`tracking`] — target kinematics, measurement model, information
//!   recursion, and EKF.
//! * [`beam`] — beam action decoding: Kronecker reconstruction, QR, power
//!   assembly.
//! * [`env`] — the slotted multi-agent environment tying the above together.
//! * [`nn`] — minimal dependency-free MLP, Gaussian policy, and Adam.
//! * [`happo`] — rollout collection, GAE, sequential trust-region updates,
//!   curriculum.
//! * [`baselines`] — random policy and per-slot genetic search.
//! * [`config`] — serialisable experiment configuration with scenario
//!   defaults.
//! * [`harness`] — experiment runner: seed fan-out, metrics/trace CSV files,
//!   aggregation, sweeps.

pub mod baselines;
pub mod beam;
pub mod channel;
pub mod config;
pub mod env;
pub mod fusion;
pub mod happo;
pub mod harness;
pub mod nn;
pub mod seeds;
pub mod tracking;

pub use baselines::{GaParams, GaPolicy, RandomPolicy, SlotPolicy};
pub use beam::{BeamDecoder, KroneckerFactors, QrFactors};
pub use channel::{ArrayGeometry, BeamformingMatrix, ChannelParams, LinkGains, Scene, SinrReport, WorldState};
pub use config::{EnvConfig, ExperimentConfig, GradingSet, PolicyKind, TrainerConfig};
pub use env::{
    IsacEnv, JointAction, JointObservation, ObsNormalizer, RewardBreakdown, SlotRandomness,
    StepOutcome,
};
pub use fusion::{CrbConstants, CrbVector, FusionWeights};
pub use happo::{
    compute_gae, normalize_advantages, CurriculumState, EvalTrace, MetricsRow, Trainer, TrainError,
    ValueNormalizer,
};
pub use harness::{aggregate, run, sweep, EvalSummary, HarnessError, RunSummary, SeedRun};
pub use nn::{Adam, GaussianPolicy, MlpSpec};
pub use tracking::{FisherState, KinematicState, MotionModel, SphericalMeasurement};
