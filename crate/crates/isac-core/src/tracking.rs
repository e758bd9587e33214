//! Target kinematics, spherical measurement model, posterior-bound
//! recursion, and the extended Kalman filter.
//!
//! The target follows a constant-velocity model with white acceleration
//! noise; a constant deterministic acceleration can be injected into the
//! truth to create model mismatch.  Sensors observe range, polar angle,
//! azimuth, and radial velocity.  Two parallel recursions consume the fused
//! measurement covariance each slot:
//!
//! * an information (Fisher) recursion whose inverse-trace is the per-slot
//!   sensing cost `ρ`, and
//! * a standard EKF producing the target state estimate used to aim the
//!   sensing beam at the next slot.
//!
//! Both share the measurement Jacobian evaluated at the predicted state.
//! All matrix inversions go through a guarded SPD path: symmetrise, try
//! Cholesky, retry with a `1e-9·I` jitter, then fall back to LU.

use nalgebra::{Matrix4, Matrix6, SMatrix, Vector3, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub type Jacobian46 = SMatrix<f64, 4, 6>;
pub type Gain64 = SMatrix<f64, 6, 4>;

#[derive(Debug, Error, PartialEq)]
pub enum TrackingError {
    #[error("singular range: target coincides with the origin")]
    SingularRange,
    #[error("azimuth singularity: state lies on the vertical axis")]
    AzimuthSingularity,
    #[error("singular matrix in {0}")]
    SingularMatrix(&'static str),
    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),
}

/// Target state `[x, y, z, vx, vy, vz]`, metres and metres/second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState {
    pub zeta: Vector6<f64>,
}

impl KinematicState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>) -> Self {
        Self {
            zeta: Vector6::new(
                position.x, position.y, position.z, velocity.x, velocity.y, velocity.z,
            ),
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.zeta[0], self.zeta[1], self.zeta[2])
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.zeta[3], self.zeta[4], self.zeta[5])
    }
}

/// Constant-velocity transition with white-acceleration process noise.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    /// Slot duration `T`, seconds.
    pub slot_duration: f64,
    /// Process-noise intensity `σ²` (acceleration spectral density).
    pub process_noise: f64,
    /// `6×6` state transition: position advances by `T·velocity`.
    pub transition: Matrix6<f64>,
    /// `6×6` process-noise covariance (the `[[T³/3, T²/2], [T²/2, T]] ⊗ σ²I₃`
    /// discretisation).
    pub process_cov: Matrix6<f64>,
    /// Cholesky factor of the per-axis 2×2 noise block, for sampling.
    noise_chol: [f64; 3],
}

impl MotionModel {
    pub fn new(slot_duration: f64, process_noise: f64) -> Self {
        let t = slot_duration;
        let mut f = Matrix6::identity();
        let mut q = Matrix6::zeros();
        let (a, b, c) = (t * t * t / 3.0, t * t / 2.0, t);
        for axis in 0..3 {
            f[(axis, axis + 3)] = t;
            q[(axis, axis)] = process_noise * a;
            q[(axis, axis + 3)] = process_noise * b;
            q[(axis + 3, axis)] = process_noise * b;
            q[(axis + 3, axis + 3)] = process_noise * c;
        }
        // Closed-form Cholesky of σ²[[a, b], [b, c]]:
        // l11 = σ√a, l21 = b/√a·σ, l22 = σ√(c - b²/a) = σ√(T)/2.
        let sigma = process_noise.sqrt();
        let noise_chol = if process_noise > 0.0 && t > 0.0 {
            let l11 = sigma * a.sqrt();
            [l11, sigma * b / a.sqrt(), sigma * (c - b * b / a).max(0.0).sqrt()]
        } else {
            [0.0; 3]
        };
        Self { slot_duration: t, process_noise, transition: f, process_cov: q, noise_chol }
    }

    /// Deterministic part of the transition: `F·ζ`.
    pub fn predict_state(&self, state: &KinematicState) -> KinematicState {
        KinematicState { zeta: self.transition * state.zeta }
    }

    /// One correlated position/velocity noise sample from the discretised
    /// white-acceleration model.
    pub fn sample_process_noise(&self, rng: &mut impl Rng) -> Vector6<f64> {
        let mut z = [0.0; 6];
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        self.process_noise_from_normals(&z)
    }

    /// Colours six standard-normal draws (two per axis) into a process-noise
    /// sample.  Split out so callers can pre-draw and replay randomness.
    pub fn process_noise_from_normals(&self, normals: &[f64; 6]) -> Vector6<f64> {
        let mut n = Vector6::zeros();
        if self.process_noise == 0.0 {
            return n;
        }
        let [l11, l21, l22] = self.noise_chol;
        for axis in 0..3 {
            let (z1, z2) = (normals[2 * axis], normals[2 * axis + 1]);
            n[axis] = l11 * z1;
            n[axis + 3] = l21 * z1 + l22 * z2;
        }
        n
    }
}

/// Advances the true target state one slot: transition, deterministic
/// acceleration `accel` (unknown to the tracker), and process noise.
pub fn propagate_truth(
    state: &KinematicState,
    model: &MotionModel,
    accel: &Vector3<f64>,
    rng: &mut impl Rng,
) -> KinematicState {
    propagate_truth_with(state, model, accel, &model.sample_process_noise(rng))
}

/// [`propagate_truth`] with a caller-supplied process-noise sample.
pub fn propagate_truth_with(
    state: &KinematicState,
    model: &MotionModel,
    accel: &Vector3<f64>,
    noise: &Vector6<f64>,
) -> KinematicState {
    let t = model.slot_duration;
    let mut zeta = model.transition * state.zeta;
    for axis in 0..3 {
        zeta[axis] += 0.5 * t * t * accel[axis];
        zeta[axis + 3] += t * accel[axis];
    }
    KinematicState { zeta: zeta + noise }
}

/// One spherical observation of the target from the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalMeasurement {
    /// Range, metres; positive.
    pub range: f64,
    /// Polar angle from the +z axis, radians, `[0, π]`.
    pub polar: f64,
    /// Azimuth in the x-y plane, radians, `(-π, π]`.
    pub azimuth: f64,
    /// Radial (range-rate) velocity, m/s.
    pub radial_velocity: f64,
}

impl SphericalMeasurement {
    pub fn as_vector(&self) -> nalgebra::Vector4<f64> {
        nalgebra::Vector4::new(self.range, self.polar, self.azimuth, self.radial_velocity)
    }

    pub fn from_vector(v: &nalgebra::Vector4<f64>) -> Self {
        Self { range: v[0], polar: v[1], azimuth: v[2], radial_velocity: v[3] }
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a % two_pi;
    if w <= -std::f64::consts::PI {
        w += two_pi;
    } else if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Nudges a state off the vertical axis so azimuth and its Jacobian exist.
pub fn desingularize(state: &KinematicState) -> KinematicState {
    let mut s = *state;
    if s.zeta[0] * s.zeta[0] + s.zeta[1] * s.zeta[1] < 1e-12 {
        s.zeta[0] += 1e-6;
    }
    s
}

/// The measurement function `h`: range, polar, azimuth, radial velocity.
pub fn h_measure(state: &KinematicState) -> Result<SphericalMeasurement, TrackingError> {
    let p = state.position();
    let v = state.velocity();
    let d = p.norm();
    if d < 1e-9 {
        return Err(TrackingError::SingularRange);
    }
    Ok(SphericalMeasurement {
        range: d,
        polar: (p.z / d).clamp(-1.0, 1.0).acos(),
        azimuth: p.y.atan2(p.x),
        radial_velocity: p.dot(&v) / d,
    })
}

/// Analytic `4×6` Jacobian of [`h_measure`].
pub fn h_jacobian(state: &KinematicState) -> Result<Jacobian46, TrackingError> {
    let p = state.position();
    let v = state.velocity();
    let d2 = p.norm_squared();
    if d2 < 1e-18 {
        return Err(TrackingError::SingularRange);
    }
    let d = d2.sqrt();
    let s2 = p.x * p.x + p.y * p.y;
    if s2 < 1e-18 {
        return Err(TrackingError::AzimuthSingularity);
    }
    let s = s2.sqrt();
    let mut jac = Jacobian46::zeros();
    // Row 0: range — the unit position vector.
    jac[(0, 0)] = p.x / d;
    jac[(0, 1)] = p.y / d;
    jac[(0, 2)] = p.z / d;
    // Row 1: polar angle θ = arccos(z/d).
    jac[(1, 0)] = p.z * p.x / (s * d2);
    jac[(1, 1)] = p.z * p.y / (s * d2);
    jac[(1, 2)] = -s / d2;
    // Row 2: azimuth φ = atan2(y, x).
    jac[(2, 0)] = -p.y / s2;
    jac[(2, 1)] = p.x / s2;
    // Row 3: radial velocity (p·v)/d.
    let vr = p.dot(&v) / d;
    jac[(3, 0)] = v.x / d - vr * p.x / d2;
    jac[(3, 1)] = v.y / d - vr * p.y / d2;
    jac[(3, 2)] = v.z / d - vr * p.z / d2;
    jac[(3, 3)] = p.x / d;
    jac[(3, 4)] = p.y / d;
    jac[(3, 5)] = p.z / d;
    Ok(jac)
}

// ─── Guarded SPD algebra ───────────────────────────────────────────────────

pub fn symmetrize<const D: usize>(m: &SMatrix<f64, D, D>) -> SMatrix<f64, D, D> {
    (m + m.transpose()) * 0.5
}

/// Inverse of a (nominally) symmetric positive-definite matrix: Cholesky,
/// then Cholesky with a `1e-9` jitter, then plain LU as a last resort.
pub fn spd_inverse<const D: usize>(
    m: &SMatrix<f64, D, D>,
    what: &'static str,
) -> Result<SMatrix<f64, D, D>, TrackingError> {
    let sym = symmetrize(m);
    if let Some(chol) = nalgebra::Cholesky::new(sym) {
        return Ok(chol.inverse());
    }
    let jittered = sym + SMatrix::<f64, D, D>::identity() * 1e-9;
    if let Some(chol) = nalgebra::Cholesky::new(jittered) {
        log::warn!("SPD inverse of {what} needed jitter");
        return Ok(chol.inverse());
    }
    sym.try_inverse().ok_or(TrackingError::SingularMatrix(what))
}

// ─── Information recursion and EKF ─────────────────────────────────────────

/// Combined tracking state carried by the environment across slots.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherState {
    /// Information matrix `J`.
    pub info: Matrix6<f64>,
    /// Its inverse: the posterior bound matrix.
    pub pcrb: Matrix6<f64>,
    /// `trace(pcrb)` — the per-slot sensing cost `ρ`.
    pub trace_pcrb: f64,
    /// EKF state estimate.
    pub estimate: KinematicState,
    /// EKF error covariance `M`.
    pub mse: Matrix6<f64>,
    /// Last Kalman gain.
    pub gain: Gain64,
    /// Last measurement Jacobian (at the predicted state).
    pub jacobian: Jacobian46,
}

impl FisherState {
    /// Initialises both recursions from an initial estimate and covariance.
    pub fn init(estimate: KinematicState, m0: Matrix6<f64>) -> Result<Self, TrackingError> {
        let info = spd_inverse(&m0, "initial covariance")?;
        Ok(Self {
            info,
            pcrb: m0,
            trace_pcrb: m0.trace(),
            estimate,
            mse: m0,
            gain: Gain64::zeros(),
            jacobian: Jacobian46::zeros(),
        })
    }
}

/// Result of one information-recursion step.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoUpdate {
    pub info: Matrix6<f64>,
    pub pcrb: Matrix6<f64>,
    pub trace_pcrb: f64,
}

/// One step of the posterior-bound information recursion.
///
/// Prior information `J_P = (Φ + F J⁻¹ Fᵀ)⁻¹`; data information
/// `J_D = Hᵀ Ψ̂⁻¹ H` by default.  The `literal` variant uses `Hᵀ Ψ̂ H`
/// instead (the covariance rather than its inverse in the middle), retained
/// as a switch for comparing against that alternative form.
pub fn fim_update(
    prev_info: &Matrix6<f64>,
    model: &MotionModel,
    jacobian: &Jacobian46,
    psi: &Matrix4<f64>,
    literal: bool,
) -> Result<InfoUpdate, TrackingError> {
    let j_inv = spd_inverse(prev_info, "prior information")?;
    let prior_cov = model.transition * j_inv * model.transition.transpose() + model.process_cov;
    let j_p = spd_inverse(&prior_cov, "predicted covariance")?;
    let j_d = if literal {
        jacobian.transpose() * psi * jacobian
    } else {
        jacobian.transpose() * spd_inverse(psi, "measurement covariance")? * jacobian
    };
    let info = symmetrize(&(j_p + j_d));
    let pcrb = spd_inverse(&info, "posterior information")?;
    let trace = pcrb.trace();
    if !trace.is_finite() {
        return Err(TrackingError::NonFinite("posterior bound trace"));
    }
    Ok(InfoUpdate { info, pcrb, trace_pcrb: trace })
}

/// Result of one EKF step.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfUpdate {
    pub estimate: KinematicState,
    pub mse: Matrix6<f64>,
    pub gain: Gain64,
    /// Jacobian at the (desingularised) predicted state — shared with the
    /// information recursion of the same slot.
    pub jacobian: Jacobian46,
    pub predicted: KinematicState,
}

/// One EKF predict + update against a spherical measurement with covariance
/// `psi`.  Angle innovations are wrapped into `(-π, π]`.
pub fn ekf_step(
    prev_estimate: &KinematicState,
    prev_mse: &Matrix6<f64>,
    model: &MotionModel,
    measurement: &SphericalMeasurement,
    psi: &Matrix4<f64>,
) -> Result<EkfUpdate, TrackingError> {
    let predicted = model.predict_state(prev_estimate);
    let m_pred = symmetrize(
        &(model.transition * prev_mse * model.transition.transpose() + model.process_cov),
    );
    let at = desingularize(&predicted);
    let h_pred = h_measure(&at)?;
    let jacobian = h_jacobian(&at)?;
    let innovation_cov = symmetrize(&(jacobian * m_pred * jacobian.transpose() + psi));
    let s_inv = spd_inverse(&innovation_cov, "innovation covariance")?;
    let gain: Gain64 = m_pred * jacobian.transpose() * s_inv;
    let mut innovation = measurement.as_vector() - h_pred.as_vector();
    innovation[1] = wrap_angle(innovation[1]);
    innovation[2] = wrap_angle(innovation[2]);
    let estimate = KinematicState { zeta: predicted.zeta + gain * innovation };
    if estimate.zeta.iter().any(|x| !x.is_finite()) {
        return Err(TrackingError::NonFinite("state estimate"));
    }
    let mse = symmetrize(&((Matrix6::identity() - gain * jacobian) * m_pred));
    Ok(EkfUpdate { estimate, mse, gain, jacobian, predicted })
}

// ─── Tests ─────────────────────────────────────────────────────────────────
