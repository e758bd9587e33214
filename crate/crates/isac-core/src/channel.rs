//! Physical layer: array steering, Rician link gains, and per-slot SINRs.
//!
//! The base station transmits `N + 1` beams from a uniform planar array
//! (UPA): one sensing beam (column 0 of the beamforming matrix) plus one
//! communication beam per UAV (columns `1..=N`).  Three link families exist:
//!
//! * **BS sensing** — the sensing beam echoes off the target back to the BS;
//!   two-way path loss `d⁴`.
//! * **UAV sensing** — the same echo is also heard at each UAV; path loss is
//!   the product of the squared BS→scatterer and scatterer→receiver legs.
//! * **Communication** — direct BS→UAV downlink, path loss `d²`.
//!
//! All gains are Rician: a deterministic line-of-sight part plus a complex
//! Gaussian scatter term `g ~ CN(0,1)` weighted by the K-factor.  One scatter
//! draw is shared per physical link per slot, which keeps a slot's physics
//! reproducible from a single set of draws and lets search baselines evaluate
//! many candidate actions against a frozen draw.
//!
//! All quantities here are linear (watts, metres); decibel conversions happen
//! once at configuration load.

use nalgebra::{Complex, DMatrix, DVector, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("degenerate direction: endpoints coincide, no steering direction defined")]
    DegenerateDirection,
    #[error("zero-distance link has unbounded gain")]
    ZeroDistance,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

// ─── Geometry and parameters ───────────────────────────────────────────────

/// Uniform planar array: `nx × ny` elements spaced `dx`/`dy` apart.
///
/// Spacings and wavelength only enter through their ratio, so the default
/// half-wavelength array uses `wavelength = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    /// Elements along the array x axis.
    pub nx: usize,
    /// Elements along the array y axis.
    pub ny: usize,
    /// Element spacing along x, same unit as `wavelength`.
    pub dx: f64,
    /// Element spacing along y.
    pub dy: f64,
    /// Carrier wavelength.
    pub wavelength: f64,
}

impl ArrayGeometry {
    /// Half-wavelength-spaced `nx × ny` array.
    pub fn half_wavelength(nx: usize, ny: usize) -> Self {
        Self { nx, ny, dx: 0.5, dy: 0.5, wavelength: 1.0 }
    }

    /// Total number of elements `M = nx · ny`.
    pub fn num_elements(&self) -> usize {
        self.nx * self.ny
    }
}

/// Link-level constants, all linear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Rician K-factor (line-of-sight to scatter power ratio).
    pub rician_k: f64,
    /// Reference gain at 1 m for communication links.
    pub beta0_comm: f64,
    /// Reference gain at 1 m for sensing links.
    pub beta0_sense: f64,
    /// Radar cross-section coefficient of the target echo.
    pub rcs_target: f64,
    /// Radar cross-section coefficient of UAV-scattered interference.
    pub rcs_uav: f64,
    /// Receiver thermal noise power, watts.
    pub noise_rx: f64,
    /// Residual self-interference power at the BS sensing receiver, watts.
    pub residual_bs: f64,
    /// Residual interference power at each UAV sensing receiver, watts.
    pub residual_uav: f64,
    /// Test mode: pin every scatter draw to zero for deterministic channels.
    pub g_frozen: bool,
}

/// Array geometry plus link constants: everything position-independent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub array: ArrayGeometry,
    pub params: ChannelParams,
}

/// Positions of every radio endpoint at one slot, metres.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub bs: Vector3<f64>,
    pub uavs: Vec<Vector3<f64>>,
    pub target: Vector3<f64>,
}

impl WorldState {
    pub fn num_uavs(&self) -> usize {
        self.uavs.len()
    }
}

// ─── Beamforming matrix ────────────────────────────────────────────────────

/// Transmit beamforming matrix: `M × (N + 1)` complex weights.
///
/// Column 0 is the sensing beam, columns `1..=N` the per-UAV communication
/// beams.  `power_budget` records the cap the columns were scaled to satisfy.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingMatrix {
    cols: DMatrix<C64>,
    power_budget: f64,
}

impl BeamformingMatrix {
    /// Wraps an `M × (N + 1)` weight matrix.  The caller is responsible for
    /// the power budget; see [`crate::beam::assemble_beams`].
    pub fn new(cols: DMatrix<C64>, power_budget: f64) -> Self {
        Self { cols, power_budget }
    }

    pub fn num_elements(&self) -> usize {
        self.cols.nrows()
    }

    /// Number of UAV beams `N` (columns minus the sensing beam).
    pub fn num_uav_beams(&self) -> usize {
        self.cols.ncols() - 1
    }

    pub fn power_budget(&self) -> f64 {
        self.power_budget
    }

    /// Beam `k`: 0 is the sensing beam, `1..=N` the UAV beams.
    pub fn beam(&self, k: usize) -> DVector<C64> {
        DVector::from_column_slice(self.cols.column(k).as_slice())
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.cols
    }

    /// Total transmit power `Σ_k ‖w_k‖²`.
    pub fn total_power(&self) -> f64 {
        self.cols.iter().map(|c| c.norm_sqr()).sum()
    }
}

// ─── Steering ──────────────────────────────────────────────────────────────

/// Conjugated steering profile of the UPA toward `toward` as seen from
/// `from`, as a length-`M` column.
///
/// Entry `(mx, my)` (flattened as `mx · ny + my`) is
/// `exp(-j 2π (dx·mx·ψ + dy·my·φ) / λ)` with `ψ, φ` the x/y direction
/// cosines of the unit vector from `from` to `toward` — the x-axis phase
/// ramp Kronecker the y-axis ramp.  The plain (unconjugated) dot product of
/// this vector with a beam column is the array response `aᴴ w`.
pub fn steering_vector(
    geom: &ArrayGeometry,
    from: &Vector3<f64>,
    toward: &Vector3<f64>,
) -> Result<DVector<C64>, ChannelError> {
    let diff = toward - from;
    let dist = diff.norm();
    if dist <= f64::EPSILON {
        return Err(ChannelError::DegenerateDirection);
    }
    let psi = diff.x / dist;
    let phi = diff.y / dist;
    let kx = 2.0 * std::f64::consts::PI * geom.dx * psi / geom.wavelength;
    let ky = 2.0 * std::f64::consts::PI * geom.dy * phi / geom.wavelength;
    let mut v = DVector::zeros(geom.num_elements());
    for mx in 0..geom.nx {
        for my in 0..geom.ny {
            let phase = kx * mx as f64 + ky * my as f64;
            v[mx * geom.ny + my] = C64::new(phase.cos(), -phase.sin());
        }
    }
    Ok(v)
}

/// Array response `aᴴ w` of beam `w` toward the direction encoded by the
/// conjugated steering profile `steer`.
pub fn array_response(steer: &DVector<C64>, w: &DVector<C64>) -> C64 {
    steer.dot(w)
}

// ─── Rician gains ──────────────────────────────────────────────────────────

/// Which physical link a gain belongs to; carries the endpoint positions.
#[derive(Debug, Clone, Copy)]
pub enum GainKind {
    /// Round trip BS → target → BS; path loss `d⁴`.
    BsSense { bs: Vector3<f64>, target: Vector3<f64> },
    /// BS → scatterer → receiver; path loss `‖bs-s‖² · ‖rx-s‖²`.
    UavSense { bs: Vector3<f64>, scatterer: Vector3<f64>, receiver: Vector3<f64> },
    /// Direct BS → UAV downlink; path loss `d²`.
    Comm { bs: Vector3<f64>, uav: Vector3<f64> },
}

fn path_loss(kind: &GainKind) -> Result<f64, ChannelError> {
    let loss = match kind {
        GainKind::BsSense { bs, target } => {
            let d2 = (target - bs).norm_squared();
            d2 * d2
        }
        GainKind::UavSense { bs, scatterer, receiver } => {
            (scatterer - bs).norm_squared() * (receiver - scatterer).norm_squared()
        }
        GainKind::Comm { bs, uav } => (uav - bs).norm_squared(),
    };
    if loss <= 0.0 {
        return Err(ChannelError::ZeroDistance);
    }
    Ok(loss)
}

/// One complex Gaussian scatter draw `g ~ CN(0, 1)`.
pub fn draw_scatter(params: &ChannelParams, rng: &mut impl Rng) -> C64 {
    if params.g_frozen {
        return C64::new(0.0, 0.0);
    }
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Rician gain of a link given an explicit scatter draw.
///
/// `(√(K/(K+1)) + √(1/(K+1)) g) · √(β₀ / pathloss)`; the `β₀` reference is
/// the sensing one for echo links and the comm one for downlink links.
pub fn rician_gain_with(
    params: &ChannelParams,
    kind: GainKind,
    g: C64,
) -> Result<C64, ChannelError> {
    let k = params.rician_k;
    let los = (k / (k + 1.0)).sqrt();
    let scatter_w = (1.0 / (k + 1.0)).sqrt();
    let beta0 = match kind {
        GainKind::Comm { .. } => params.beta0_comm,
        _ => params.beta0_sense,
    };
    let amp = (beta0 / path_loss(&kind)?).sqrt();
    Ok((C64::new(los, 0.0) + g * scatter_w) * amp)
}

/// Rician gain with a fresh scatter draw (zero when `g_frozen` is set).
pub fn rician_gain(
    params: &ChannelParams,
    kind: GainKind,
    rng: &mut impl Rng,
) -> Result<C64, ChannelError> {
    let g = draw_scatter(params, rng);
    rician_gain_with(params, kind, g)
}

/// The raw scatter draws for every link of one slot.  Sampling these
/// separately from the position-dependent gains lets a slot be re-evaluated
/// under many candidate actions with identical randomness.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterDraws {
    pub bs_target: C64,
    pub uav_target: Vec<C64>,
    pub comm: Vec<C64>,
    /// `[receiver][scatterer]`, diagonal unused.
    pub uav_scatter: Vec<Vec<C64>>,
}

impl ScatterDraws {
    pub fn sample(params: &ChannelParams, n_uavs: usize, rng: &mut impl Rng) -> Self {
        Self {
            bs_target: draw_scatter(params, rng),
            uav_target: (0..n_uavs).map(|_| draw_scatter(params, rng)).collect(),
            comm: (0..n_uavs).map(|_| draw_scatter(params, rng)).collect(),
            uav_scatter: (0..n_uavs)
                .map(|_| (0..n_uavs).map(|_| draw_scatter(params, rng)).collect())
                .collect(),
        }
    }

    pub fn zeros(n_uavs: usize) -> Self {
        let z = C64::new(0.0, 0.0);
        Self {
            bs_target: z,
            uav_target: vec![z; n_uavs],
            comm: vec![z; n_uavs],
            uav_scatter: vec![vec![z; n_uavs]; n_uavs],
        }
    }
}

/// Realised complex gain of every link at one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGains {
    /// BS sensing echo gain `β_bs`.
    pub bs_target: C64,
    /// Per-UAV sensing echo gain `β_n`.
    pub uav_target: Vec<C64>,
    /// Per-UAV downlink gain `β^c_n`.
    pub comm: Vec<C64>,
    /// `[receiver][scatterer]` UAV-scatter gain; diagonal entries are zero.
    pub uav_scatter: Vec<Vec<C64>>,
}

/// Combines per-link scatter draws with the current geometry.
pub fn link_gains(
    params: &ChannelParams,
    world: &WorldState,
    draws: &ScatterDraws,
) -> Result<LinkGains, ChannelError> {
    let n = world.num_uavs();
    if draws.uav_target.len() != n {
        return Err(ChannelError::DimensionMismatch { expected: n, got: draws.uav_target.len() });
    }
    let bs_target = rician_gain_with(
        params,
        GainKind::BsSense { bs: world.bs, target: world.target },
        draws.bs_target,
    )?;
    let mut uav_target = Vec::with_capacity(n);
    let mut comm = Vec::with_capacity(n);
    let mut uav_scatter = vec![vec![C64::new(0.0, 0.0); n]; n];
    for i in 0..n {
        uav_target.push(rician_gain_with(
            params,
            GainKind::UavSense { bs: world.bs, scatterer: world.target, receiver: world.uavs[i] },
            draws.uav_target[i],
        )?);
        comm.push(rician_gain_with(
            params,
            GainKind::Comm { bs: world.bs, uav: world.uavs[i] },
            draws.comm[i],
        )?);
        for j in 0..n {
            if i == j {
                continue;
            }
            uav_scatter[i][j] = rician_gain_with(
                params,
                GainKind::UavSense { bs: world.bs, scatterer: world.uavs[j], receiver: world.uavs[i] },
                draws.uav_scatter[i][j],
            )?;
        }
    }
    Ok(LinkGains { bs_target, uav_target, comm, uav_scatter })
}

/// Samples fresh scatter draws and realises the slot's link gains.
pub fn draw_link_gains(
    params: &ChannelParams,
    world: &WorldState,
    rng: &mut impl Rng,
) -> Result<LinkGains, ChannelError> {
    let draws = ScatterDraws::sample(params, world.num_uavs(), rng);
    link_gains(params, world, &draws)
}

// ─── SINRs ─────────────────────────────────────────────────────────────────

/// All per-slot SINRs, linear.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrReport {
    /// Downlink SINR per UAV.
    pub comm: Vec<f64>,
    /// Sensing SINR at the BS receiver.
    pub sense_bs: f64,
    /// Sensing SINR at each UAV receiver.
    pub sense_uav: Vec<f64>,
}

/// Downlink SINR at UAV `i` (0-based).
///
/// Numerator: own beam through the direct channel.  Interference: the other
/// UAV beams through the same direct channel, every beam echoed off the
/// target (weight `rcs_target`), and every beam scattered off each other UAV
/// (weight `rcs_uav`), plus receiver noise.
pub fn comm_sinr(
    i: usize,
    scene: &Scene,
    world: &WorldState,
    w: &BeamformingMatrix,
    gains: &LinkGains,
) -> Result<f64, ChannelError> {
    let n = world.num_uavs();
    let a_own = steering_vector(&scene.array, &world.bs, &world.uavs[i])?;
    let a_target = steering_vector(&scene.array, &world.bs, &world.target)?;
    let direct = gains.comm[i] * array_response(&a_own, &w.beam(i + 1));
    let mut interference = 0.0;
    for k in 1..=n {
        if k == i + 1 {
            continue;
        }
        interference += (gains.comm[i] * array_response(&a_own, &w.beam(k))).norm_sqr();
    }
    let alpha0 = scene.params.rcs_target;
    let alpha1 = scene.params.rcs_uav;
    for k in 0..=n {
        interference +=
            (gains.uav_target[i] * array_response(&a_target, &w.beam(k))).norm_sqr() * alpha0 * alpha0;
    }
    for j in 0..n {
        if j == i {
            continue;
        }
        let a_j = steering_vector(&scene.array, &world.bs, &world.uavs[j])?;
        for k in 0..=n {
            interference += (gains.uav_scatter[i][j] * array_response(&a_j, &w.beam(k))).norm_sqr()
                * alpha1
                * alpha1;
        }
    }
    Ok(direct.norm_sqr() / (interference + scene.params.noise_rx))
}

/// Sensing SINR at the BS: sensing-beam echo against the other beams' echoes,
/// residual self-interference, and noise.
pub fn sensing_sinr_bs(
    scene: &Scene,
    world: &WorldState,
    w: &BeamformingMatrix,
    gains: &LinkGains,
) -> Result<f64, ChannelError> {
    let a_target = steering_vector(&scene.array, &world.bs, &world.target)?;
    sensing_sinr_from(scene, &a_target, gains.bs_target, scene.params.residual_bs, w)
}

/// Sensing SINR at UAV `i`: same structure as the BS one through the
/// corresponding two-hop echo channel.
pub fn sensing_sinr_uav(
    i: usize,
    scene: &Scene,
    world: &WorldState,
    w: &BeamformingMatrix,
    gains: &LinkGains,
) -> Result<f64, ChannelError> {
    let a_target = steering_vector(&scene.array, &world.bs, &world.target)?;
    sensing_sinr_from(scene, &a_target, gains.uav_target[i], scene.params.residual_uav, w)
}

fn sensing_sinr_from(
    scene: &Scene,
    a_target: &DVector<C64>,
    echo_gain: C64,
    residual: f64,
    w: &BeamformingMatrix,
) -> Result<f64, ChannelError> {
    let alpha0 = scene.params.rcs_target;
    let scale = echo_gain.norm_sqr() * alpha0 * alpha0;
    let num = scale * array_response(a_target, &w.beam(0)).norm_sqr();
    let mut interference = 0.0;
    for k in 1..=w.num_uav_beams() {
        interference += scale * array_response(a_target, &w.beam(k)).norm_sqr();
    }
    Ok(num / (interference + residual + scene.params.noise_rx))
}

/// Every SINR of a slot, computing each steering vector once.
pub fn compute_sinrs(
    scene: &Scene,
    world: &WorldState,
    w: &BeamformingMatrix,
    gains: &LinkGains,
) -> Result<SinrReport, ChannelError> {
    let n = world.num_uavs();
    let a_target = steering_vector(&scene.array, &world.bs, &world.target)?;
    let a_uav: Vec<DVector<C64>> = world
        .uavs
        .iter()
        .map(|u| steering_vector(&scene.array, &world.bs, u))
        .collect::<Result<_, _>>()?;
    // Responses of every beam toward every direction of interest.
    let resp_target: Vec<C64> = (0..=n).map(|k| array_response(&a_target, &w.beam(k))).collect();
    let resp_uav: Vec<Vec<C64>> =
        (0..n).map(|j| (0..=n).map(|k| array_response(&a_uav[j], &w.beam(k))).collect()).collect();

    let alpha0 = scene.params.rcs_target;
    let alpha1 = scene.params.rcs_uav;
    let mut comm = Vec::with_capacity(n);
    for i in 0..n {
        let direct = (gains.comm[i] * resp_uav[i][i + 1]).norm_sqr();
        let mut interference = 0.0;
        for k in 1..=n {
            if k != i + 1 {
                interference += (gains.comm[i] * resp_uav[i][k]).norm_sqr();
            }
        }
        for k in 0..=n {
            interference += (gains.uav_target[i] * resp_target[k]).norm_sqr() * alpha0 * alpha0;
        }
        for j in 0..n {
            if j != i {
                for k in 0..=n {
                    interference +=
                        (gains.uav_scatter[i][j] * resp_uav[j][k]).norm_sqr() * alpha1 * alpha1;
                }
            }
        }
        comm.push(direct / (interference + scene.params.noise_rx));
    }

    let sense = |echo: C64, residual: f64| -> f64 {
        let scale = echo.norm_sqr() * alpha0 * alpha0;
        let num = scale * resp_target[0].norm_sqr();
        let interf: f64 = (1..=n).map(|k| scale * resp_target[k].norm_sqr()).sum();
        num / (interf + residual + scene.params.noise_rx)
    };
    let sense_bs = sense(gains.bs_target, scene.params.residual_bs);
    let sense_uav: Vec<f64> =
        (0..n).map(|i| sense(gains.uav_target[i], scene.params.residual_uav)).collect();

    Ok(SinrReport { comm, sense_bs, sense_uav })
}

// ─── Tests ─────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_params() -> ChannelParams {
        ChannelParams {
            rician_k: 10.0,
            beta0_comm: 1e-5,
            beta0_sense: 1e-5,
            rcs_target: 0.9,
            rcs_uav: 0.9,
            noise_rx: 1e-11,
            residual_bs: 1e-10,
            residual_uav: 1e-10,
            g_frozen: false,
        }
    }

    fn origin() -> Vector3<f64> {
        Vector3::zeros()
    }

    #[test]
    fn steering_single_element_is_unity() {
        let geom = ArrayGeometry::half_wavelength(1, 1);
        let v = steering_vector(&geom, &origin(), &Vector3::new(10.0, 3.0, 4.0)).unwrap();
        assert_eq!(v.len(), 1);
        assert_abs_diff_eq!(v[0].re, 1.0);
        assert_abs_diff_eq!(v[0].im, 0.0);
    }

    #[test]
    fn steering_two_element_endfire() {
        // Two elements along x at λ/2, direction exactly along x: phase step
        // is π, so the profile is [1, -1].
        let geom = ArrayGeometry::half_wavelength(2, 1);
        let v = steering_vector(&geom, &origin(), &Vector3::new(25.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(v[0].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1].re, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1].im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn steering_matches_elementwise_oracle() {
        // Independent recomputation straight from the phase formula for a
        // 2×2 array and a generic direction.
        let geom = ArrayGeometry { nx: 2, ny: 2, dx: 0.5, dy: 0.5, wavelength: 1.0 };
        let toward = Vector3::new(3.0, -4.0, 12.0);
        let v = steering_vector(&geom, &origin(), &toward).unwrap();
        let dist = toward.norm();
        let (psi, phi) = (toward.x / dist, toward.y / dist);
        for mx in 0..2usize {
            for my in 0..2usize {
                let phase =
                    2.0 * std::f64::consts::PI * (0.5 * mx as f64 * psi + 0.5 * my as f64 * phi);
                let expect = C64::new(phase.cos(), -phase.sin());
                let got = v[mx * 2 + my];
                assert_abs_diff_eq!(got.re, expect.re, epsilon = 1e-14);
                assert_abs_diff_eq!(got.im, expect.im, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn steering_unit_modulus_and_norm() {
        let geom = ArrayGeometry::half_wavelength(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let toward = Vector3::new(
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
                rng.gen_range(1.0..100.0),
            );
            let v = steering_vector(&geom, &origin(), &toward).unwrap();
            for e in v.iter() {
                assert_relative_eq!(e.norm(), 1.0, epsilon = 1e-12);
            }
            assert_relative_eq!(v.norm_squared(), 64.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn steering_rejects_coincident_endpoints() {
        let geom = ArrayGeometry::half_wavelength(2, 2);
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(steering_vector(&geom, &p, &p), Err(ChannelError::DegenerateDirection));
    }

    #[test]
    fn rician_frozen_bs_sense_matches_hand_value() {
        // K = 10, g = 0, β₀ = 1e-5, d = 10 ⇒ gain = √(10/11)·√(1e-5/10⁴).
        let mut p = test_params();
        p.g_frozen = true;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = rician_gain(
            &p,
            GainKind::BsSense { bs: origin(), target: Vector3::new(10.0, 0.0, 0.0) },
            &mut rng,
        )
        .unwrap();
        let expect = (10.0f64 / 11.0).sqrt() * (1e-5f64 / 1e4).sqrt();
        assert_relative_eq!(g.re, expect, epsilon = 1e-12);
        assert_abs_diff_eq!(g.im, 0.0);
    }

    #[test]
    fn rician_large_k_suppresses_scatter() {
        // As K → ∞ the scatter weight vanishes and the gain approaches the
        // pure line-of-sight value regardless of the draw.
        let mut p = test_params();
        p.rician_k = 1e18;
        let kind = GainKind::Comm { bs: origin(), uav: Vector3::new(0.0, 0.0, 50.0) };
        let g = rician_gain_with(&p, kind, C64::new(3.0, -2.0)).unwrap();
        let los = (p.beta0_comm / 2500.0).sqrt();
        assert_relative_eq!(g.re, los, epsilon = 1e-8);
        assert_abs_diff_eq!(g.im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rician_second_moment_is_unit() {
        // E[|gain|²] · pathloss / β₀ = K/(K+1) + 1/(K+1) = 1.
        let p = test_params();
        let kind = GainKind::Comm { bs: origin(), uav: Vector3::new(30.0, 40.0, 0.0) };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut acc = 0.0;
        let trials = 100_000;
        for _ in 0..trials {
            acc += rician_gain(&p, kind, &mut rng).unwrap().norm_sqr();
        }
        let mean = acc / trials as f64 * 2500.0 / p.beta0_comm;
        assert!((mean - 1.0).abs() < 0.02, "second moment {mean} outside ±2%");
    }

    #[test]
    fn uav_sense_pathloss_uses_both_legs() {
        let mut p = test_params();
        p.g_frozen = true;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = rician_gain(
            &p,
            GainKind::UavSense {
                bs: origin(),
                scatterer: Vector3::new(0.0, 0.0, 10.0),  // 10 m from BS
                receiver: Vector3::new(0.0, 3.0, 14.0),   // 5 m from scatterer
            },
            &mut rng,
        )
        .unwrap();
        let expect = (10.0f64 / 11.0).sqrt() * (1e-5 / (100.0 * 25.0) as f64).sqrt();
        assert_relative_eq!(g.re, expect, epsilon = 1e-12);
    }

    #[test]
    fn zero_distance_link_is_rejected() {
        let p = test_params();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = rician_gain(&p, GainKind::Comm { bs: origin(), uav: origin() }, &mut rng);
        assert_eq!(r, Err(ChannelError::ZeroDistance));
    }

    /// A matched beam toward `steer` carrying power `p`: `conj(steer)·√(p/M)`.
    fn matched_beam(steer: &DVector<C64>, p: f64) -> DVector<C64> {
        let m = steer.len() as f64;
        steer.map(|e| e.conj() * C64::new((p / m).sqrt(), 0.0))
    }

    fn single_uav_world() -> WorldState {
        WorldState {
            bs: origin(),
            uavs: vec![Vector3::new(30.0, 10.0, 70.0)],
            target: Vector3::new(60.0, 0.0, 60.0),
        }
    }

    #[test]
    fn comm_sinr_single_uav_no_cross_terms() {
        // With the echo coefficients zeroed and one UAV, the denominator is
        // noise alone: SINR = |β^c aᴴ w₁|² / σ².
        let mut params = test_params();
        params.rcs_target = 0.0;
        params.rcs_uav = 0.0;
        params.g_frozen = true;
        let scene = Scene { array: ArrayGeometry::half_wavelength(4, 4), params };
        let world = single_uav_world();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gains = draw_link_gains(&scene.params, &world, &mut rng).unwrap();

        let a_uav = steering_vector(&scene.array, &world.bs, &world.uavs[0]).unwrap();
        let mut cols = DMatrix::zeros(16, 2);
        cols.set_column(1, &matched_beam(&a_uav, 2.5));
        let w = BeamformingMatrix::new(cols, 5.0);

        let sinr = comm_sinr(0, &scene, &world, &w, &gains).unwrap();
        let expect =
            (gains.comm[0] * array_response(&a_uav, &w.beam(1))).norm_sqr() / scene.params.noise_rx;
        assert_relative_eq!(sinr, expect, epsilon = 1e-12);
        // Matched beam: |aᴴw|² = M·p = 16·2.5.
        let d2 = world.uavs[0].norm_squared();
        let beta2 = 10.0 / 11.0 * scene.params.beta0_comm / d2;
        assert_relative_eq!(expect, beta2 * 40.0 / scene.params.noise_rx, epsilon = 1e-9);
    }

    #[test]
    fn comm_sinr_matches_term_by_term_oracle() {
        // Full two-UAV expansion on a 2-element array, every term written out
        // longhand with scalar complex arithmetic.
        let params = test_params();
        let scene = Scene { array: ArrayGeometry::half_wavelength(2, 1), params };
        let world = WorldState {
            bs: origin(),
            uavs: vec![Vector3::new(30.0, 10.0, 70.0), Vector3::new(30.0, -10.0, 70.0)],
            target: Vector3::new(60.0, 0.0, 60.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gains = draw_link_gains(&scene.params, &world, &mut rng).unwrap();

        // Arbitrary fixed beams.
        let mut cols = DMatrix::zeros(2, 3);
        cols[(0, 0)] = C64::new(1.0, 0.5);
        cols[(1, 0)] = C64::new(-0.3, 0.2);
        cols[(0, 1)] = C64::new(0.8, -0.1);
        cols[(1, 1)] = C64::new(0.2, 0.9);
        cols[(0, 2)] = C64::new(-0.5, 0.4);
        cols[(1, 2)] = C64::new(0.6, 0.1);
        let w = BeamformingMatrix::new(cols.clone(), 5.0);

        // Oracle: scalar recomputation, no shared helpers beyond steering.
        let steer = |p: &Vector3<f64>| {
            let d = p.norm();
            let phase = std::f64::consts::PI * p.x / d;
            [C64::new(1.0, 0.0), C64::new(phase.cos(), -phase.sin())]
        };
        let resp = |a: &[C64; 2], k: usize| a[0] * cols[(0, k)] + a[1] * cols[(1, k)];
        let a0 = steer(&world.uavs[0]);
        let a1 = steer(&world.uavs[1]);
        let at = steer(&world.target);
        let alpha = 0.9;
        for i in 0..2usize {
            let (a_own, a_other) = if i == 0 { (&a0, &a1) } else { (&a1, &a0) };
            let own_col = i + 1;
            let other_col = 2 - i;
            let num = (gains.comm[i] * resp(a_own, own_col)).norm_sqr();
            let mut den = (gains.comm[i] * resp(a_own, other_col)).norm_sqr();
            for k in 0..3 {
                den += alpha * alpha * (gains.uav_target[i] * resp(&at, k)).norm_sqr();
                den += alpha * alpha * (gains.uav_scatter[i][1 - i] * resp(a_other, k)).norm_sqr();
            }
            let expect = num / (den + scene.params.noise_rx);
            let got = comm_sinr(i, &scene, &world, &w, &gains).unwrap();
            assert_relative_eq!(got, expect, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn sensing_sinr_matches_term_by_term_oracle() {
        let params = test_params();
        let scene = Scene { array: ArrayGeometry::half_wavelength(2, 2), params };
        let world = WorldState {
            bs: origin(),
            uavs: vec![Vector3::new(30.0, 10.0, 70.0), Vector3::new(30.0, -10.0, 70.0)],
            target: Vector3::new(60.0, 0.0, 60.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gains = draw_link_gains(&scene.params, &world, &mut rng).unwrap();
        let a_t = steering_vector(&scene.array, &world.bs, &world.target).unwrap();
        let mut rng2 = ChaCha8Rng::seed_from_u64(4);
        let mut cols = DMatrix::zeros(4, 3);
        for k in 0..3 {
            for m in 0..4 {
                cols[(m, k)] = C64::new(rng2.gen_range(-1.0..1.0), rng2.gen_range(-1.0..1.0));
            }
        }
        let w = BeamformingMatrix::new(cols, 5.0);

        let alpha = scene.params.rcs_target;
        let scale = |echo: C64| echo.norm_sqr() * alpha * alpha;
        let r: Vec<C64> = (0..3).map(|k| a_t.dot(&w.beam(k))).collect();

        let bs_expect = scale(gains.bs_target) * r[0].norm_sqr()
            / (scale(gains.bs_target) * (r[1].norm_sqr() + r[2].norm_sqr())
                + scene.params.residual_bs
                + scene.params.noise_rx);
        assert_relative_eq!(
            sensing_sinr_bs(&scene, &world, &w, &gains).unwrap(),
            bs_expect,
            epsilon = 1e-12,
            max_relative = 1e-12
        );
        for i in 0..2 {
            let e = scale(gains.uav_target[i]) * r[0].norm_sqr()
                / (scale(gains.uav_target[i]) * (r[1].norm_sqr() + r[2].norm_sqr())
                    + scene.params.residual_uav
                    + scene.params.noise_rx);
            assert_relative_eq!(
                sensing_sinr_uav(i, &scene, &world, &w, &gains).unwrap(),
                e,
                epsilon = 1e-12,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn compute_sinrs_agrees_with_individual_calls() {
        let params = test_params();
        let scene = Scene { array: ArrayGeometry::half_wavelength(4, 4), params };
        let world = WorldState {
            bs: origin(),
            uavs: vec![Vector3::new(30.0, 10.0, 70.0), Vector3::new(30.0, -10.0, 70.0)],
            target: Vector3::new(60.0, 0.0, 60.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gains = draw_link_gains(&scene.params, &world, &mut rng).unwrap();
        let mut cols = DMatrix::zeros(16, 3);
        for k in 0..3 {
            for m in 0..16 {
                cols[(m, k)] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        let w = BeamformingMatrix::new(cols, 5.0);
        let report = compute_sinrs(&scene, &world, &w, &gains).unwrap();
        assert_relative_eq!(
            report.sense_bs,
            sensing_sinr_bs(&scene, &world, &w, &gains).unwrap(),
            max_relative = 1e-12
        );
        for i in 0..2 {
            assert_relative_eq!(
                report.comm[i],
                comm_sinr(i, &scene, &world, &w, &gains).unwrap(),
                max_relative = 1e-12
            );
            assert_relative_eq!(
                report.sense_uav[i],
                sensing_sinr_uav(i, &scene, &world, &w, &gains).unwrap(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn global_phase_rotation_leaves_sinrs_invariant() {
        let params = test_params();
        let scene = Scene { array: ArrayGeometry::half_wavelength(4, 4), params };
        let world = WorldState {
            bs: origin(),
            uavs: vec![Vector3::new(30.0, 10.0, 70.0), Vector3::new(30.0, -10.0, 70.0)],
            target: Vector3::new(60.0, 0.0, 60.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let gains = draw_link_gains(&scene.params, &world, &mut rng).unwrap();
        let mut cols = DMatrix::zeros(16, 3);
        for k in 0..3 {
            for m in 0..16 {
                cols[(m, k)] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        let base = compute_sinrs(
            &scene,
            &world,
            &BeamformingMatrix::new(cols.clone(), 5.0),
            &gains,
        )
        .unwrap();
        for phase in [0.3f64, 1.1, 2.9, -0.7] {
            let rot = C64::new(phase.cos(), phase.sin());
            let rotated = BeamformingMatrix::new(cols.map(|c| c * rot), 5.0);
            let r = compute_sinrs(&scene, &world, &rotated, &gains).unwrap();
            assert_relative_eq!(r.sense_bs, base.sense_bs, max_relative = 1e-10);
            for i in 0..2 {
                assert_relative_eq!(r.comm[i], base.comm[i], max_relative = 1e-10);
                assert_relative_eq!(r.sense_uav[i], base.sense_uav[i], max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn power_scaleup_strictly_improves_comm_sinr() {
        // Doubling transmit power doubles signal and interference but not
        // noise, so every SINR strictly increases while noise is nonzero.
        let params = test_params();
        let scene = Scene { array: ArrayGeometry::half_wavelength(4, 4), params };
        let world = WorldState {
            bs: origin(),
            uavs: vec![Vector3::new(30.0, 10.0, 70.0), Vector3::new(30.0, -10.0, 70.0)],
            target: Vector3::new(60.0, 0.0, 60.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let gains = draw_link_gains(&scene.params, &world, &mut rng).unwrap();
        let mut cols = DMatrix::zeros(16, 3);
        for k in 0..3 {
            for m in 0..16 {
                cols[(m, k)] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        let small = compute_sinrs(&scene, &world, &BeamformingMatrix::new(cols.clone(), 5.0), &gains)
            .unwrap();
        let scaled = cols.map(|c| c * C64::new(std::f64::consts::SQRT_2, 0.0));
        let big =
            compute_sinrs(&scene, &world, &BeamformingMatrix::new(scaled, 10.0), &gains).unwrap();
        for i in 0..2 {
            assert!(big.comm[i] > small.comm[i]);
            assert!(big.sense_uav[i] > small.sense_uav[i]);
        }
        assert!(big.sense_bs > small.sense_bs);
    }

    #[test]
    fn sinrs_are_nonnegative_and_finite() {
        let params = test_params();
        let scene = Scene { array: ArrayGeometry::half_wavelength(8, 8), params };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..25 {
            let world = WorldState {
                bs: origin(),
                uavs: vec![
                    Vector3::new(
                        rng.gen_range(-50.0..50.0),
                        rng.gen_range(-50.0..50.0),
                        rng.gen_range(30.0..90.0),
                    ),
                    Vector3::new(
                        rng.gen_range(-50.0..50.0),
                        rng.gen_range(-50.0..50.0),
                        rng.gen_range(30.0..90.0),
                    ),
                ],
                target: Vector3::new(60.0, 0.0, 60.0),
            };
            let gains = draw_link_gains(&scene.params, &world, &mut rng).unwrap();
            let mut cols = DMatrix::zeros(64, 3);
            for k in 0..3 {
                for m in 0..64 {
                    cols[(m, k)] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                }
            }
            let w = BeamformingMatrix::new(cols, 5.0);
            let r = compute_sinrs(&scene, &world, &w, &gains).unwrap();
            assert!(r.sense_bs.is_finite() && r.sense_bs >= 0.0);
            for i in 0..2 {
                assert!(r.comm[i].is_finite() && r.comm[i] >= 0.0);
                assert!(r.sense_uav[i].is_finite() && r.sense_uav[i] >= 0.0);
            }
        }
    }

    #[test]
    fn frozen_draws_reproduce_gains_exactly() {
        let params = test_params();
        let world = WorldState {
            bs: origin(),
            uavs: vec![Vector3::new(30.0, 10.0, 70.0), Vector3::new(30.0, -10.0, 70.0)],
            target: Vector3::new(60.0, 0.0, 60.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = ScatterDraws::sample(&params, 2, &mut rng);
        let a = link_gains(&params, &world, &draws).unwrap();
        let b = link_gains(&params, &world, &draws).unwrap();
        assert_eq!(a, b);
    }
}
