//! Per-sensor error bounds from sensing SINRs and their fusion.
//!
//! Each sensor (the BS plus every UAV) observes the target in spherical
//! coordinates: range, polar angle, azimuth, and radial velocity.  The
//! achievable estimation variance per component scales inversely with the
//! squared sensing SINR; range additionally improves with bandwidth.  The
//! `N + 1` per-sensor bounds are combined by covariance intersection — a
//! weighted harmonic mean per component — which is consistent even though the
//! sensors share the same transmit waveform and are therefore correlated.
//!
//! Degenerate SINRs (zero, or so small the bound overflows) are mapped to a
//! large but finite variance cap chosen by the caller so that downstream
//! matrix work stays finite.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("negative SINR {0} has no associated bound")]
    NegativeSinr(f64),
    #[error("non-informative sensor set: no positive weight on a finite variance")]
    NonInformative,
    #[error("fusion weights must be nonnegative and sum to 1 (sum was {0})")]
    BadWeights(f64),
    #[error("dimension mismatch: {weights} weights for {sensors} sensors")]
    DimensionMismatch { weights: usize, sensors: usize },
}

/// Scale constants of the per-component bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrbConstants {
    /// Range constant; divided by bandwidth as well as squared SINR.
    pub kappa_d: f64,
    /// Polar-angle constant.
    pub kappa_theta: f64,
    /// Azimuth constant.
    pub kappa_phi: f64,
    /// Radial-velocity constant.
    pub kappa_v: f64,
    /// Signal bandwidth, Hz.
    pub bandwidth: f64,
}

/// Error-bound variances of one sensor, in measurement order
/// (range m², polar rad², azimuth rad², radial velocity (m/s)²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrbVector {
    pub var_d: f64,
    pub var_theta: f64,
    pub var_phi: f64,
    pub var_v: f64,
}

impl CrbVector {
    pub fn as_array(&self) -> [f64; 4] {
        [self.var_d, self.var_theta, self.var_phi, self.var_v]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { var_d: a[0], var_theta: a[1], var_phi: a[2], var_v: a[3] }
    }

    /// All four variances set to the cap (a fully non-informative sensor).
    pub fn capped(cap: f64) -> Self {
        Self { var_d: cap, var_theta: cap, var_phi: cap, var_v: cap }
    }
}

/// Per-component variance bound of one sensor at the given sensing SINR.
///
/// Default scaling is `κ / SINR²` (range: `κ_d / (SINR² · b)`).  The
/// `linear_sinr` variant divides by the SINR itself instead, for studying
/// the alternative scaling; it changes magnitudes, not structure.
///
/// A nonpositive SINR is an error for this low-level op; callers that must
/// stay total apply [`crb_from_sinr_capped`].
pub fn crb_from_sinr(sinr: f64, consts: &CrbConstants) -> Result<CrbVector, FusionError> {
    crb_from_sinr_with(sinr, consts, false)
}

pub fn crb_from_sinr_with(
    sinr: f64,
    consts: &CrbConstants,
    linear_sinr: bool,
) -> Result<CrbVector, FusionError> {
    if sinr <= 0.0 {
        return Err(FusionError::NegativeSinr(sinr));
    }
    let denom = if linear_sinr { sinr } else { sinr * sinr };
    Ok(CrbVector {
        var_d: consts.kappa_d / (denom * consts.bandwidth),
        var_theta: consts.kappa_theta / denom,
        var_phi: consts.kappa_phi / denom,
        var_v: consts.kappa_v / denom,
    })
}

/// Total version of [`crb_from_sinr`]: degenerate or overflowing bounds are
/// clamped to `cap` per component, keeping downstream algebra finite.
pub fn crb_from_sinr_capped(
    sinr: f64,
    consts: &CrbConstants,
    linear_sinr: bool,
    cap: f64,
) -> CrbVector {
    match crb_from_sinr_with(sinr, consts, linear_sinr) {
        Err(_) => CrbVector::capped(cap),
        Ok(v) => {
            let clamp = |x: f64| if x.is_finite() && x < cap { x } else { cap };
            CrbVector {
                var_d: clamp(v.var_d),
                var_theta: clamp(v.var_theta),
                var_phi: clamp(v.var_phi),
                var_v: clamp(v.var_v),
            }
        }
    }
}

/// Covariance-intersection weights over `N + 1` sensors.
///
/// Validated at construction: nonnegative, summing to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    omega: Vec<f64>,
}

impl FusionWeights {
    pub fn new(omega: Vec<f64>) -> Result<Self, FusionError> {
        let sum: f64 = omega.iter().sum();
        if omega.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(FusionError::BadWeights(sum));
        }
        Ok(Self { omega })
    }

    /// Uniform `1/(N+1)` weights over the BS plus `n_uavs` UAVs.
    pub fn uniform(n_uavs: usize) -> Self {
        let m = n_uavs + 1;
        Self { omega: vec![1.0 / m as f64; m] }
    }

    /// All weight on the BS (index 0): fusion disabled.
    pub fn bs_only(n_uavs: usize) -> Self {
        let mut omega = vec![0.0; n_uavs + 1];
        omega[0] = 1.0;
        Self { omega }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.omega
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }
}

/// Covariance-intersection fusion: per component,
/// `σ̄² = (Σ_n ω_n / σ²_n)⁻¹`.
///
/// Sensor order must match the weight order (BS first, then UAVs).
pub fn ci_fuse(bounds: &[CrbVector], weights: &FusionWeights) -> Result<CrbVector, FusionError> {
    if bounds.len() != weights.len() {
        return Err(FusionError::DimensionMismatch {
            weights: weights.len(),
            sensors: bounds.len(),
        });
    }
    let mut fused = [0.0f64; 4];
    for (c, f) in fused.iter_mut().enumerate() {
        let info: f64 = bounds
            .iter()
            .zip(weights.as_slice())
            .map(|(b, &w)| {
                let v = b.as_array()[c];
                if v > 0.0 && v.is_finite() {
                    w / v
                } else {
                    0.0
                }
            })
            .sum();
        if info <= 0.0 {
            return Err(FusionError::NonInformative);
        }
        *f = 1.0 / info;
    }
    Ok(CrbVector::from_array(fused))
}

/// Diagonal 4×4 measurement covariance built from a fused bound.
pub fn measurement_covariance(fused: &CrbVector) -> Matrix4<f64> {
    Matrix4::from_diagonal(&nalgebra::Vector4::new(
        fused.var_d,
        fused.var_theta,
        fused.var_phi,
        fused.var_v,
    ))
}
