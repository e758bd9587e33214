//! Decoding the beamforming action: Kronecker factors → QR → power assembly.
//!
//! The policy emits a flat real vector.  In the full pipeline each beam is
//! parameterised as a sum of `r` Kronecker products of a length-`nx` and a
//! length-`ny` complex factor — matching the x/y separability of the planar
//! array — which cuts the action dimension from `2·nx·ny·(N+1)` to
//! `2·r·(nx+ny)·(N+1)`.  The reconstructed columns are then orthonormalised
//! by a QR factorisation (modified Gram-Schmidt with re-orthogonalisation,
//! diagonal phase fixed real-nonnegative) and scaled so the total transmit
//! power meets the budget exactly.
//!
//! Both stages are individually optional so ablations can run: without the
//! Kronecker stage the action carries the full weight matrix; without the QR
//! stage the reconstructed columns are used as-is, with only the final
//! global power rescale applied.

use crate::channel::{BeamformingMatrix, C64};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BeamError {
    #[error("raw action has length {got}, expected {expected}")]
    BadLength { expected: usize, got: usize },
    #[error("inconsistent factor dimensions")]
    DimensionMismatch,
}

/// Rank-`r` Kronecker factorisation of each beam.
///
/// `factors[k][j] = (u, v)` with `u ∈ ℂ^nx`, `v ∈ ℂ^ny`; beam `k` is
/// `Σ_j u_j ⊗ v_j`, flattened so entry `(mx, my)` sits at `mx·ny + my`.
#[derive(Debug, Clone, PartialEq)]
pub struct KroneckerFactors {
    pub nx: usize,
    pub ny: usize,
    factors: Vec<Vec<(DVector<C64>, DVector<C64>)>>,
}

impl KroneckerFactors {
    /// Real parameter count of the encoding: `2·r·(nx+ny)·beams`.
    pub fn raw_len(rank: usize, nx: usize, ny: usize, num_beams: usize) -> usize {
        2 * rank * (nx + ny) * num_beams
    }

    /// Parses the flat policy output.  Layout per beam, per rank pair:
    /// `[Re u (nx) | Im u (nx) | Re v (ny) | Im v (ny)]`.
    pub fn from_raw(
        raw: &[f64],
        rank: usize,
        nx: usize,
        ny: usize,
        num_beams: usize,
    ) -> Result<Self, BeamError> {
        let expected = Self::raw_len(rank, nx, ny, num_beams);
        if raw.len() != expected {
            return Err(BeamError::BadLength { expected, got: raw.len() });
        }
        let mut it = raw.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { (0..n).map(|_| it.next().unwrap()).collect() };
        let mut factors = Vec::with_capacity(num_beams);
        for _ in 0..num_beams {
            let mut pairs = Vec::with_capacity(rank);
            for _ in 0..rank {
                let ur = take(nx);
                let ui = take(nx);
                let vr = take(ny);
                let vi = take(ny);
                let u = DVector::from_iterator(nx, ur.iter().zip(&ui).map(|(&r, &i)| C64::new(r, i)));
                let v = DVector::from_iterator(ny, vr.iter().zip(&vi).map(|(&r, &i)| C64::new(r, i)));
                pairs.push((u, v));
            }
            factors.push(pairs);
        }
        Ok(Self { nx, ny, factors })
    }

    pub fn from_parts(
        nx: usize,
        ny: usize,
        factors: Vec<Vec<(DVector<C64>, DVector<C64>)>>,
    ) -> Result<Self, BeamError> {
        for pairs in &factors {
            for (u, v) in pairs {
                if u.len() != nx || v.len() != ny {
                    return Err(BeamError::DimensionMismatch);
                }
            }
        }
        Ok(Self { nx, ny, factors })
    }

    pub fn num_beams(&self) -> usize {
        self.factors.len()
    }

    pub fn rank(&self) -> usize {
        self.factors.first().map_or(0, Vec::len)
    }
}

/// Rebuilds the raw `M × beams` weight matrix from its Kronecker factors.
pub fn kron_reconstruct(f: &KroneckerFactors) -> DMatrix<C64> {
    let m = f.nx * f.ny;
    let mut w = DMatrix::zeros(m, f.num_beams());
    for (k, pairs) in f.factors.iter().enumerate() {
        for (u, v) in pairs {
            for mx in 0..f.nx {
                for my in 0..f.ny {
                    w[(mx * f.ny + my, k)] += u[mx] * v[my];
                }
            }
        }
    }
    w
}

/// Thin QR factors of a raw weight matrix: `w = q · r` with orthonormal
/// columns in `q`, upper-triangular `r` whose diagonal is real nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct QrFactors {
    pub q: DMatrix<C64>,
    pub r: DMatrix<C64>,
    /// Columns that were (numerically) dependent on earlier ones and were
    /// replaced with random orthogonal-complement directions.
    pub deficient: Vec<usize>,
}

/// Diagonal value assigned to replaced rank-deficient columns; effectively
/// zero power before the global rescale.
const DEFICIENT_DIAG: f64 = 1e-12;

/// Modified Gram-Schmidt with one re-orthogonalisation pass.
///
/// Rank-deficient columns are replaced by random directions drawn from the
/// orthogonal complement of the earlier columns, with `R_kk` set to
/// [`DEFICIENT_DIAG`] so they carry no weight at assembly.
pub fn qr_orthonormalize(w: &DMatrix<C64>, rng: &mut impl Rng) -> QrFactors {
    let (m, n) = (w.nrows(), w.ncols());
    assert!(n <= m, "more beams than array elements");
    let mut q = DMatrix::<C64>::zeros(m, n);
    let mut r = DMatrix::<C64>::zeros(n, n);
    let mut deficient = Vec::new();
    for k in 0..n {
        let mut v: DVector<C64> = w.column(k).into_owned();
        let col_norm = v.norm();
        // Two projection passes: the second repairs the precision lost when
        // the column is nearly parallel to earlier ones.
        for _pass in 0..2 {
            for i in 0..k {
                let qi = q.column(i);
                let proj: C64 = qi.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
                r[(i, k)] += proj;
                for row in 0..m {
                    v[row] -= proj * q[(row, i)];
                }
            }
        }
        let norm = v.norm();
        if norm <= 1e-10 * col_norm.max(1e-30) {
            deficient.push(k);
            let dir = random_complement_direction(&q, k, m, rng);
            q.set_column(k, &dir);
            // Remove the projections recorded above: the replacement carries
            // no component of the original column.
            for i in 0..k {
                r[(i, k)] = C64::new(0.0, 0.0);
            }
            r[(k, k)] = C64::new(DEFICIENT_DIAG, 0.0);
        } else {
            r[(k, k)] = C64::new(norm, 0.0);
            q.set_column(k, &(v / C64::new(norm, 0.0)));
        }
    }
    QrFactors { q, r, deficient }
}

/// A random unit vector orthogonal to the first `k` columns of `q`.
fn random_complement_direction(
    q: &DMatrix<C64>,
    k: usize,
    m: usize,
    rng: &mut impl Rng,
) -> DVector<C64> {
    loop {
        let mut v = DVector::from_fn(m, |_, _| {
            C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        for _pass in 0..2 {
            for i in 0..k {
                let qi = q.column(i);
                let proj: C64 = qi.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
                for row in 0..m {
                    v[row] -= proj * q[(row, i)];
                }
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            return v / C64::new(norm, 0.0);
        }
    }
}

/// Builds the final beams from QR factors: beam `k` is `q_k · R_kk`, then a
/// single global rescale pins the total power to the budget exactly.
pub fn assemble_beams(qr: &QrFactors, power: f64) -> BeamformingMatrix {
    let (m, n) = (qr.q.nrows(), qr.q.ncols());
    let mut cols = DMatrix::zeros(m, n);
    for k in 0..n {
        let gain = qr.r[(k, k)].norm();
        for row in 0..m {
            cols[(row, k)] = qr.q[(row, k)] * gain;
        }
    }
    rescale_to_power(cols, power)
}

/// Scales a weight matrix so `Σ_k ‖w_k‖²` equals `power` exactly.  A zero
/// matrix falls back to equal power on the standard basis directions.
pub fn rescale_to_power(mut cols: DMatrix<C64>, power: f64) -> BeamformingMatrix {
    let total: f64 = cols.iter().map(|c| c.norm_sqr()).sum();
    if total <= 0.0 {
        let (m, n) = (cols.nrows(), cols.ncols());
        let p = (power / n as f64).sqrt();
        cols.fill(C64::new(0.0, 0.0));
        for k in 0..n {
            cols[(k % m, k)] = C64::new(p, 0.0);
        }
        return BeamformingMatrix::new(cols, power);
    }
    let scale = (power / total).sqrt();
    for c in cols.iter_mut() {
        *c *= scale;
    }
    BeamformingMatrix::new(cols, power)
}

/// Mechanism switches plus dimensions: everything needed to map a raw policy
/// vector to a feasible beamforming matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamDecoder {
    pub nx: usize,
    pub ny: usize,
    pub rank: usize,
    /// Total beams `N + 1` (sensing + one per UAV).
    pub num_beams: usize,
    pub power: f64,
    pub use_kron: bool,
    pub use_qr: bool,
}

impl BeamDecoder {
    /// Length of the raw action this decoder expects.
    pub fn action_dim(&self) -> usize {
        if self.use_kron {
            KroneckerFactors::raw_len(self.rank, self.nx, self.ny, self.num_beams)
        } else {
            2 * self.nx * self.ny * self.num_beams
        }
    }

    /// Full decode: (Kronecker | direct) → (QR | passthrough) → power.
    pub fn decode(&self, raw: &[f64], rng: &mut impl Rng) -> Result<BeamformingMatrix, BeamError> {
        let w_raw = if self.use_kron {
            let f = KroneckerFactors::from_raw(raw, self.rank, self.nx, self.ny, self.num_beams)?;
            kron_reconstruct(&f)
        } else {
            let m = self.nx * self.ny;
            let expected = 2 * m * self.num_beams;
            if raw.len() != expected {
                return Err(BeamError::BadLength { expected, got: raw.len() });
            }
            // Layout per beam: [Re (M) | Im (M)].
            DMatrix::from_fn(m, self.num_beams, |row, k| {
                C64::new(raw[k * 2 * m + row], raw[k * 2 * m + m + row])
            })
        };
        Ok(if self.use_qr {
            assemble_beams(&qr_orthonormalize(&w_raw, rng), self.power)
        } else {
            rescale_to_power(w_raw, self.power)
        })
    }
}

// ─── Tests ─────────────────────────────────────────────────────────────────
