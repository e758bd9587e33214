//! Deterministic fan-out of one master seed into independent named streams.
//!
//! Every source of randomness in a run (per-worker environments, per-worker
//! action sampling, trainer-side shuffles, baseline searches) draws from its
//! own stream so that results do not depend on scheduling order.  A stream is
//! addressed by a `(domain, index)` pair; the expansion rule is fixed:
//!
//! ```text
//! seed(domain, index) = splitmix64(splitmix64(master ^ GOLDEN * domain) ^ index)
//! ```
//!
//! where `splitmix64` is the finaliser of the SplitMix64 generator and
//! `GOLDEN` is its increment constant.  Changing any of master seed, domain,
//! or index yields an unrelated stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream namespaces.  The numeric values are part of the on-disk
/// reproducibility contract — do not reorder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Environment physics (channel draws, process/measurement noise).
    Env = 1,
    /// Policy action sampling during collection.
    Policy = 2,
    /// Trainer-side shuffles (agent permutations) and parameter init.
    Trainer = 3,
    /// Baseline policies (random boxes, genetic search).
    Baseline = 4,
    /// Evaluation episodes run after training.
    Eval = 5,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Expands a master seed into independent per-purpose RNG streams.
#[derive(Debug, Clone, Copy)]
pub struct SeedSplitter {
    master: u64,
}

impl SeedSplitter {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Raw 64-bit seed material for `(domain, index)`.
    pub fn seed(&self, domain: Domain, index: u64) -> u64 {
        let d = splitmix64(self.master ^ GOLDEN.wrapping_mul(domain as u64));
        splitmix64(d ^ index)
    }

    /// A ready-to-use RNG stream for `(domain, index)`.
    pub fn stream(&self, domain: Domain, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed(domain, index))
    }
}
