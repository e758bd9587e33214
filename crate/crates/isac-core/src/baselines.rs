//! Non-learning control baselines.
//!
//! * [`RandomPolicy`] samples every action component uniformly from its box.
//! * [`GaPolicy`] runs a small genetic search **per slot**: the slot's
//!   randomness is drawn once, candidate joint actions compete on the reward
//!   they would earn under that exact draw, and the winner is committed with
//!   the same draw.  This gives a myopic one-slot oracle that is much
//!   stronger than random but has no look-ahead.
//!
//! Both implement [`SlotPolicy`], one environment slot per call.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::env::{EnvError, IsacEnv, JointAction, StepOutcome};

/// A controller that advances the environment by exactly one slot.
pub trait SlotPolicy {
    fn step_slot(&mut self, env: &mut IsacEnv) -> Result<StepOutcome, EnvError>;
}

// ─── Random baseline ───────────────────────────────────────────────────────

/// Uniform random actions: each displacement component in `±max_speed`,
/// each raw beam coefficient in `±1`.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn sample_action(&mut self, env: &IsacEnv) -> JointAction {
        let cfg = env.config();
        let (_, bs_dim) = env.action_dims();
        let s = cfg.max_speed;
        JointAction {
            uav_deltas: (0..cfg.num_uavs)
                .map(|_| {
                    nalgebra::Vector3::new(
                        self.rng.gen_range(-s..=s),
                        self.rng.gen_range(-s..=s),
                        self.rng.gen_range(-s..=s),
                    )
                })
                .collect(),
            bs_beams: (0..bs_dim).map(|_| self.rng.gen_range(-1.0..=1.0)).collect(),
        }
    }
}

impl SlotPolicy for RandomPolicy {
    fn step_slot(&mut self, env: &mut IsacEnv) -> Result<StepOutcome, EnvError> {
        let action = self.sample_action(env);
        env.step(&action)
    }
}

// ─── Genetic search ────────────────────────────────────────────────────────

/// Knobs of the per-slot genetic search.
#[derive(Debug, Clone)]
pub struct GaParams {
    pub population: usize,
    pub generations: usize,
    /// Tournament size for parent selection.
    pub tournament: usize,
    pub crossover_prob: f64,
    /// Per-gene Gaussian mutation std as a fraction of the gene's range.
    pub mutation_std_frac: f64,
    /// Individuals copied unchanged into the next generation.
    pub elites: usize,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            population: 64,
            generations: 30,
            tournament: 3,
            crossover_prob: 0.7,
            mutation_std_frac: 0.1,
            elites: 2,
        }
    }
}

/// Maximizes `fitness` over the axis-aligned box `bounds` and returns the
/// best genome with its fitness.  Deterministic given the RNG state; ties
/// break by population index.
pub fn ga_maximize(
    bounds: &[(f64, f64)],
    params: &GaParams,
    rng: &mut ChaCha8Rng,
    mut fitness: impl FnMut(&[f64]) -> f64,
) -> (Vec<f64>, f64) {
    assert!(params.population >= 2 && params.elites < params.population);
    let dim = bounds.len();
    let sample_uniform = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        bounds
            .iter()
            .map(|&(lo, hi)| if lo < hi { rng.gen_range(lo..=hi) } else { lo })
            .collect()
    };
    let mut pop: Vec<Vec<f64>> = (0..params.population).map(|_| sample_uniform(rng)).collect();
    let mut fit: Vec<f64> = pop.iter().map(|g| fitness(g)).collect();

    for _ in 0..params.generations {
        // Rank by fitness, ties by index, so elitism is deterministic.
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| fit[b].total_cmp(&fit[a]).then(a.cmp(&b)));

        let mut next: Vec<Vec<f64>> =
            order[..params.elites].iter().map(|&i| pop[i].clone()).collect();
        let tournament = |rng: &mut ChaCha8Rng, fit: &[f64]| -> usize {
            let mut best = rng.gen_range(0..fit.len());
            for _ in 1..params.tournament {
                let c = rng.gen_range(0..fit.len());
                if fit[c] > fit[best] {
                    best = c;
                }
            }
            best
        };
        while next.len() < params.population {
            let a = tournament(rng, &fit);
            let b = tournament(rng, &fit);
            let mut child = if rng.gen_bool(params.crossover_prob) {
                (0..dim)
                    .map(|g| if rng.gen_bool(0.5) { pop[a][g] } else { pop[b][g] })
                    .collect::<Vec<f64>>()
            } else {
                pop[a].clone()
            };
            for (g, &(lo, hi)) in child.iter_mut().zip(bounds) {
                let z: f64 = rng.sample(StandardNormal);
                *g = (*g + z * params.mutation_std_frac * (hi - lo)).clamp(lo, hi);
            }
            next.push(child);
        }
        // Elites keep their scores; only fresh individuals are re-evaluated.
        let mut next_fit: Vec<f64> = order[..params.elites].iter().map(|&i| fit[i]).collect();
        next_fit.extend(next[params.elites..].iter().map(|g| fitness(g)));
        pop = next;
        fit = next_fit;
    }

    let best = (0..pop.len()).max_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(b.cmp(&a))).unwrap();
    (pop[best].clone(), fit[best])
}

/// Per-slot genetic search over the joint action.
pub struct GaPolicy {
    pub params: GaParams,
    rng: ChaCha8Rng,
}

impl GaPolicy {
    pub fn new(seed: u64) -> Self {
        Self::with_params(seed, GaParams::default())
    }

    pub fn with_params(seed: u64, params: GaParams) -> Self {
        Self { params, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn decode(genome: &[f64], num_uavs: usize) -> JointAction {
        JointAction {
            uav_deltas: (0..num_uavs)
                .map(|i| {
                    nalgebra::Vector3::new(genome[3 * i], genome[3 * i + 1], genome[3 * i + 2])
                })
                .collect(),
            bs_beams: genome[3 * num_uavs..].to_vec(),
        }
    }
}

impl SlotPolicy for GaPolicy {
    fn step_slot(&mut self, env: &mut IsacEnv) -> Result<StepOutcome, EnvError> {
        let draw = env.draw_slot_randomness();
        let cfg = env.config();
        let n = cfg.num_uavs;
        let (_, bs_dim) = env.action_dims();
        let mut bounds = vec![(-cfg.max_speed, cfg.max_speed); 3 * n];
        bounds.extend(std::iter::repeat((-1.0, 1.0)).take(bs_dim));
        let (best, _) = ga_maximize(&bounds, &self.params, &mut self.rng, |genome| {
            env.evaluate_candidate(&Self::decode(genome, n), &draw)
                .unwrap_or(f64::NEG_INFINITY)
        });
        env.step_with_draw(&Self::decode(&best, n), &draw)
    }
}

// ─── Tests ─────────────────────────────────────────────────────────────────
