//! Multi-objective tree-structured Parzen estimator over log-stiffness coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{crowding_distance, nondominated_ranks, Candidate};
use crate::error::Result;
use crate::objectives::{ObjectivePair, StiffnessSchedule, DEFAULT_PHASES, K_MAX, K_MIN};

const PRIMES: [u32; 40] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107,
    109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173,
];

/// Radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = base as u64;
    let (mut inv, mut f) = (0.0, 1.0 / base as f64);
    while index > 0 {
        inv += (index % b) as f64 * f;
        index /= b;
        f /= base as f64;
    }
    inv
}

/// Halton points in `[0, 1)^dims`, rotated by a seeded random shift.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftedHalton {
    shift: Vec<f64>,
}

impl ShiftedHalton {
    pub fn new(dims: usize, seed: u64) -> Self {
        assert!(dims <= PRIMES.len(), "at most {} dimensions", PRIMES.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            shift: (0..dims).map(|_| rng.random::<f64>()).collect(),
        }
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        // index + 1 skips the all-zero origin of the unshifted sequence
        self.shift
            .iter()
            .zip(PRIMES)
            .map(|(s, p)| (radical_inverse(index as u64 + 1, p) + s).fract())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotpeConfig {
    pub phases: usize,
    pub k_min: f64,
    pub k_max: f64,
    /// Space-filling suggestions before the density model takes over.
    pub n_init: usize,
    /// Fraction of the archive treated as good.
    pub gamma: f64,
    /// Draws from the good density per suggestion.
    pub n_candidates: usize,
}

impl Default for MotpeConfig {
    fn default() -> Self {
        Self {
            phases: DEFAULT_PHASES,
            k_min: K_MIN,
            k_max: K_MAX,
            n_init: 16,
            gamma: 0.25,
            n_candidates: 64,
        }
    }
}

impl MotpeConfig {
    pub fn dims(&self) -> usize {
        2 * self.phases
    }

    fn log_bounds(&self) -> (f64, f64) {
        (self.k_min.ln(), self.k_max.ln())
    }

    /// Maps a unit-cube point onto log-stiffness coordinates.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        let (lo, hi) = self.log_bounds();
        u.iter().map(|x| lo + (hi - lo) * x).collect()
    }
}

/// Per-dimension Gaussian mixture with a uniform prior component.
struct Parzen {
    centers: Vec<Vec<f64>>,
    bandwidth: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl Parzen {
    fn fit(points: &[Vec<f64>], lo: f64, hi: f64) -> Self {
        let dims = points.first().map_or(0, Vec::len);
        let n = points.len().max(1) as f64;
        let span = hi - lo;
        let bandwidth = (0..dims)
            .map(|d| {
                let mean = points.iter().map(|p| p[d]).sum::<f64>() / n;
                let var = points.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / n;
                (var.sqrt() * n.powf(-0.2)).clamp(0.05 * span, span)
            })
            .collect();
        Self {
            centers: points.to_vec(),
            bandwidth,
            lo,
            hi,
        }
    }

    /// Log density of one coordinate: mixture of the kernels and one uniform prior component.
    fn log_density(&self, d: usize, x: f64) -> f64 {
        let w = 1.0 / (self.centers.len() + 1) as f64;
        let bw = self.bandwidth[d];
        let norm = 1.0 / (bw * (2.0 * std::f64::consts::PI).sqrt());
        let kernels: f64 = self.centers.iter().map(|c| (-0.5 * ((x - c[d]) / bw).powi(2)).exp()).sum::<f64>() * norm;
        (w * (kernels + 1.0 / (self.hi - self.lo))).ln()
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let dims = self.bandwidth.len();
        let pick = rng.random_range(0..=self.centers.len());
        (0..dims)
            .map(|d| {
                if pick == self.centers.len() {
                    rng.random_range(self.lo..=self.hi)
                } else {
                    let z: f64 = rng.sample(StandardNormal);
                    (self.centers[pick][d] + self.bandwidth[d] * z).clamp(self.lo, self.hi)
                }
            })
            .collect()
    }
}

/// Indices of the good set: the best `ceil(γ n)` candidates by non-domination rank, ties in the
/// boundary rank resolved by larger crowding distance, then by evaluation order.
pub fn good_set(objectives: &[ObjectivePair<f64>], gamma: f64) -> Vec<usize> {
    let n = objectives.len();
    let want = ((gamma * n as f64).ceil() as usize).clamp(1, n);
    let ranks = nondominated_ranks(objectives);
    let mut good = Vec::with_capacity(want);
    let mut rank = 0;
    while good.len() < want {
        let members: Vec<usize> = (0..n).filter(|&i| ranks[i] == rank).collect();
        if good.len() + members.len() <= want {
            good.extend(members);
        } else {
            let objs: Vec<ObjectivePair<f64>> = members.iter().map(|&i| objectives[i]).collect();
            let crowd = crowding_distance(&objs);
            let mut order: Vec<usize> = (0..members.len()).collect();
            order.sort_by(|&a, &b| crowd[b].total_cmp(&crowd[a]).then(a.cmp(&b)));
            good.extend(order.into_iter().take(want - good.len()).map(|k| members[k]));
        }
        rank += 1;
    }
    good.sort_unstable();
    good
}

/// Proposes the next schedule given the archive so far.
#[derive(Clone, Debug)]
pub struct Motpe {
    config: MotpeConfig,
    halton: ShiftedHalton,
}

impl Motpe {
    pub fn new(config: MotpeConfig, seed: u64) -> Self {
        let halton = ShiftedHalton::new(config.dims(), seed ^ 0x4a17_0a11);
        Self { config, halton }
    }

    pub fn config(&self) -> &MotpeConfig {
        &self.config
    }

    /// Log-stiffness coordinates of the `index`-th space-filling point.
    pub fn initial_point(&self, index: usize) -> Vec<f64> {
        self.config.from_unit(&self.halton.point(index))
    }

    /// Next suggestion in log-stiffness coordinates. `pending` counts suggestions already handed
    /// out for the current batch, so initial-design points are not repeated.
    pub fn suggest_log(&self, archive: &[Candidate], pending: usize, rng: &mut impl Rng) -> Vec<f64> {
        let n = archive.len();
        if n + pending < self.config.n_init || n < 2 {
            return self.initial_point(n + pending);
        }
        let (lo, hi) = self.config.log_bounds();
        let objectives: Vec<ObjectivePair<f64>> = archive.iter().map(|c| c.objectives).collect();
        let good = good_set(&objectives, self.config.gamma);
        let mut is_good = vec![false; n];
        good.iter().for_each(|&i| is_good[i] = true);
        let coords: Vec<Vec<f64>> = archive.iter().map(|c| c.schedule.to_log_vector()).collect();
        let (gp, bp): (Vec<_>, Vec<_>) = (0..n).partition(|&i| is_good[i]);
        if bp.is_empty() {
            return self.initial_point(n + pending);
        }
        let pick = |idx: Vec<usize>| idx.into_iter().map(|i| coords[i].clone()).collect::<Vec<_>>();
        let l = Parzen::fit(&pick(gp), lo, hi);
        let g = Parzen::fit(&pick(bp), lo, hi);
        let dims = self.config.dims();
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for _ in 0..self.config.n_candidates.max(1) {
            let x = l.sample(rng);
            let score: f64 = (0..dims).map(|d| l.log_density(d, x[d]) - g.log_density(d, x[d])).sum();
            if score > best.0 {
                best = (score, x);
            }
        }
        best.1
    }

    pub fn suggest(&self, archive: &[Candidate], pending: usize, horizon: usize, rng: &mut impl Rng) -> Result<StiffnessSchedule<f64>> {
        let x = self.suggest_log(archive, pending, rng);
        let (lo, hi) = self.config.log_bounds();
        let clamped: Vec<f64> = x.iter().map(|v| v.clamp(lo, hi)).collect();
        let s = StiffnessSchedule::<f64>::from_log_vector(&clamped, horizon)?;
        // exp(ln k) can land an ulp outside the bounds
        let phases = s
            .phases()
            .iter()
            .map(|k| crate::num::Vec2::new(k.x.clamp(self.config.k_min, self.config.k_max), k.z.clamp(self.config.k_min, self.config.k_max)))
            .collect();
        StiffnessSchedule::new(phases, horizon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radical_inverse_base_two() {
        let v: Vec<f64> = (1..5).map(|i| radical_inverse(i, 2)).collect();
        assert_eq!(v, vec![0.5, 0.25, 0.75, 0.125]);
    }

    #[test]
    fn halton_points_in_unit_cube() {
        let h = ShiftedHalton::new(20, 3);
        for i in 0..64 {
            assert!(h.point(i).iter().all(|x| (0.0..1.0).contains(x)));
        }
        assert_ne!(h.point(0), h.point(1));
    }

    #[test]
    fn good_set_size_and_rank_priority() {
        let objs: Vec<ObjectivePair<f64>> = [(1.0, 5.0), (5.0, 1.0), (3.0, 3.0), (6.0, 6.0), (7.0, 7.0), (8.0, 8.0), (9.0, 9.0), (10.0, 10.0)]
            .iter()
            .map(|&(a, b)| ObjectivePair::new(a, b))
            .collect();
        // ceil(0.25 * 8) = 2 of the three first-rank points; the middle one is the most crowded
        assert_eq!(good_set(&objs, 0.25), vec![0, 1]);
        assert_eq!(good_set(&objs, 0.5), vec![0, 1, 2, 3]);
    }
}
