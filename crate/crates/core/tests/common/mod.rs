#![allow(dead_code)]

use lctd_core::categorical::Segment;
use lctd_core::mdp::make_experiment_mdp;
use lctd_core::{CategoricalGrid, FeatureMap, GeneralMeasure, MrpModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn model(seed: u64, s: usize, d: usize, gamma: f64, levels: usize) -> (MrpModel, FeatureMap) {
    make_experiment_mdp(seed, s, d, gamma, levels).expect("experiment model")
}

/// Three-point Gauss–Legendre nodes and weights on [-1, 1].
const GL3: [(f64, f64); 3] = [(-0.774_596_669_241_483_4, 5.0 / 9.0), (0.0, 8.0 / 9.0), (0.774_596_669_241_483_4, 5.0 / 9.0)];

/// Quadrature nodes and weights on [lo, hi] split at `breaks`, exact for
/// piecewise polynomials of degree ≤ 5 between breakpoints.
pub fn quadrature(lo: f64, hi: f64, breaks: &[f64], pieces_per_interval: usize) -> Vec<(f64, f64)> {
    let mut knots: Vec<f64> = breaks.iter().copied().filter(|x| *x > lo && *x < hi).collect();
    knots.push(lo);
    knots.push(hi);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let mut out = Vec::new();
    for w in knots.windows(2) {
        let h = (w[1] - w[0]) / pieces_per_interval as f64;
        for p in 0..pieces_per_interval {
            let a = w[0] + p as f64 * h;
            for &(x, wt) in &GL3 {
                out.push((a + 0.5 * h * (x + 1.0), 0.5 * h * wt));
            }
        }
    }
    out
}

/// CDF of a general measure evaluated directly from its atoms and segments.
pub fn general_cdf(nu: &GeneralMeasure, x: f64) -> f64 {
    let mut f = 0.0;
    for &(loc, m) in nu.atoms() {
        if loc <= x {
            f += m;
        }
    }
    for s in nu.segments() {
        if x >= s.right {
            f += s.mass;
        } else if x > s.left {
            f += s.mass * (x - s.left) / (s.right - s.left);
        }
    }
    f
}

/// Step CDF of a categorical measure with masses `full` (length K+1).
pub fn step_cdf(full: &[f64], grid: &CategoricalGrid, x: f64) -> f64 {
    let mut f = 0.0;
    for (k, &p) in full.iter().enumerate() {
        if grid.x(k) <= x {
            f += p;
        }
    }
    f
}

pub fn breakpoints(nu: &GeneralMeasure, grid: &CategoricalGrid) -> Vec<f64> {
    let mut b: Vec<f64> = (0..=grid.k()).map(|k| grid.x(k)).collect();
    b.extend(nu.atoms().iter().map(|a| a.0));
    for s in nu.segments() {
        b.push(s.left);
        b.push(s.right);
    }
    b
}

/// A random measure on [0, x_max] with 1..=4 atoms and 0..=2 segments.
pub fn random_measure(rng: &mut ChaCha8Rng, x_max: f64) -> GeneralMeasure {
    let na = rng.random_range(1..=4usize);
    let ns = rng.random_range(0..=2usize);
    let raw: Vec<f64> = (0..na + ns).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let atoms = (0..na).map(|i| (rng.random_range(0.0..=x_max), raw[i] / total)).collect();
    let segments = (0..ns)
        .map(|i| {
            let a: f64 = rng.random_range(0.0..=x_max);
            let b: f64 = rng.random_range(0.0..=x_max);
            Segment { left: a.min(b), right: a.max(b), mass: raw[na + i] / total }
        })
        .collect();
    GeneralMeasure::new(atoms, segments).expect("masses sum to one")
}
