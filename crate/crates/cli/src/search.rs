//! Largest stable step size by bisection in log α.
//!
//! Each probe runs every seed; α counts as converged when a strict
//! majority of seeds reach ε within T. Runs that neither converge nor
//! diverge count as not converged.

use anyhow::{bail, Result};
use lctd_core::{Algorithm, CategoricalGrid, Reference};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::experiment::{learner_config, probe_run, stream_id, Problem, Verdict};

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub k: usize,
    pub alpha: f64,
    pub seed: u64,
    pub verdict: Verdict,
    /// Tail-averaged scaled loss at the last logged checkpoint.
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSearchResult {
    pub algorithm: Algorithm,
    pub k: usize,
    /// Largest α observed to converge.
    pub lower: f64,
    /// Smallest α observed not to converge (∞ if every probe converged at t = 0).
    pub upper: f64,
    /// Median iterations to ε at α = 0.2·lower, if a majority converged.
    pub iterations_at_fifth: Option<usize>,
    pub probes: Vec<Probe>,
}

impl AlphaSearchResult {
    /// Geometric midpoint of the bracket.
    pub fn alpha_inf(&self) -> f64 {
        if self.upper.is_finite() {
            (self.lower * self.upper).sqrt()
        } else {
            self.lower
        }
    }

    /// Every probe strictly below `lower` converged by majority and every
    /// probe at or above `upper` did not.
    pub fn is_monotone(&self) -> bool {
        let mut alphas: Vec<f64> = self.probes.iter().map(|p| p.alpha).collect();
        alphas.sort_by(f64::total_cmp);
        alphas.dedup();
        alphas.iter().all(|&a| {
            let ok = majority(self.probes.iter().filter(|p| p.alpha == a).map(|p| p.verdict));
            if a <= self.lower {
                ok
            } else if a >= self.upper {
                !ok
            } else {
                true
            }
        })
    }
}

fn majority(verdicts: impl Iterator<Item = Verdict>) -> bool {
    let (mut yes, mut n) = (0, 0);
    for v in verdicts {
        n += 1;
        yes += v.converged() as usize;
    }
    2 * yes > n
}

struct Searcher<'a> {
    cfg: &'a ExperimentConfig,
    problem: &'a Problem,
    algorithm: Algorithm,
    k: usize,
    grid: CategoricalGrid,
    reference: Reference,
    probes: Vec<Probe>,
}

impl Searcher<'_> {
    fn probe(&mut self, alpha: f64) -> Result<bool> {
        let runs: Vec<Result<Probe>> = self
            .cfg
            .seeds
            .par_iter()
            .map(|&seed| {
                let learner = learner_config(self.cfg, self.algorithm, alpha, seed, stream_id(self.k));
                let (verdict, last) = probe_run(
                    self.problem,
                    &self.grid,
                    &self.reference,
                    &learner,
                    self.cfg.epsilon,
                    self.cfg.checkpoint_every,
                )?;
                Ok(Probe { k: self.k, alpha, seed, verdict, final_loss: last.scaled_loss })
            })
            .collect();
        let start = self.probes.len();
        for r in runs {
            self.probes.push(r?);
        }
        Ok(majority(self.probes[start..].iter().map(|p| p.verdict)))
    }
}

pub fn alpha_search(
    cfg: &ExperimentConfig,
    problem: &Problem,
    algorithm: Algorithm,
    k: usize,
    range: (f64, f64),
) -> Result<AlphaSearchResult> {
    let (lo, hi) = range;
    if !(lo > 0.0 && hi > lo) {
        bail!("invalid α range [{lo}, {hi}]");
    }
    let grid = problem.grid(k)?;
    let reference = problem.reference(algorithm, &grid)?;
    let mut s = Searcher { cfg, problem, algorithm, k, grid, reference, probes: Vec::new() };

    let lo_ok = s.probe(lo)?;
    let hi_ok = s.probe(hi)?;
    if hi_ok {
        let instant = s.probes.iter().all(|p| p.verdict == Verdict::Converged { t: 0 });
        if lo_ok && instant {
            // ε is at or above the initial loss: everything converges at t = 0.
            return Ok(AlphaSearchResult {
                algorithm,
                k,
                lower: hi,
                upper: f64::INFINITY,
                iterations_at_fifth: Some(0),
                probes: s.probes,
            });
        }
        bail!("K = {k}: α = {hi} still converges; raise the upper end of the α range");
    }
    if !lo_ok {
        bail!("K = {k}: α = {lo} does not converge within T = {}; lower the α range or raise T", cfg.t_max);
    }

    let (mut lower, mut upper) = (lo, hi);
    while upper / lower > 1.0 + cfg.rel_tol {
        let mid = (lower * upper).sqrt();
        if s.probe(mid)? {
            lower = mid;
        } else {
            upper = mid;
        }
    }

    let fifth: Vec<Result<Verdict>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let learner = learner_config(cfg, algorithm, 0.2 * lower, seed, stream_id(k));
            Ok(probe_run(problem, &s.grid, &s.reference, &learner, cfg.epsilon, cfg.checkpoint_every)?.0)
        })
        .collect();
    let fifth = fifth.into_iter().collect::<Result<Vec<_>>>()?;
    let iterations_at_fifth = if majority(fifth.iter().copied()) {
        let mut ts: Vec<usize> = fifth.iter().map(|v| v.t().filter(|_| v.converged()).unwrap_or(usize::MAX)).collect();
        ts.sort_unstable();
        Some(ts[ts.len() / 2])
    } else {
        None
    };

    Ok(AlphaSearchResult { algorithm, k, lower, upper, iterations_at_fifth, probes: s.probes })
}

/// Searches every K of the config in parallel. Failed searches are
/// returned as errors in place.
pub fn search_all(cfg: &ExperimentConfig, problem: &Problem, algorithm: Algorithm) -> Vec<Result<AlphaSearchResult>> {
    cfg.k_list
        .par_iter()
        .map(|&k| alpha_search(cfg, problem, algorithm, k, cfg.search_range(algorithm, k)))
        .collect()
}

pub const RESULT_HEADER: &str = "algorithm,k,lower,upper,alpha_inf,iterations_at_fifth";
pub const PROBE_HEADER: &str = "algorithm,k,alpha,seed,verdict,t,final_loss";

pub fn result_row(r: &AlphaSearchResult) -> String {
    let iters = r.iterations_at_fifth.map(|t| t.to_string()).unwrap_or_default();
    format!("{},{},{},{},{},{}", r.algorithm, r.k, r.lower, r.upper, r.alpha_inf(), iters)
}

pub fn probe_rows(r: &AlphaSearchResult) -> String {
    let mut out = String::new();
    for p in &r.probes {
        let t = p.verdict.t().map(|t| t.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{},{},{}\n", r.algorithm, p.k, p.alpha, p.seed, p.verdict.label(), t, p.final_loss));
    }
    out
}
