//! Model setup and single learner runs shared by the subcommands.

use anyhow::{Context, Result};
use lctd_core::fixed_point::{assemble_system, solve_psi_star, solve_theta_star};
use lctd_core::learners::{regular_checkpoints, run_monitored, Control, RunOutput, TraceRow};
use lctd_core::mdp::make_experiment_mdp;
use lctd_core::{Algorithm, CategoricalGrid, FeatureMap, LearnerConfig, MrpModel, Reference};

use crate::config::ExperimentConfig;
use crate::model_file;

/// The model every worker shares.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: MrpModel,
    pub features: FeatureMap,
}

impl Problem {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let (model, features) = match &cfg.model_file {
            Some(path) => model_file::load(path, false)?,
            None => make_experiment_mdp(cfg.model_seed, cfg.states, cfg.features, cfg.gamma, cfg.reward_levels)
                .context("building the experiment model")?,
        };
        Ok(Problem { model, features })
    }

    pub fn gamma(&self) -> f64 {
        self.model.gamma()
    }

    pub fn grid(&self, k: usize) -> Result<CategoricalGrid> {
        Ok(CategoricalGrid::new(k, self.gamma())?)
    }

    /// The fixed point the learner's losses are measured against.
    pub fn reference(&self, algorithm: Algorithm, grid: &CategoricalGrid) -> Result<Reference> {
        Ok(match algorithm {
            Algorithm::LinearCtd | Algorithm::SsgdPmf => {
                Reference::Theta(solve_theta_star(&assemble_system(&self.model, &self.features, grid)?)?)
            }
            Algorithm::TabularCtd => {
                let one_hot = FeatureMap::one_hot(self.model.num_states());
                Reference::Theta(solve_theta_star(&assemble_system(&self.model, &one_hot, grid)?)?)
            }
            Algorithm::LinearTd => Reference::Psi(solve_psi_star(&self.model, &self.features)?),
        })
    }
}

/// How a run ended relative to the convergence threshold ε and the
/// divergence threshold M.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    /// Tail-averaged scaled loss ≤ ε at checkpoint `t`.
    Converged { t: usize },
    /// Non-finite parameters or iterate loss ≥ M by step `t`.
    Diverged { t: usize },
    /// Neither within T.
    Stalled,
}

impl Verdict {
    pub fn converged(&self) -> bool {
        matches!(self, Verdict::Converged { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Converged { .. } => "converged",
            Verdict::Diverged { .. } => "diverged",
            Verdict::Stalled => "stalled",
        }
    }

    pub fn t(&self) -> Option<usize> {
        match self {
            Verdict::Converged { t } | Verdict::Diverged { t } => Some(*t),
            Verdict::Stalled => None,
        }
    }
}

pub fn learner_config(cfg: &ExperimentConfig, algorithm: Algorithm, alpha: f64, seed: u64, stream: u64) -> LearnerConfig {
    LearnerConfig {
        alpha,
        batch: cfg.batch,
        t_max: cfg.t_max,
        mode: cfg.mode,
        seed,
        stream_id: stream,
        algorithm,
        divergence_threshold: cfg.divergence,
    }
}

/// Runs until ε is reached, divergence, or T.
pub fn probe_run(
    problem: &Problem,
    grid: &CategoricalGrid,
    reference: &Reference,
    learner: &LearnerConfig,
    epsilon: f64,
    checkpoint_every: usize,
) -> Result<(Verdict, TraceRow)> {
    let cps = regular_checkpoints(learner.t_max, checkpoint_every);
    let mut hit = None;
    let out = run_monitored(learner, &problem.model, &problem.features, grid, &cps, reference, None, |row| {
        if row.scaled_loss <= epsilon {
            hit = Some(row.t);
            Control::Stop
        } else {
            Control::Continue
        }
    })?;
    let last = out.trace.rows.last().cloned().expect("a run logs at least t = 0");
    let verdict = match (hit, out.diverged) {
        (Some(t), false) => Verdict::Converged { t },
        (_, true) => Verdict::Diverged { t: out.steps },
        (None, false) => Verdict::Stalled,
    };
    Ok((verdict, last))
}

/// A full run with checkpoints every `checkpoint_every` iterations.
pub fn full_run(
    problem: &Problem,
    grid: &CategoricalGrid,
    reference: &Reference,
    learner: &LearnerConfig,
    checkpoint_every: usize,
) -> Result<RunOutput> {
    let cps = regular_checkpoints(learner.t_max, checkpoint_every);
    Ok(run_monitored(learner, &problem.model, &problem.features, grid, &cps, reference, None, |_| Control::Continue)?)
}

/// Sample stream of a (K, seed) worker. Every α probed at the same
/// (K, seed) replays the same transitions.
pub fn stream_id(k: usize) -> u64 {
    k as u64
}

pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}
