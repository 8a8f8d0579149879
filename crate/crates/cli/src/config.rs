//! Experiment configuration: a flat TOML file of `key = value` lines,
//! overridable from the command line.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use lctd_core::{Algorithm, SampleMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed of the generated experiment model.
    pub model_seed: u64,
    pub states: usize,
    pub features: usize,
    pub gamma: f64,
    pub reward_levels: usize,
    /// Model file; when set it replaces the generated model (and its γ).
    pub model_file: Option<PathBuf>,
    #[serde(with = "as_str")]
    pub algorithm: Algorithm,
    pub k_list: Vec<usize>,
    pub alpha: f64,
    /// Bracket for `alpha-search`; per-algorithm default when absent.
    pub alpha_range: Option<[f64; 2]>,
    pub t_max: usize,
    pub batch: usize,
    /// Learner seeds. Results are per seed; searches take the majority verdict.
    pub seeds: Vec<u64>,
    pub epsilon: f64,
    pub divergence: f64,
    pub checkpoint_every: usize,
    #[serde(with = "as_str")]
    pub mode: SampleMode,
    /// Relative bracket width at which bisection stops.
    pub rel_tol: f64,
    pub out: PathBuf,
    pub threads: Option<usize>,
    /// Scale applied to Φ without renormalising (verify only).
    pub feature_scale: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model_seed: 0,
            states: 3,
            features: 3,
            gamma: 0.75,
            reward_levels: 3,
            model_file: None,
            algorithm: Algorithm::LinearCtd,
            k_list: vec![30],
            alpha: 0.01,
            alpha_range: None,
            t_max: 500_000,
            batch: 25,
            seeds: vec![0],
            epsilon: 2e-6,
            divergence: 1e6,
            checkpoint_every: 1000,
            mode: SampleMode::Generative,
            rel_tol: 0.05,
            out: PathBuf::from("out"),
            threads: None,
            feature_scale: None,
        }
    }
}

mod as_str {
    use super::*;
    use serde::{de, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> std::result::Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        parse_toml(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            bail!("epsilon = {} must be positive", self.epsilon);
        }
        if !(self.divergence > self.epsilon) {
            bail!("divergence = {} must exceed epsilon = {}", self.divergence, self.epsilon);
        }
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            bail!("k_list must be a nonempty list of positive integers");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            bail!("gamma = {} must lie in (0, 1)", self.gamma);
        }
        if self.t_max == 0 || self.t_max % 2 != 0 {
            bail!("t_max = {} must be a positive even number", self.t_max);
        }
        if self.batch == 0 || self.checkpoint_every == 0 {
            bail!("batch and checkpoint_every must be at least 1");
        }
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            bail!("alpha = {} must be finite and non-negative", self.alpha);
        }
        if let Some([lo, hi]) = self.alpha_range {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                bail!("alpha_range = [{lo}, {hi}] must satisfy 0 < lo < hi");
            }
        }
        if !(self.rel_tol > 0.0) {
            bail!("rel_tol must be positive");
        }
        Ok(())
    }

    /// Search bracket for `algorithm` at resolution `k`.
    pub fn search_range(&self, algorithm: Algorithm, k: usize) -> (f64, f64) {
        match self.alpha_range {
            Some([lo, hi]) => (lo, hi),
            None => default_alpha_range(algorithm, k),
        }
    }
}

/// The baseline's stable step size shrinks like K⁻², so its default
/// bracket does too; the lower end must still converge within T.
pub fn default_alpha_range(algorithm: Algorithm, k: usize) -> (f64, f64) {
    match algorithm {
        Algorithm::SsgdPmf => {
            let k2 = (k * k) as f64;
            (0.5 / k2, 20.0 / k2)
        }
        _ => (0.05, 50.0),
    }
}

/// Parses `LO:HI`.
pub fn parse_range(s: &str) -> Result<[f64; 2]> {
    let (lo, hi) = s.split_once(':').with_context(|| format!("expected LO:HI, got '{s}'"))?;
    Ok([lo.trim().parse().context("range LO")?, hi.trim().parse().context("range HI")?])
}

/// Parses a comma-separated K list.
pub fn parse_k_list(s: &str) -> Result<Vec<usize>> {
    s.split(',').map(|x| x.trim().parse::<usize>().with_context(|| format!("bad K '{x}'"))).collect()
}

/// `toml::from_str` with the error flattened onto one line.
pub(crate) fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e: toml::de::Error| {
        let msg = e.message().trim().replace('\n', " ");
        match e.span() {
            Some(span) => {
                let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
                anyhow::anyhow!("line {line}: {msg}")
            }
            None => anyhow::anyhow!("{msg}"),
        }
    })
}
