//! Model files: γ, optional μπ, one feature row per state and a list of
//! outcome triples.
//!
//! ```toml
//! gamma = 0.75
//! phi = [[1.0, 0.0], [0.0, 1.0]]
//!
//! [[outcome]]
//! state = 0
//! prob = 1.0
//! reward = 0.5
//! next = 1
//! ```

use std::path::Path;

use anyhow::{bail, Context, Result};
use lctd_core::mdp::Outcome;
use lctd_core::{FeatureMap, Mat, MrpModel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    /// phi[s] = φ(s).
    pub phi: Vec<Vec<f64>>,
    #[serde(rename = "outcome")]
    pub outcomes: Vec<OutcomeEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeEntry {
    pub state: usize,
    pub prob: f64,
    pub reward: f64,
    pub next: usize,
}

impl ModelFile {
    pub fn from_model(m: &MrpModel, f: &FeatureMap) -> Self {
        let outcomes = (0..m.num_states())
            .flat_map(|s| {
                m.outcomes(s).iter().map(move |o| OutcomeEntry { state: s, prob: o.prob, reward: o.reward, next: o.next })
            })
            .collect();
        ModelFile {
            gamma: m.gamma(),
            mu: m.stationary_supplied().then(|| m.stationary().to_vec()),
            phi: (0..m.num_states()).map(|s| f.phi(s).to_vec()).collect(),
            outcomes,
        }
    }

    /// Builds the model; features are normalised unless `raw`.
    pub fn build(&self, raw: bool) -> Result<(MrpModel, FeatureMap)> {
        let states = self.phi.len();
        if states == 0 {
            bail!("model file has no feature rows");
        }
        let d = self.phi[0].len();
        if d == 0 || self.phi.iter().any(|r| r.len() != d) {
            bail!("every phi row must have the same positive length");
        }
        let mut table: Vec<Vec<Outcome>> = vec![Vec::new(); states];
        for (i, o) in self.outcomes.iter().enumerate() {
            if o.state >= states {
                bail!("outcome {i}: state {} out of range (model has {states} states)", o.state);
            }
            table[o.state].push(Outcome { prob: o.prob, reward: o.reward, next: o.next });
        }
        let m = MrpModel::new(table, self.gamma, self.mu.clone())?;
        let phi = Mat::from_fn(d, states, |i, s| self.phi[s][i]);
        let f = if raw { FeatureMap::new_unnormalized(phi) } else { FeatureMap::new(phi) };
        f.check_model(&m)?;
        Ok((m, f))
    }
}

pub fn load(path: &Path, raw: bool) -> Result<(MrpModel, FeatureMap)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: ModelFile = crate::config::parse_toml(&text).with_context(|| format!("in model file {}", path.display()))?;
    file.build(raw).with_context(|| format!("in model file {}", path.display()))
}

pub fn to_string(m: &MrpModel, f: &FeatureMap) -> String {
    toml::to_string(&ModelFile::from_model(m, f)).expect("model is always serialisable")
}
