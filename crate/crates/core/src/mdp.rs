//! Finite Markov reward processes under a fixed policy, linear feature maps,
//! and seeded transition samplers.
//!
//! Random streams are ChaCha8 generators keyed by `(seed, stream_id)`:
//! `ChaCha8Rng::seed_from_u64(seed)` followed by `set_stream(stream_id)`.
//! Distinct stream ids under one seed give independent sequences, so
//! parallel workers are reproducible regardless of scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{eigvals_sym, solve_refined, spectral_norm, Mat};

/// Stream id used internally by [`make_experiment_mdp`].
pub const MODEL_STREAM: u64 = u64::MAX;

/// Smallest accepted σ_min(Φ)/σ_max(Φ) for generated feature matrices.
pub const FEATURE_CONDITION_FLOOR: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("model has no states")]
    Empty,
    #[error("state {0} has no outcomes")]
    NoOutcomes(usize),
    #[error("state {state}: probabilities sum to {sum}, expected 1")]
    ProbabilitySum { state: usize, sum: f64 },
    #[error("state {state}: invalid probability {prob}")]
    Probability { state: usize, prob: f64 },
    #[error("state {state}: reward {reward} is outside [0, 1]")]
    Reward { state: usize, reward: f64 },
    #[error("state {state}: next state {next} out of range")]
    NextState { state: usize, next: usize },
    #[error("γ = {0} is not in (0, 1)")]
    Gamma(f64),
    #[error("the state chain is reducible; supply a stationary distribution")]
    Reducible,
    #[error("supplied stationary distribution is invalid: {0}")]
    BadStationary(String),
    #[error("feature matrix has {got} columns, model has {expected} states")]
    FeatureShape { expected: usize, got: usize },
    #[error("feature covariance is singular (λ_min = {0:e})")]
    SingularFeatures(f64),
    #[error("could not draw a full-rank feature matrix in {0} attempts")]
    RankDeficient(usize),
    #[error("stream cursor {0} is not a state of this model")]
    InvalidStream(usize),
    #[error("linear algebra: {0}")]
    Linalg(#[from] crate::linalg::LinalgError),
}

pub type Result<T> = std::result::Result<T, MdpError>;

/// One entry of a state's joint (reward, next-state) distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub prob: f64,
    pub reward: f64,
    pub next: usize,
}

/// A sampled transition (s, r, s′).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub r: f64,
    pub next: usize,
}

/// Finite Markov reward process with its stationary distribution.
#[derive(Debug, Clone)]
pub struct MrpModel {
    outcomes: Vec<Vec<Outcome>>,
    gamma: f64,
    mu: Vec<f64>,
    mu_supplied: bool,
    mu_cdf: Vec<f64>,
    outcome_cdfs: Vec<Vec<f64>>,
}

impl MrpModel {
    /// Validates the outcome tables and computes (or checks) μπ.
    pub fn new(outcomes: Vec<Vec<Outcome>>, gamma: f64, mu: Option<Vec<f64>>) -> Result<Self> {
        let n = outcomes.len();
        if n == 0 {
            return Err(MdpError::Empty);
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(MdpError::Gamma(gamma));
        }
        for (s, outs) in outcomes.iter().enumerate() {
            if outs.is_empty() {
                return Err(MdpError::NoOutcomes(s));
            }
            for o in outs {
                if !(o.prob >= 0.0 && o.prob.is_finite()) {
                    return Err(MdpError::Probability { state: s, prob: o.prob });
                }
                if !(0.0..=1.0).contains(&o.reward) {
                    return Err(MdpError::Reward { state: s, reward: o.reward });
                }
                if o.next >= n {
                    return Err(MdpError::NextState { state: s, next: o.next });
                }
            }
            let sum: f64 = outs.iter().map(|o| o.prob).sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(MdpError::ProbabilitySum { state: s, sum });
            }
        }
        let p = transition_matrix_of(&outcomes);
        let (mu, mu_supplied) = match mu {
            Some(mu) => {
                check_supplied_mu(&p, &mu)?;
                (mu, true)
            }
            None => (solve_stationary(&p)?, false),
        };
        let mu_cdf = cdf_table(&mu);
        let outcome_cdfs = outcomes.iter().map(|o| cdf_table(&o.iter().map(|x| x.prob).collect::<Vec<_>>())).collect();
        Ok(MrpModel { outcomes, gamma, mu, mu_supplied, mu_cdf, outcome_cdfs })
    }

    pub fn num_states(&self) -> usize {
        self.outcomes.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn outcomes(&self, s: usize) -> &[Outcome] {
        &self.outcomes[s]
    }

    pub fn all_outcomes(&self) -> &[Vec<Outcome>] {
        &self.outcomes
    }

    /// μπ, either supplied or solved from the chain.
    pub fn stationary(&self) -> &[f64] {
        &self.mu
    }

    pub fn stationary_supplied(&self) -> bool {
        self.mu_supplied
    }

    /// Marginal state chain P[s][s′].
    pub fn transition_matrix(&self) -> Mat {
        transition_matrix_of(&self.outcomes)
    }

    /// Expected immediate reward per state.
    pub fn mean_reward(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.iter().map(|x| x.prob * x.reward).sum()).collect()
    }

    /// Distinct rewards over all outcomes, ascending.
    pub fn reward_levels(&self) -> Vec<f64> {
        let mut r: Vec<f64> = self.outcomes.iter().flatten().map(|o| o.reward).collect();
        r.sort_by(f64::total_cmp);
        r.dedup();
        r
    }

    /// Every (s, outcome) pair with its joint weight μπ(s)·P(outcome|s),
    /// skipping zero weights.
    pub fn weighted_outcomes(&self) -> impl Iterator<Item = (f64, usize, Outcome)> + '_ {
        self.outcomes.iter().enumerate().flat_map(move |(s, outs)| {
            outs.iter().filter_map(move |o| {
                let w = self.mu[s] * o.prob;
                (w > 0.0).then_some((w, s, *o))
            })
        })
    }
}

/// Stationary distribution of the model's state chain.
pub fn stationary_distribution(m: &MrpModel) -> Vec<f64> {
    m.mu.clone()
}

fn transition_matrix_of(outcomes: &[Vec<Outcome>]) -> Mat {
    let n = outcomes.len();
    let mut p = Mat::zeros(n, n);
    for (s, outs) in outcomes.iter().enumerate() {
        for o in outs {
            p.add_to(s, o.next, o.prob);
        }
    }
    p
}

fn cdf_table(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = p
        .iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect();
    // Guard the last bin against rounding so every u in [0,1) lands somewhere.
    if let Some(last_positive) = p.iter().rposition(|x| *x > 0.0) {
        out[last_positive..].iter_mut().for_each(|v| *v = f64::INFINITY);
    }
    out
}

fn is_irreducible(p: &Mat) -> bool {
    let n = p.rows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let w = if forward { p.get(i, j) } else { p.get(j, i) };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|x| x)
    };
    reach(true) && reach(false)
}

fn solve_stationary(p: &Mat) -> Result<Vec<f64>> {
    if !is_irreducible(p) {
        return Err(MdpError::Reducible);
    }
    let n = p.rows();
    // (Pᵀ − I) μ = 0 with the last equation replaced by Σμ = 1.
    let a = Mat::from_fn(n, n, |i, j| {
        if i == n - 1 {
            1.0
        } else {
            p.get(j, i) - if i == j { 1.0 } else { 0.0 }
        }
    });
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;
    let mut mu = solve_refined(&a, &rhs, 1e14)?;
    for x in mu.iter_mut() {
        *x = x.max(0.0);
    }
    let total: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|x| *x /= total);
    Ok(mu)
}

fn check_supplied_mu(p: &Mat, mu: &[f64]) -> Result<()> {
    if mu.len() != p.rows() {
        return Err(MdpError::BadStationary(format!("length {} for {} states", mu.len(), p.rows())));
    }
    if mu.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
        return Err(MdpError::BadStationary("negative or non-finite entry".into()));
    }
    let total: f64 = mu.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(MdpError::BadStationary(format!("sums to {total}")));
    }
    let residual = stationary_residual(p, mu);
    if residual > 1e-9 {
        return Err(MdpError::BadStationary(format!("‖μᵀP − μᵀ‖∞ = {residual:e}")));
    }
    Ok(())
}

/// ‖μᵀP − μᵀ‖∞.
pub fn stationary_residual(p: &Mat, mu: &[f64]) -> f64 {
    (0..p.cols())
        .map(|j| ((0..p.rows()).map(|i| mu[i] * p.get(i, j)).sum::<f64>() - mu[j]).abs())
        .fold(0.0, f64::max)
}

/// Linear features φ(s) ∈ R^d, stored both as the d×S matrix Φ and as
/// contiguous per-state rows.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    phi: Mat,
    by_state: Vec<f64>,
    tabular: bool,
}

impl FeatureMap {
    /// Builds Φ (d×S, column φ(s)), rescaling uniformly so max_s ‖φ(s)‖ ≤ 1.
    pub fn new(phi: Mat) -> Self {
        let max_norm = max_column_norm(&phi);
        let phi = if max_norm > 1.0 { phi.scale(1.0 / max_norm) } else { phi };
        FeatureMap::new_unnormalized(phi)
    }

    /// Keeps Φ as given, even when some ‖φ(s)‖ > 1.
    pub fn new_unnormalized(phi: Mat) -> Self {
        let by_state = phi.transpose().into_data();
        FeatureMap { phi, by_state, tabular: false }
    }

    /// One-hot features, Φ = I_S.
    pub fn one_hot(num_states: usize) -> Self {
        let mut f = FeatureMap::new_unnormalized(Mat::identity(num_states));
        f.tabular = true;
        f
    }

    pub fn d(&self) -> usize {
        self.phi.rows()
    }

    pub fn num_states(&self) -> usize {
        self.phi.cols()
    }

    pub fn is_tabular(&self) -> bool {
        self.tabular
    }

    pub fn matrix(&self) -> &Mat {
        &self.phi
    }

    #[inline]
    pub fn phi(&self, s: usize) -> &[f64] {
        let d = self.d();
        &self.by_state[s * d..(s + 1) * d]
    }

    pub fn max_norm(&self) -> f64 {
        max_column_norm(&self.phi)
    }

    /// Σφ = Σ_s μ(s) φ(s)φ(s)ᵀ.
    pub fn sigma(&self, mu: &[f64]) -> Mat {
        let d = self.d();
        let mut out = Mat::zeros(d, d);
        for (s, &w) in mu.iter().enumerate() {
            let f = self.phi(s);
            for i in 0..d {
                for j in 0..d {
                    out.add_to(i, j, w * f[i] * f[j]);
                }
            }
        }
        out
    }

    /// Σφ as Φ·diag(μ)·Φᵀ.
    pub fn sigma_via_product(&self, mu: &[f64]) -> Mat {
        let scaled = Mat::from_fn(self.d(), self.num_states(), |i, s| self.phi.get(i, s) * mu[s]);
        scaled.matmul(&self.phi.transpose()).expect("conformable by construction")
    }

    /// Smallest eigenvalue of Σφ; errors when it is not positive.
    pub fn lambda_min(&self, mu: &[f64]) -> Result<f64> {
        let lam = eigvals_sym(&self.sigma(mu).symmetrize()?)?[0];
        if !(lam > 0.0) {
            return Err(MdpError::SingularFeatures(lam));
        }
        Ok(lam)
    }

    pub fn check_model(&self, m: &MrpModel) -> Result<()> {
        if self.num_states() != m.num_states() {
            return Err(MdpError::FeatureShape { expected: m.num_states(), got: self.num_states() });
        }
        Ok(())
    }
}

fn max_column_norm(phi: &Mat) -> f64 {
    (0..phi.cols()).map(|s| crate::linalg::norm2(&phi.col(s))).fold(0.0, f64::max)
}

/// Sampling regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// s ∼ μπ i.i.d., then (r, s′) from the outcome table of s.
    Generative,
    /// s is the previous s′ along one trajectory started from μπ.
    Markovian,
}

impl std::str::FromStr for SampleMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "generative" => Ok(SampleMode::Generative),
            "markovian" => Ok(SampleMode::Markovian),
            other => Err(format!("unknown sampling mode '{other}' (expected generative or markovian)")),
        }
    }
}

impl std::fmt::Display for SampleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SampleMode::Generative => "generative",
            SampleMode::Markovian => "markovian",
        })
    }
}

/// Single-owner transition sampler.
#[derive(Debug, Clone)]
pub struct SampleStream {
    seed: u64,
    stream_id: u64,
    mode: SampleMode,
    rng: ChaCha8Rng,
    cursor: Option<usize>,
}

impl SampleStream {
    pub fn new(seed: u64, stream_id: u64, mode: SampleMode) -> Self {
        SampleStream { seed, stream_id, mode, rng: seeded_rng(seed, stream_id), cursor: None }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn mode(&self) -> SampleMode {
        self.mode
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn draw_transition(&mut self, m: &MrpModel) -> Result<Transition> {
        let s = match (self.mode, self.cursor) {
            (SampleMode::Markovian, Some(c)) => {
                if c >= m.num_states() {
                    return Err(MdpError::InvalidStream(c));
                }
                c
            }
            _ => inverse_cdf(&m.mu_cdf, self.rng.random()),
        };
        let o = m.outcomes[s][inverse_cdf(&m.outcome_cdfs[s], self.rng.random())];
        if self.mode == SampleMode::Markovian {
            self.cursor = Some(o.next);
        }
        Ok(Transition { s, r: o.reward, next: o.next })
    }

    /// Fills `out` with consecutive transitions.
    pub fn draw_batch(&mut self, m: &MrpModel, out: &mut [Transition]) -> Result<()> {
        for t in out.iter_mut() {
            *t = self.draw_transition(m)?;
        }
        Ok(())
    }
}

/// ChaCha8 generator for (seed, stream_id).
pub fn seeded_rng(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

#[inline]
fn inverse_cdf(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// Seeded random reward process of the experimental shape: positive
/// transition matrix (irreducible and aperiodic), rewards on
/// {0, 1/(L−1), …, 1} (or {0.5} when L = 1) with a random reward law per
/// (s, s′), and unit-norm features whose matrix Φ satisfies
/// σ_min/σ_max ≥ [`FEATURE_CONDITION_FLOOR`].
pub fn make_experiment_mdp(
    seed: u64,
    num_states: usize,
    d: usize,
    gamma: f64,
    reward_levels: usize,
) -> Result<(MrpModel, FeatureMap)> {
    if num_states == 0 {
        return Err(MdpError::Empty);
    }
    if d == 0 || reward_levels == 0 {
        return Err(MdpError::RankDeficient(0));
    }
    let mut rng = seeded_rng(seed, MODEL_STREAM);
    let rewards: Vec<f64> = if reward_levels == 1 {
        vec![0.5]
    } else {
        (0..reward_levels).map(|l| l as f64 / (reward_levels - 1) as f64).collect()
    };
    let mut outcomes = Vec::with_capacity(num_states);
    for _ in 0..num_states {
        let row = positive_simplex(&mut rng, num_states);
        let mut outs = Vec::with_capacity(num_states * reward_levels);
        for (next, &pn) in row.iter().enumerate() {
            let q = positive_simplex(&mut rng, reward_levels);
            for (l, &ql) in q.iter().enumerate() {
                outs.push(Outcome { prob: pn * ql, reward: rewards[l], next });
            }
        }
        // Exact unit sums keep the 1e-12 validation robust.
        let total: f64 = outs.iter().map(|o| o.prob).sum();
        outs.iter_mut().for_each(|o| o.prob /= total);
        outcomes.push(outs);
    }
    let model = MrpModel::new(outcomes, gamma, None)?;
    if d > num_states {
        return Err(MdpError::RankDeficient(0));
    }
    const ATTEMPTS: usize = 100;
    for _ in 0..ATTEMPTS {
        let raw = Mat::from_fn(d, num_states, |_, _| rng.random_range(-1.0..1.0));
        let norms: Vec<f64> = (0..num_states).map(|s| crate::linalg::norm2(&raw.col(s))).collect();
        if norms.iter().any(|n| *n < 1e-8) {
            continue;
        }
        let phi = Mat::from_fn(d, num_states, |i, s| raw.get(i, s) / norms[s]);
        if feature_condition(&phi) >= FEATURE_CONDITION_FLOOR {
            let features = FeatureMap::new(phi);
            features.lambda_min(model.stationary())?;
            return Ok((model, features));
        }
    }
    Err(MdpError::RankDeficient(ATTEMPTS))
}

/// σ_min(Φ)/σ_max(Φ) over the min(d, S) singular values.
pub fn feature_condition(phi: &Mat) -> f64 {
    let g = if phi.rows() <= phi.cols() { phi.transpose().gram() } else { phi.gram() };
    let ev = eigvals_sym(&g.symmetrize().expect("square")).expect("gram matrices are symmetric");
    let top = spectral_norm(phi);
    if top == 0.0 {
        return 0.0;
    }
    ev[0].max(0.0).sqrt() / top
}

fn positive_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}
