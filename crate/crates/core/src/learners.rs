//! Streaming learners with constant step size, mini-batches and
//! Polyak–Ruppert tail averaging: Linear-CTD, the SSGD-PMF baseline,
//! Linear-TD and tabular categorical TD.
//!
//! Linear-CTD and SSGD-PMF keep Θ (d×K, row-major) and cost O(dK) per
//! transition: the projected Bellman matrix CG̃(r)C⁻¹ is applied through
//! first differences, a two-nonzeros-per-column scatter and a running sum.
//! A batch step averages the per-transition update terms taken at the same
//! pre-step parameter.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::bellman::{cumsum_in_place, suffix_sum_in_place, ShiftStencil};
use crate::categorical::{cumsum, CategoricalGrid};
use crate::fixed_point::{w1_mu_from_delta, weighted_sq_norm, PsiParam, ThetaParam};
use crate::linalg::{dot, solve_refined, Mat};
use crate::mdp::{FeatureMap, MdpError, MrpModel, SampleMode, SampleStream, Transition};

/// Default divergence threshold on the scaled loss.
pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("invalid learner configuration: {0}")]
    Config(String),
    #[error("parameter kind does not match algorithm {0}")]
    ParamKind(Algorithm),
    #[error("reward {0} is outside [0, 1]")]
    Reward(f64),
    #[error("features have {got} states, model has {expected}")]
    Shape { expected: usize, got: usize },
    #[error("constant function is not in the feature span (residual {0:e})")]
    NoConstantFeature(f64),
    #[error("sampling: {0}")]
    Sampling(#[from] MdpError),
}

pub type Result<T> = std::result::Result<T, LearnerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    LinearCtd,
    SsgdPmf,
    LinearTd,
    TabularCtd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] =
        [Algorithm::LinearCtd, Algorithm::SsgdPmf, Algorithm::LinearTd, Algorithm::TabularCtd];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::LinearCtd => "linear_ctd",
            Algorithm::SsgdPmf => "ssgd_pmf",
            Algorithm::LinearTd => "linear_td",
            Algorithm::TabularCtd => "tabular_ctd",
        }
    }

    /// True for the algorithms parametrised by Θ.
    pub fn is_categorical_linear(&self) -> bool {
        matches!(self, Algorithm::LinearCtd | Algorithm::SsgdPmf)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm '{s}' (expected linear_ctd, ssgd_pmf, linear_td or tabular_ctd)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub alpha: f64,
    pub batch: usize,
    /// Number of iterations T (even); the tail average covers t = T/2..T.
    pub t_max: usize,
    pub mode: SampleMode,
    pub seed: u64,
    pub stream_id: u64,
    pub algorithm: Algorithm,
    /// A run is marked diverged once the current iterate's scaled loss
    /// reaches this value.
    pub divergence_threshold: f64,
}

impl LearnerConfig {
    pub fn new(algorithm: Algorithm, alpha: f64, t_max: usize) -> Self {
        LearnerConfig {
            alpha,
            batch: 1,
            t_max,
            mode: SampleMode::Generative,
            seed: 0,
            stream_id: 0,
            algorithm,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(LearnerError::Config(format!("step size {} must be finite and non-negative", self.alpha)));
        }
        if self.batch == 0 {
            return Err(LearnerError::Config("batch must be at least 1".into()));
        }
        if self.t_max % 2 != 0 {
            return Err(LearnerError::Config(format!("T = {} must be even", self.t_max)));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(LearnerError::Config("divergence threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Learner parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    /// Θ stored row-major d×K.
    Theta { d: usize, k: usize, data: Vec<f64> },
    Psi(Vec<f64>),
    /// Per-state masses p(s) stored row-major S×K.
    Table { states: usize, k: usize, data: Vec<f64> },
}

impl Params {
    pub fn zeros_for(algorithm: Algorithm, d: usize, num_states: usize, grid: &CategoricalGrid) -> Params {
        let k = grid.k();
        match algorithm {
            Algorithm::LinearCtd | Algorithm::SsgdPmf => Params::Theta { d, k, data: vec![0.0; d * k] },
            Algorithm::LinearTd => Params::Psi(vec![0.0; d]),
            // Θ = 0 corresponds to the discrete uniform measure.
            Algorithm::TabularCtd => {
                Params::Table { states: num_states, k, data: vec![1.0 / (k as f64 + 1.0); num_states * k] }
            }
        }
    }

    pub fn from_theta(theta: &ThetaParam) -> Params {
        Params::Theta { d: theta.d(), k: theta.grid().k(), data: theta.matrix().data().to_vec() }
    }

    pub fn data(&self) -> &[f64] {
        match self {
            Params::Theta { data, .. } | Params::Table { data, .. } | Params::Psi(data) => data,
        }
    }

    fn with_data(&self, data: Vec<f64>) -> Params {
        match self {
            Params::Theta { d, k, .. } => Params::Theta { d: *d, k: *k, data },
            Params::Table { states, k, .. } => Params::Table { states: *states, k: *k, data },
            Params::Psi(_) => Params::Psi(data),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data().iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Θ view. For a tabular table this is the one-hot parameter with
    /// Θ[s, k] = F_k(s) − (k+1)/(K+1).
    pub fn to_theta(&self, grid: &CategoricalGrid) -> Option<ThetaParam> {
        let k1 = grid.k() as f64 + 1.0;
        match self {
            Params::Theta { d, k, data } => {
                ThetaParam::new(*grid, Mat::new(*d, *k, data.clone()).ok()?).ok()
            }
            Params::Table { states, k, data } => {
                let mut out = Vec::with_capacity(states * k);
                for s in 0..*states {
                    let f = cumsum(&data[s * k..(s + 1) * k]);
                    out.extend(f.iter().enumerate().map(|(kk, v)| v - (kk as f64 + 1.0) / k1));
                }
                ThetaParam::new(*grid, Mat::new(*states, *k, out).ok()?).ok()
            }
            Params::Psi(_) => None,
        }
    }

    pub fn to_psi(&self) -> Option<PsiParam> {
        match self {
            Params::Psi(p) => Some(PsiParam { psi: p.clone() }),
            _ => None,
        }
    }
}

/// Neumaier-compensated running sum of parameter vectors.
#[derive(Debug, Clone)]
struct CompensatedSum {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl CompensatedSum {
    fn new(n: usize) -> Self {
        CompensatedSum { sum: vec![0.0; n], comp: vec![0.0; n] }
    }

    fn add(&mut self, x: &[f64]) {
        for ((s, c), &v) in self.sum.iter_mut().zip(self.comp.iter_mut()).zip(x) {
            let t = *s + v;
            if s.abs() >= v.abs() {
                *c += (*s - t) + v;
            } else {
                *c += (v - t) + *s;
            }
            *s = t;
        }
    }

    fn value(&self) -> Vec<f64> {
        self.sum.iter().zip(&self.comp).map(|(s, c)| s + c).collect()
    }
}

/// Current parameter, tail sum over t ≥ T/2, iteration index and
/// divergence flag.
#[derive(Debug, Clone)]
pub struct LearnerState {
    params: Params,
    t: usize,
    tail_start: usize,
    tail: CompensatedSum,
    tail_count: usize,
    diverged: bool,
}

impl LearnerState {
    /// State at t = 0 with the tail window starting at T/2.
    pub fn new(params: Params, t_max: usize) -> Self {
        let n = params.data().len();
        let mut st = LearnerState {
            params,
            t: 0,
            tail_start: t_max / 2,
            tail: CompensatedSum::new(n),
            tail_count: 0,
            diverged: false,
        };
        st.accumulate_tail();
        st
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    pub fn tail_count(&self) -> usize {
        self.tail_count
    }

    /// Tail average (t_count)⁻¹ Σ_{t ≥ T/2} θ_t, if any iterate was added.
    pub fn tail_average(&self) -> Option<Params> {
        if self.tail_count == 0 {
            return None;
        }
        let n = self.tail_count as f64;
        Some(self.params.with_data(self.tail.value().into_iter().map(|x| x / n).collect()))
    }

    fn accumulate_tail(&mut self) {
        if self.t >= self.tail_start && !self.diverged {
            self.tail.add(self.params.data());
            self.tail_count += 1;
        }
    }

    fn finish_step(&mut self, finite: bool) {
        self.t += 1;
        if !finite {
            self.diverged = true;
        }
        self.accumulate_tail();
    }
}

/// Per-reward stencil and bias cache plus scratch buffers.
#[derive(Debug, Default)]
pub struct Workspace {
    stencils: HashMap<u64, (ShiftStencil, Vec<f64>)>,
    proj: Vec<f64>,
    have: Vec<bool>,
    acc: Vec<f64>,
    touched: Vec<usize>,
    scratch: Vec<f64>,
    y: Vec<f64>,
    full: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Workspace::default()
    }

    fn stencil(&mut self, r: f64, grid: &CategoricalGrid) -> Result<&(ShiftStencil, Vec<f64>)> {
        if !(0.0..=1.0).contains(&r) {
            return Err(LearnerError::Reward(r));
        }
        let key = r.to_bits();
        if !self.stencils.contains_key(&key) {
            let st = ShiftStencil::new(r, grid).map_err(|_| LearnerError::Reward(r))?;
            let bias = st.bias();
            self.stencils.insert(key, (st, bias));
        }
        Ok(&self.stencils[&key])
    }

    fn reset(&mut self, states: usize, k: usize) {
        if self.have.len() != states || self.proj.len() != states * k {
            self.have = vec![false; states];
            self.proj = vec![0.0; states * k];
            self.acc = vec![0.0; states * k];
        }
        for &s in &self.touched {
            self.have[s] = false;
            self.acc[s * k..(s + 1) * k].iter_mut().for_each(|x| *x = 0.0);
        }
        self.touched.clear();
        self.scratch.resize(k, 0.0);
        self.y.resize(k, 0.0);
        self.full.resize(k + 1, 0.0);
    }
}

fn touch(ws: &mut Workspace, s: usize, theta: &[f64], f: &FeatureMap, k: usize) {
    if ws.have[s] {
        return;
    }
    ws.have[s] = true;
    ws.touched.push(s);
    let out = &mut ws.proj[s * k..(s + 1) * k];
    out.iter_mut().for_each(|x| *x = 0.0);
    for (i, &fi) in f.phi(s).iter().enumerate() {
        if fi != 0.0 {
            for (o, &t) in out.iter_mut().zip(&theta[i * k..(i + 1) * k]) {
                *o += fi * t;
            }
        }
    }
}

/// One averaged step of Linear-CTD (`precondition = false`) or SSGD-PMF
/// (`precondition = true`, bracket right-multiplied by CCᵀ). Returns false
/// if any updated entry became non-finite.
#[allow(clippy::too_many_arguments)]
fn ctd_batch_update(
    theta: &mut [f64],
    d: usize,
    batch: &[Transition],
    f: &FeatureMap,
    grid: &CategoricalGrid,
    alpha: f64,
    precondition: bool,
    ws: &mut Workspace,
) -> Result<bool> {
    let k = grid.k();
    ws.reset(f.num_states(), k);
    for tr in batch {
        touch(ws, tr.s, theta, f, k);
        touch(ws, tr.next, theta, f, k);
    }
    for tr in batch {
        ws.stencil(tr.r, grid)?;
        let (st, bias) = &ws.stencils[&tr.r.to_bits()];
        let next = &ws.proj[tr.next * k..(tr.next + 1) * k];
        st.apply_y_into(next, &mut ws.scratch, &mut ws.y);
        let cur = &ws.proj[tr.s * k..(tr.s + 1) * k];
        for kk in 0..k {
            ws.y[kk] = cur[kk] - ws.y[kk] - bias[kk];
        }
        if precondition {
            suffix_sum_in_place(&mut ws.y);
            cumsum_in_place(&mut ws.y);
        }
        for (a, &v) in ws.acc[tr.s * k..(tr.s + 1) * k].iter_mut().zip(&ws.y) {
            *a += v;
        }
    }
    let scale = alpha / batch.len() as f64;
    let mut finite = true;
    for &s in &ws.touched {
        let delta = &ws.acc[s * k..(s + 1) * k];
        for (i, &fi) in f.phi(s).iter().enumerate().take(d) {
            if fi == 0.0 {
                continue;
            }
            let c = scale * fi;
            for (t, &dv) in theta[i * k..(i + 1) * k].iter_mut().zip(delta) {
                *t -= c * dv;
                finite &= t.is_finite();
            }
        }
    }
    Ok(finite)
}

fn td_batch_update(psi: &mut [f64], batch: &[Transition], f: &FeatureMap, gamma: f64, alpha: f64) -> bool {
    let d = psi.len();
    let mut grad = vec![0.0; d];
    for tr in batch {
        let (x, y) = (f.phi(tr.s), f.phi(tr.next));
        let delta = dot(x, psi) - gamma * dot(y, psi) - tr.r;
        for (g, &xi) in grad.iter_mut().zip(x) {
            *g += xi * delta;
        }
    }
    let scale = alpha / batch.len() as f64;
    let mut finite = true;
    for (p, g) in psi.iter_mut().zip(grad) {
        *p -= scale * g;
        finite &= p.is_finite();
    }
    finite
}

fn tabular_batch_update(
    table: &mut [f64],
    batch: &[Transition],
    grid: &CategoricalGrid,
    alpha: f64,
    ws: &mut Workspace,
) -> Result<bool> {
    let k = grid.k();
    let states = table.len() / k;
    ws.reset(states, k);
    for tr in batch {
        ws.stencil(tr.r, grid)?;
        let (st, _) = &ws.stencils[&tr.r.to_bits()];
        let next = &table[tr.next * k..(tr.next + 1) * k];
        ws.full[..k].copy_from_slice(next);
        ws.full[k] = 1.0 - next.iter().sum::<f64>();
        st.apply_g_into(&ws.full, &mut ws.y);
        if !ws.have[tr.s] {
            ws.have[tr.s] = true;
            ws.touched.push(tr.s);
        }
        let cur = &table[tr.s * k..(tr.s + 1) * k];
        for ((a, &p), &q) in ws.acc[tr.s * k..(tr.s + 1) * k].iter_mut().zip(cur).zip(&ws.y) {
            *a += p - q;
        }
    }
    let scale = alpha / batch.len() as f64;
    let mut finite = true;
    for &s in &ws.touched {
        for (p, &a) in table[s * k..(s + 1) * k].iter_mut().zip(&ws.acc[s * k..(s + 1) * k]) {
            *p -= scale * a;
            finite &= p.is_finite();
        }
    }
    Ok(finite)
}

/// Applies one averaged batch step of `algorithm` to `state`. A non-finite
/// result sets the divergence flag; later calls leave the state unchanged.
pub fn batch_step(
    algorithm: Algorithm,
    state: &mut LearnerState,
    batch: &[Transition],
    m: &MrpModel,
    f: &FeatureMap,
    grid: &CategoricalGrid,
    alpha: f64,
    ws: &mut Workspace,
) -> Result<()> {
    if state.diverged || batch.is_empty() {
        return Ok(());
    }
    let finite = match (algorithm, &mut state.params) {
        (Algorithm::LinearCtd | Algorithm::SsgdPmf, Params::Theta { d, k, data }) => {
            if *k != grid.k() || *d != f.d() {
                return Err(LearnerError::ParamKind(algorithm));
            }
            let d = *d;
            ctd_batch_update(data, d, batch, f, grid, alpha, algorithm == Algorithm::SsgdPmf, ws)?
        }
        (Algorithm::LinearTd, Params::Psi(psi)) => {
            if let Some(tr) = batch.iter().find(|t| !(0.0..=1.0).contains(&t.r)) {
                return Err(LearnerError::Reward(tr.r));
            }
            td_batch_update(psi, batch, f, m.gamma(), alpha)
        }
        (Algorithm::TabularCtd, Params::Table { k, .. }) if *k == grid.k() => {
            let Params::Table { data, .. } = &mut state.params else { unreachable!() };
            tabular_batch_update(data, batch, grid, alpha, ws)?
        }
        _ => return Err(LearnerError::ParamKind(algorithm)),
    };
    state.finish_step(finite);
    Ok(())
}

/// Single-transition Linear-CTD step:
/// Θ ← Θ − αφ(s)[φ(s)ᵀΘ − φ(s′)ᵀΘ(CG̃(r)C⁻¹)ᵀ − (K+1)⁻¹(Σ_j g_j(r) − 1)ᵀCᵀ].
pub fn linear_ctd_step(
    state: &mut LearnerState,
    tr: &Transition,
    m: &MrpModel,
    f: &FeatureMap,
    grid: &CategoricalGrid,
    alpha: f64,
) -> Result<()> {
    batch_step(Algorithm::LinearCtd, state, std::slice::from_ref(tr), m, f, grid, alpha, &mut Workspace::new())
}

/// Single-transition SSGD-PMF step (Linear-CTD bracket times CCᵀ).
pub fn ssgd_pmf_step(
    state: &mut LearnerState,
    tr: &Transition,
    m: &MrpModel,
    f: &FeatureMap,
    grid: &CategoricalGrid,
    alpha: f64,
) -> Result<()> {
    batch_step(Algorithm::SsgdPmf, state, std::slice::from_ref(tr), m, f, grid, alpha, &mut Workspace::new())
}

/// Single-transition Linear-TD step: ψ ← ψ − αφ(s)[(φ(s) − γφ(s′))ᵀψ − r].
pub fn linear_td_step(state: &mut LearnerState, tr: &Transition, m: &MrpModel, f: &FeatureMap, alpha: f64) -> Result<()> {
    let grid = CategoricalGrid::new(1, m.gamma()).expect("γ validated by the model");
    batch_step(Algorithm::LinearTd, state, std::slice::from_ref(tr), m, f, &grid, alpha, &mut Workspace::new())
}

/// Single-transition tabular CTD step:
/// η(s) ← η(s) − α[η(s) − Π_K(b_{r,γ})#η(s′)].
pub fn tabular_ctd_step(
    state: &mut LearnerState,
    tr: &Transition,
    m: &MrpModel,
    grid: &CategoricalGrid,
    alpha: f64,
) -> Result<()> {
    let f = FeatureMap::one_hot(m.num_states());
    batch_step(Algorithm::TabularCtd, state, std::slice::from_ref(tr), m, &f, grid, alpha, &mut Workspace::new())
}

/// V_θ(s) for every state.
pub fn value_of(theta: &ThetaParam, f: &FeatureMap) -> Vec<f64> {
    (0..f.num_states()).map(|s| theta.value_at(f.phi(s))).collect()
}

/// ψ₀ with φ(s)ᵀψ₀ = 1/(2(1−γ)) for every s, which matches V_{Θ=0}.
/// Fails unless the constant function lies in the feature span.
pub fn matched_td_init(f: &FeatureMap, gamma: f64) -> Result<Vec<f64>> {
    let target = 0.5 / (1.0 - gamma);
    let phi = f.matrix();
    let gram = phi.matmul(&phi.transpose()).expect("Φ Φᵀ");
    let rhs: Vec<f64> = (0..f.d()).map(|i| target * phi.row(i).iter().sum::<f64>()).collect();
    let psi = solve_refined(&gram, &rhs, 1e12).map_err(|_| LearnerError::NoConstantFeature(f64::INFINITY))?;
    let residual = (0..f.num_states()).map(|s| (dot(f.phi(s), &psi) - target).abs()).fold(0.0, f64::max);
    if residual > 1e-9 * target {
        return Err(LearnerError::NoConstantFeature(residual));
    }
    Ok(psi)
}

/// What checkpoint losses are measured against.
#[derive(Debug, Clone)]
pub enum Reference {
    Theta(ThetaParam),
    Psi(PsiParam),
    None,
}

/// One checkpoint of a run. Losses refer to the tail average
/// θ̄_t = (t − ⌊t/2⌋ + 1)⁻¹ Σ_{u=⌊t/2⌋}^{t} θ_u.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    /// ℓ_{2,μπ}(η_θ̄, η_ref); for Linear-TD the μπ-weighted L² value error.
    pub loss_l2_mu: f64,
    /// W_{1,μπ}(η_θ̄, η_ref); for Linear-TD the μπ-weighted L¹ value error.
    pub loss_w1_mu: f64,
    /// Euclidean norm of the current iterate.
    pub theta_norm: f64,
    pub diverged: bool,
    /// (1/K)‖θ̄ − θ_ref‖²_{I⊗Σφ} = (1−γ)ℓ²; for Linear-TD, loss_l2_mu².
    pub scaled_loss: f64,
    /// Same quantity for the current iterate.
    pub iterate_scaled_loss: f64,
}

/// Checkpoint log of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
}

impl RunTrace {
    pub const CSV_HEADER: &'static str = "t,loss_l2_mu,loss_w1_mu,theta_norm,diverged";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{}\n",
                r.t, r.loss_l2_mu, r.loss_w1_mu, r.theta_norm, r.diverged as u8
            ));
        }
        s
    }
}

/// Outcome of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: RunTrace,
    /// θ̄_T, absent if the run stopped early.
    pub final_average: Option<Params>,
    pub final_iterate: Params,
    pub diverged: bool,
    /// Iterations actually performed.
    pub steps: usize,
}

/// Whether a monitored run keeps going after a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Checkpoints every `every` iterations up to and including T.
pub fn regular_checkpoints(t_max: usize, every: usize) -> Vec<usize> {
    let every = every.max(1);
    let mut cps: Vec<usize> = (1..=t_max / every).map(|i| i * every).collect();
    if cps.last() != Some(&t_max) {
        cps.push(t_max);
    }
    cps
}

struct Metrics<'a> {
    reference: &'a Reference,
    f: &'a FeatureMap,
    tabular_f: Option<FeatureMap>,
    sigma: Mat,
    mu: &'a [f64],
    grid: CategoricalGrid,
}

impl<'a> Metrics<'a> {
    fn new(algorithm: Algorithm, reference: &'a Reference, m: &'a MrpModel, f: &'a FeatureMap, grid: &CategoricalGrid) -> Self {
        let mu = m.stationary();
        let (tabular_f, sigma) = if algorithm == Algorithm::TabularCtd {
            (Some(FeatureMap::one_hot(m.num_states())), Mat::diag(mu))
        } else {
            (None, f.sigma(mu))
        };
        Metrics { reference, f, tabular_f, sigma, mu, grid: *grid }
    }

    fn features(&self) -> &FeatureMap {
        self.tabular_f.as_ref().unwrap_or(self.f)
    }

    /// (ℓ₂, W₁, scaled loss) of `p` against the reference.
    fn losses(&self, p: &Params) -> (f64, f64, f64) {
        match (self.reference, p) {
            (Reference::Theta(star), Params::Theta { .. } | Params::Table { .. }) => {
                let Some(theta) = p.to_theta(&self.grid) else { return (f64::NAN, f64::NAN, f64::NAN) };
                let delta = theta.matrix().sub(star.matrix()).expect("reference shape matches");
                let (d, k) = (delta.rows(), delta.cols());
                let sq = weighted_sq_norm(delta.data(), d, k, &self.sigma);
                let l2 = (self.grid.iota() * sq).max(0.0).sqrt();
                let w1 = w1_mu_from_delta(delta.data(), d, k, self.grid.iota(), self.features(), self.mu);
                (l2, w1, sq / k as f64)
            }
            (Reference::Psi(star), Params::Psi(psi)) => {
                let (mut l2, mut l1) = (0.0, 0.0);
                for (s, &w) in self.mu.iter().enumerate() {
                    let e = dot(self.f.phi(s), psi) - star.value_at(self.f.phi(s));
                    l2 += w * e * e;
                    l1 += w * e.abs();
                }
                (l2.sqrt(), l1, l2)
            }
            _ => (f64::NAN, f64::NAN, f64::NAN),
        }
    }
}

/// Runs `config.t_max` iterations, logging tail-average losses at the
/// given checkpoints (T is always logged).
pub fn run(
    config: &LearnerConfig,
    m: &MrpModel,
    f: &FeatureMap,
    grid: &CategoricalGrid,
    checkpoints: &[usize],
    reference: &Reference,
    initial: Option<Params>,
) -> Result<RunOutput> {
    run_monitored(config, m, f, grid, checkpoints, reference, initial, |_| Control::Continue)
}

/// [`run`] with a callback after every checkpoint that may stop the run.
#[allow(clippy::too_many_arguments)]
pub fn run_monitored(
    config: &LearnerConfig,
    m: &MrpModel,
    f: &FeatureMap,
    grid: &CategoricalGrid,
    checkpoints: &[usize],
    reference: &Reference,
    initial: Option<Params>,
    mut monitor: impl FnMut(&TraceRow) -> Control,
) -> Result<RunOutput> {
    config.validate()?;
    if f.num_states() != m.num_states() {
        return Err(LearnerError::Shape { expected: m.num_states(), got: f.num_states() });
    }
    let algorithm = config.algorithm;
    let params = initial.unwrap_or_else(|| Params::zeros_for(algorithm, f.d(), m.num_states(), grid));
    let mut state = LearnerState::new(params, config.t_max);
    let n = state.params.data().len();

    let mut cps: Vec<usize> = checkpoints.iter().copied().filter(|&t| t <= config.t_max).collect();
    cps.push(0);
    cps.push(config.t_max);
    cps.sort_unstable();
    cps.dedup();
    // Prefix sums S_{u} = Σ_{v ≤ u} θ_v, snapshotted just before each window start.
    let mut starts: Vec<usize> = cps.iter().map(|t| t / 2).filter(|&s| s > 0).collect();
    starts.sort_unstable();
    starts.dedup();
    let mut snapshots: HashMap<usize, (Vec<f64>, Vec<f64>)> = HashMap::new();
    let mut prefix = CompensatedSum::new(n);
    let mut next_start = 0usize;
    let mut next_cp = 0usize;

    let metrics = Metrics::new(algorithm, reference, m, f, grid);
    let mut trace = RunTrace::default();
    let mut stream = SampleStream::new(config.seed, config.stream_id, config.mode);
    let mut batch = vec![Transition { s: 0, r: 0.0, next: 0 }; config.batch];
    let mut ws = Workspace::new();
    let mut stopped = false;

    let mut t = 0usize;
    loop {
        // θ_t is current: fold it into the prefix sum, then handle windows.
        prefix.add(state.params.data());
        while next_start < starts.len() && starts[next_start] == t + 1 {
            snapshots.insert(t + 1, (prefix.sum.clone(), prefix.comp.clone()));
            next_start += 1;
        }
        while next_cp < cps.len() && cps[next_cp] == t {
            let start = t / 2;
            let count = (t - start + 1) as f64;
            let avg: Vec<f64> = match snapshots.get(&start) {
                Some((s0, c0)) => (0..n).map(|i| ((prefix.sum[i] - s0[i]) + (prefix.comp[i] - c0[i])) / count).collect(),
                None => prefix.value().into_iter().map(|x| x / count).collect(),
            };
            let avg = state.params.with_data(avg);
            let (l2, w1, scaled) = metrics.losses(&avg);
            let (_, _, iterate_scaled) = metrics.losses(&state.params);
            if iterate_scaled >= config.divergence_threshold || !state.params.is_finite() {
                state.diverged = true;
            }
            let row = TraceRow {
                t,
                loss_l2_mu: l2,
                loss_w1_mu: w1,
                theta_norm: state.params.norm(),
                diverged: state.diverged,
                scaled_loss: scaled,
                iterate_scaled_loss: iterate_scaled,
            };
            let control = monitor(&row);
            trace.rows.push(row);
            next_cp += 1;
            if control == Control::Stop {
                stopped = true;
            }
        }
        if t >= config.t_max || state.diverged || stopped {
            break;
        }
        stream.draw_batch(m, &mut batch)?;
        batch_step(algorithm, &mut state, &batch, m, f, grid, config.alpha, &mut ws)?;
        t += 1;
        if state.diverged {
            // Record the blow-up at the step where it happened.
            trace.rows.push(TraceRow {
                t,
                loss_l2_mu: f64::NAN,
                loss_w1_mu: f64::NAN,
                theta_norm: state.params.norm(),
                diverged: true,
                scaled_loss: f64::NAN,
                iterate_scaled_loss: f64::NAN,
            });
            break;
        }
    }
    let complete = t == config.t_max && !state.diverged;
    Ok(RunOutput {
        trace,
        final_average: if complete { state.tail_average() } else { None },
        final_iterate: state.params.clone(),
        diverged: state.diverged,
        steps: t,
    })
}
