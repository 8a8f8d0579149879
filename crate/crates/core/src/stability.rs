//! Per-sample matrices of the vectorised Linear-CTD recursion and numerical
//! checks of their bounds.
//!
//! With θ = vec(Θ) (column stacking, index k·d + i), a transition (s, r, s′)
//! gives A = I_K⊗φ(s)φ(s)ᵀ − Y(r)⊗φ(s)φ(s′)ᵀ with Y(r) = CG̃(r)C⁻¹, and
//! b = c(r)⊗φ(s) with c(r) = (K+1)⁻¹C(Σ_j g_j(r) − 1). The Linear-CTD step is
//! θ ← θ − α(Aθ − b). Expectations below are exact sums over the finite
//! outcome set unless the function says Monte Carlo.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::bellman::{projected_bellman_matrix, ShiftStencil};
use crate::categorical::CategoricalGrid;
use crate::fixed_point::{FixedPointError, SystemMatrices, ThetaParam};
use crate::linalg::{kron, kron_accumulate, norm2, psd_margin, psd_power, spectral_norm, LinalgError, Mat};
use crate::mdp::{FeatureMap, MdpError, MrpModel, SampleMode, SampleStream, Transition};

/// Slack used for the PSD-order checks.
pub const PSD_SLACK: f64 = 1e-9;

/// Largest moment order used by the Monte-Carlo decay estimate.
pub const MAX_MC_MOMENT: f64 = 8.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("p = {0} is not supported for exact enumeration (use 1, 2 or 3)")]
    Order(usize),
    #[error("step size {alpha} is outside (0, (1-√γ)/(38p)) = (0, {bound})")]
    StepSize { alpha: f64, bound: f64 },
    #[error("p = {0} must be at least 2")]
    MomentOrder(f64),
    #[error("at least 1000 trials are required, got {0}")]
    Trials(usize),
    #[error("parameter shape does not match the system")]
    Shape,
    #[error("bellman: {0}")]
    Bellman(#[from] crate::bellman::BellmanError),
    #[error("linear algebra: {0}")]
    Linalg(#[from] LinalgError),
    #[error("fixed point: {0}")]
    FixedPoint(#[from] FixedPointError),
    #[error("model: {0}")]
    Model(#[from] MdpError),
}

pub type Result<T> = std::result::Result<T, StabilityError>;

/// Outcome of one numerical check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

impl std::fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::Skipped => "skipped",
        })
    }
}

/// `value ≤ bound + tolerance`, with margin = bound − value.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub tolerance: f64,
    pub status: CheckStatus,
}

impl Check {
    pub fn upper(name: impl Into<String>, value: f64, bound: f64, tolerance: f64) -> Self {
        let ok = value.is_finite() && value <= bound + tolerance;
        Check {
            name: name.into(),
            value,
            bound,
            tolerance,
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        }
    }

    /// A PSD-order check reported through its eigenvalue margin (≥ −tolerance).
    pub fn margin(name: impl Into<String>, margin: f64, tolerance: f64) -> Self {
        Check::upper(name, -margin, 0.0, tolerance)
    }

    pub fn skipped(name: impl Into<String>) -> Self {
        Check { name: name.into(), value: f64::NAN, bound: f64::NAN, tolerance: 0.0, status: CheckStatus::Skipped }
    }

    pub fn margin_value(&self) -> f64 {
        self.bound - self.value
    }

    pub fn passed(&self) -> bool {
        self.status != CheckStatus::Fail
    }
}

/// A and b for one transition.
pub fn dense_update_terms(tr: &Transition, f: &FeatureMap, grid: &CategoricalGrid) -> Result<(Mat, Vec<f64>)> {
    let k = grid.k();
    let (x, z) = (f.phi(tr.s), f.phi(tr.next));
    let xx = Mat::outer(x, x);
    let xz = Mat::outer(x, z);
    let mut a = kron(&Mat::identity(k), &xx)?;
    kron_accumulate(&mut a, -1.0, &projected_bellman_matrix(tr.r, grid)?, &xz)?;
    let c = ShiftStencil::new(tr.r, grid)?.bias();
    let b = c.iter().flat_map(|&ck| x.iter().map(move |&xi| ck * xi)).collect();
    Ok((a, b))
}

/// θ − α(Aθ − b) with dense A and b, for cross-checking the O(dK) learner.
pub fn dense_step(theta: &[f64], tr: &Transition, f: &FeatureMap, grid: &CategoricalGrid, alpha: f64) -> Result<Vec<f64>> {
    let (a, b) = dense_update_terms(tr, f, grid)?;
    let at = a.matvec(theta)?;
    Ok(theta.iter().zip(at.iter().zip(&b)).map(|(t, (x, y))| t - alpha * (x - y)).collect())
}

/// One enumerated outcome with probability `weight` = μ(s)·P(r, s′ | s).
#[derive(Debug, Clone)]
pub struct OutcomeTerms {
    pub weight: f64,
    pub transition: Transition,
    pub a: Mat,
    pub b: Vec<f64>,
}

/// A and b for every outcome with positive probability.
pub fn enumerate_outcomes(m: &MrpModel, f: &FeatureMap, grid: &CategoricalGrid) -> Result<Vec<OutcomeTerms>> {
    f.check_model(m)?;
    let mut out = Vec::new();
    for (w, s, o) in m.weighted_outcomes() {
        if w <= 0.0 {
            continue;
        }
        let transition = Transition { s, r: o.reward, next: o.next };
        let (a, b) = dense_update_terms(&transition, f, grid)?;
        out.push(OutcomeTerms { weight: w, transition, a, b });
    }
    Ok(out)
}

/// Noise quantities of the recursion at θ*.
#[derive(Debug, Clone)]
pub struct NoiseStats {
    /// max over outcomes of max(‖A‖, ‖A − Ā‖).
    pub c_a: f64,
    /// max over outcomes of ‖A‖.
    pub max_a_norm: f64,
    /// max over outcomes of ‖e‖ with e = Aθ* − b.
    pub c_e: f64,
    /// E‖e‖² = tr E[eeᵀ].
    pub trace_sigma_e: f64,
    /// max over outcomes of ‖b‖.
    pub max_b_norm: f64,
    /// ‖θ*‖.
    pub theta_star_norm: f64,
    /// ‖θ*‖²_{I_K⊗Σφ}.
    pub theta_star_weighted_sq: f64,
    pub gamma: f64,
    pub k: usize,
    pub resolution_ok: bool,
    pub weights: Vec<f64>,
    pub a_mats: Vec<Mat>,
    pub e_vecs: Vec<Vec<f64>>,
}

pub fn noise_stats(
    m: &MrpModel,
    f: &FeatureMap,
    grid: &CategoricalGrid,
    sys: &SystemMatrices,
    theta_star: &ThetaParam,
) -> Result<NoiseStats> {
    if theta_star.d() != sys.d || theta_star.grid().k() != grid.k() || sys.grid.k() != grid.k() {
        return Err(StabilityError::Shape);
    }
    let outcomes = enumerate_outcomes(m, f, grid)?;
    let theta = theta_star.vec();
    let mut stats = NoiseStats {
        c_a: 0.0,
        max_a_norm: 0.0,
        c_e: 0.0,
        trace_sigma_e: 0.0,
        max_b_norm: 0.0,
        theta_star_norm: norm2(&theta),
        theta_star_weighted_sq: theta_star.weighted_sq_distance(&ThetaParam::zeros(*grid, sys.d), &sys.sigma_phi),
        gamma: grid.gamma(),
        k: grid.k(),
        resolution_ok: grid.resolution_ok(),
        weights: Vec::with_capacity(outcomes.len()),
        a_mats: Vec::with_capacity(outcomes.len()),
        e_vecs: Vec::with_capacity(outcomes.len()),
    };
    for o in outcomes {
        let a_norm = spectral_norm(&o.a);
        let dev_norm = spectral_norm(&o.a.sub(&sys.abar)?);
        let e: Vec<f64> = o.a.matvec(&theta)?.iter().zip(&o.b).map(|(x, y)| x - y).collect();
        let e_norm = norm2(&e);
        stats.max_a_norm = stats.max_a_norm.max(a_norm);
        stats.c_a = stats.c_a.max(a_norm.max(dev_norm));
        stats.c_e = stats.c_e.max(e_norm);
        stats.trace_sigma_e += o.weight * e_norm * e_norm;
        stats.max_b_norm = stats.max_b_norm.max(norm2(&o.b));
        stats.weights.push(o.weight);
        stats.a_mats.push(o.a);
        stats.e_vecs.push(e);
    }
    Ok(stats)
}

impl NoiseStats {
    /// The stated and proof-level bounds. The resolution-dependent ones are
    /// skipped when K < 1/(1−γ).
    pub fn bound_checks(&self, tolerance: f64) -> Vec<Check> {
        let g = self.gamma;
        let sg = g.sqrt();
        let k = self.k as f64;
        let mut out = vec![
            Check::upper("per-outcome ‖A‖ ≤ 1+√γ", self.max_a_norm, 1.0 + sg, tolerance),
            Check::upper("C_A ≤ 2(1+√γ)", self.c_a, 2.0 * (1.0 + sg), tolerance),
            Check::upper("C_A ≤ 4", self.c_a, 4.0, tolerance),
        ];
        if self.resolution_ok {
            let tn = self.theta_star_norm;
            out.push(Check::upper("per-outcome ‖b‖ ≤ 3√K(1−γ)", self.max_b_norm, 3.0 * k.sqrt() * (1.0 - g), tolerance));
            out.push(Check::upper(
                "C_e ≤ √(2(1+γ))‖θ*‖ + 3√K(1−γ)",
                self.c_e,
                (2.0 * (1.0 + g)).sqrt() * tn + 3.0 * k.sqrt() * (1.0 - g),
                tolerance,
            ));
            out.push(Check::upper("C_e ≤ 4(‖θ*‖ + √K(1−γ))", self.c_e, 4.0 * (tn + k.sqrt() * (1.0 - g)), tolerance));
            out.push(Check::upper(
                "tr Σ_e ≤ 4(1+γ)‖θ*‖²_Σ + 18K(1−γ)²",
                self.trace_sigma_e,
                4.0 * (1.0 + g) * self.theta_star_weighted_sq + 18.0 * k * (1.0 - g).powi(2),
                tolerance,
            ));
            out.push(Check::upper(
                "tr Σ_e ≤ 18(‖θ*‖²_Σ + K(1−γ)²)",
                self.trace_sigma_e,
                18.0 * (self.theta_star_weighted_sq + k * (1.0 - g).powi(2)),
                tolerance,
            ));
        } else {
            for name in ["per-outcome ‖b‖ ≤ 3√K(1−γ)", "C_e ≤ 4(‖θ*‖ + √K(1−γ))", "tr Σ_e ≤ 18(‖θ*‖²_Σ + K(1−γ)²)"] {
                out.push(Check::skipped(name));
            }
        }
        out
    }
}

/// B = A + Aᵀ − αAᵀA, so that (I − αA)ᵀ(I − αA) = I − αB.
pub fn b_matrix(a: &Mat, alpha: f64) -> Result<Mat> {
    let mut b = a.add(&a.transpose())?;
    b.axpy(-alpha, &a.gram())?;
    Ok(b)
}

/// Margins of the matrix inequalities behind exponential stability.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub alpha: f64,
    pub p: usize,
    pub lambda_min: f64,
    /// a = (1−√γ)λ_min/2.
    pub a: f64,
    /// λ_min(I − ½αp(1−√γ)I⊗Σφ − E[(I − αB)^p]).
    pub power_margin: f64,
    /// λ_min(E[B] − (1−√γ)I⊗Σφ).
    pub eb_margin: f64,
    /// λ_min(2(1+γ)I⊗Σφ − E[AᵀA]).
    pub eata_margin: f64,
    /// λ_min(Ā + Āᵀ − 2(1−√γ)I⊗Σφ).
    pub abar_sym_margin: f64,
    /// max over outcomes of ‖B‖.
    pub max_b_norm: f64,
    /// (l, λ_min((17/16)4^l I⊗Σφ − E[B^l])) for l = 2, 3.
    pub higher_moment_margins: Vec<(usize, f64)>,
    pub slack: f64,
}

impl StabilityReport {
    pub fn checks(&self) -> Vec<Check> {
        let mut out = vec![
            Check::margin(format!("E[(I−αB)^{}] ≼ I − ½αp(1−√γ)I⊗Σφ", self.p), self.power_margin, self.slack),
            Check::margin("E[B] ≽ (1−√γ)I⊗Σφ", self.eb_margin, self.slack),
            Check::margin("E[AᵀA] ≼ 2(1+γ)I⊗Σφ", self.eata_margin, self.slack),
            Check::margin("Ā + Āᵀ ≽ 2(1−√γ)I⊗Σφ", self.abar_sym_margin, self.slack),
            Check::upper("per-outcome ‖B‖ ≤ 4", self.max_b_norm, 4.0, self.slack),
        ];
        for &(l, margin) in &self.higher_moment_margins {
            out.push(Check::margin(format!("E[B^{l}] ≼ (17/16)4^{l} I⊗Σφ"), margin, self.slack));
        }
        out
    }

    pub fn holds(&self) -> bool {
        self.checks().iter().all(Check::passed)
    }
}

/// α_{p,∞} = (1−√γ)/(38p).
pub fn alpha_p_inf(gamma: f64, p: f64) -> f64 {
    (1.0 - gamma.sqrt()) / (38.0 * p)
}

/// Exact stability check for α ∈ (0, α_{p,∞}) and p ∈ {1, 2, 3}.
pub fn stability_inequality_check(
    sys: &SystemMatrices,
    m: &MrpModel,
    f: &FeatureMap,
    grid: &CategoricalGrid,
    alpha: f64,
    p: usize,
) -> Result<StabilityReport> {
    if !(1..=3).contains(&p) {
        return Err(StabilityError::Order(p));
    }
    let bound = alpha_p_inf(grid.gamma(), p as f64);
    if !(alpha > 0.0 && alpha < bound) {
        return Err(StabilityError::StepSize { alpha, bound });
    }
    stability_margins(sys, &enumerate_outcomes(m, f, grid)?, grid, alpha, p)
}

/// The margins of [`stability_inequality_check`] without the step-size
/// range restriction. The p-th power is taken of the single-sample factor
/// (I − αA)ᵀ(I − αA) = I − αB and then averaged over outcomes.
pub fn stability_margins(
    sys: &SystemMatrices,
    outcomes: &[OutcomeTerms],
    grid: &CategoricalGrid,
    alpha: f64,
    p: usize,
) -> Result<StabilityReport> {
    if p == 0 {
        return Err(StabilityError::Order(p));
    }
    let k = grid.k();
    let n = sys.d * k;
    let gamma = grid.gamma();
    let sg = gamma.sqrt();
    let base = kron(&Mat::identity(k), &sys.sigma_phi)?;
    let eye = Mat::identity(n);

    let mut e_power = Mat::zeros(n, n);
    let mut e_b = Mat::zeros(n, n);
    let mut e_ata = Mat::zeros(n, n);
    let mut e_b2 = Mat::zeros(n, n);
    let mut e_b3 = Mat::zeros(n, n);
    let mut max_b_norm: f64 = 0.0;
    for o in outcomes {
        let b = b_matrix(&o.a, alpha)?;
        max_b_norm = max_b_norm.max(spectral_norm(&b));
        e_b.axpy(o.weight, &b)?;
        e_ata.axpy(o.weight, &o.a.gram())?;
        let b2 = b.matmul(&b)?;
        e_b2.axpy(o.weight, &b2)?;
        e_b3.axpy(o.weight, &b2.matmul(&b)?)?;
        let mut factor = eye.clone();
        factor.axpy(-alpha, &b)?;
        let mut pow = factor.clone();
        for _ in 1..p {
            pow = pow.matmul(&factor)?;
        }
        e_power.axpy(o.weight, &pow)?;
    }

    let mut rhs = eye;
    rhs.axpy(-0.5 * alpha * p as f64 * (1.0 - sg), &base)?;
    let power_margin = psd_margin(&e_power.symmetrize()?, &rhs)?;
    let eb_margin = psd_margin(&base.scale(1.0 - sg), &e_b.symmetrize()?)?;
    let eata_margin = psd_margin(&e_ata.symmetrize()?, &base.scale(2.0 * (1.0 + gamma)))?;
    let abar_sym = sys.abar.add(&sys.abar.transpose())?;
    let abar_sym_margin = psd_margin(&base.scale(2.0 * (1.0 - sg)), &abar_sym.symmetrize()?)?;
    let higher_moment_margins = vec![
        (2, psd_margin(&e_b2.symmetrize()?, &base.scale(17.0 / 16.0 * 16.0))?),
        (3, psd_margin(&e_b3.symmetrize()?, &base.scale(17.0 / 16.0 * 64.0))?),
    ];
    Ok(StabilityReport {
        alpha,
        p,
        lambda_min: sys.lambda_min,
        a: (1.0 - sg) * sys.lambda_min / 2.0,
        power_margin,
        eb_margin,
        eata_margin,
        abar_sym_margin,
        max_b_norm,
        higher_moment_margins,
        slack: PSD_SLACK,
    })
}

/// ‖E[Y(r)⊗(Σφ^{-1/2}φ(s)φ(s′)ᵀΣφ^{-1/2})]‖, bounded by √γ.
pub fn biscuit_norm(m: &MrpModel, f: &FeatureMap, grid: &CategoricalGrid, sigma: &Mat) -> Result<f64> {
    let root = psd_power(&sigma.symmetrize()?, -0.5)?;
    let d = f.d();
    let mut acc = Mat::zeros(d * grid.k(), d * grid.k());
    for (r, cross) in cross_moments_by_reward(m, f) {
        let w = root.matmul(&cross)?.matmul(&root)?;
        kron_accumulate(&mut acc, 1.0, &projected_bellman_matrix(r, grid)?, &w)?;
    }
    Ok(spectral_norm(&acc))
}

fn cross_moments_by_reward(m: &MrpModel, f: &FeatureMap) -> Vec<(f64, Mat)> {
    let d = f.d();
    let mut groups: Vec<(f64, Mat)> = m.reward_levels().into_iter().map(|r| (r, Mat::zeros(d, d))).collect();
    for (w, s, o) in m.weighted_outcomes() {
        let idx = groups.partition_point(|g| g.0 < o.reward);
        let (a, b) = (f.phi(s), f.phi(o.next));
        for i in 0..d {
            for j in 0..d {
                groups[idx].1.add_to(i, j, w * a[i] * b[j]);
            }
        }
    }
    groups
}

/// (‖E[Y⊗xzᵀ]‖, C_Y√(C_xC_z)) with Y = Y(r), x = φ(s), z = φ(s′) and the
/// tightest constants C_Y = max‖Y‖, C_x = ‖E[xxᵀ]‖, C_z = ‖E[zzᵀ]‖.
pub fn rank_one_kronecker_check(m: &MrpModel, f: &FeatureMap, grid: &CategoricalGrid) -> Result<(f64, f64)> {
    let d = f.d();
    let mut acc = Mat::zeros(d * grid.k(), d * grid.k());
    let mut c_y: f64 = 0.0;
    for (r, cross) in cross_moments_by_reward(m, f) {
        let y = projected_bellman_matrix(r, grid)?;
        c_y = c_y.max(spectral_norm(&y));
        kron_accumulate(&mut acc, 1.0, &y, &cross)?;
    }
    let mut exx = Mat::zeros(d, d);
    let mut ezz = Mat::zeros(d, d);
    for (w, s, o) in m.weighted_outcomes() {
        exx.axpy(w, &Mat::outer(f.phi(s), f.phi(s)))?;
        ezz.axpy(w, &Mat::outer(f.phi(o.next), f.phi(o.next)))?;
    }
    let bound = c_y * (spectral_norm(&exx) * spectral_norm(&ezz)).sqrt();
    Ok((spectral_norm(&acc), bound))
}

/// Monte-Carlo estimate of E^{1/p}‖Γ_t u‖^p for one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayEstimate {
    pub t: usize,
    /// Mean of ‖Γ_t u‖^p over trials (‖u‖ = 1).
    pub mean_moment: f64,
    /// Standard error of that mean.
    pub std_error: f64,
    /// mean_moment^{1/p}.
    pub estimate: f64,
    /// (1 − αa)^t.
    pub envelope: f64,
    /// mean_moment ≤ envelope^p + 4·std_error.
    pub within_band: bool,
}

#[derive(Debug, Clone)]
pub struct DecayReport {
    pub alpha: f64,
    /// Moment order actually used (clipped to [`MAX_MC_MOMENT`]).
    pub p: f64,
    pub a: f64,
    pub trials: usize,
    pub estimates: Vec<DecayEstimate>,
}

/// Applies (I − αA) for transition `tr` to u, stored row-major d×K like Θ.
fn apply_factor(u: &mut [f64], tr: &Transition, f: &FeatureMap, stencil: &ShiftStencil, alpha: f64, buf: &mut [Vec<f64>; 4]) {
    let k = stencil.k();
    let [v, w, scratch, y] = buf;
    v.iter_mut().for_each(|x| *x = 0.0);
    w.iter_mut().for_each(|x| *x = 0.0);
    for (i, (&xi, &zi)) in f.phi(tr.s).iter().zip(f.phi(tr.next)).enumerate() {
        let row = &u[i * k..(i + 1) * k];
        for kk in 0..k {
            v[kk] += xi * row[kk];
            w[kk] += zi * row[kk];
        }
    }
    stencil.apply_y_into(w, scratch, y);
    for (i, &xi) in f.phi(tr.s).iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for kk in 0..k {
            u[i * k + kk] -= alpha * xi * (v[kk] - y[kk]);
        }
    }
}

/// Monte-Carlo check of E^{1/p}‖Γ_t u‖^p ≤ (1 − αa)^t‖u‖ over random unit u
/// and i.i.d. transitions drawn from μπ. Trial i uses stream `i` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn matrix_product_decay(
    m: &MrpModel,
    f: &FeatureMap,
    grid: &CategoricalGrid,
    lambda_min: f64,
    alpha: f64,
    horizons: &[usize],
    trials: usize,
    p: f64,
    seed: u64,
) -> Result<DecayReport> {
    if !(p >= 2.0) {
        return Err(StabilityError::MomentOrder(p));
    }
    if trials < 1000 {
        return Err(StabilityError::Trials(trials));
    }
    f.check_model(m)?;
    let p = p.min(MAX_MC_MOMENT);
    let k = grid.k();
    let n = f.d() * k;
    let a = (1.0 - grid.gamma().sqrt()) * lambda_min / 2.0;
    let mut ts: Vec<usize> = horizons.to_vec();
    ts.sort_unstable();
    ts.dedup();
    let t_max = ts.last().copied().unwrap_or(0);

    let mut stencils: Vec<(f64, ShiftStencil)> = Vec::new();
    for r in m.reward_levels() {
        stencils.push((r, ShiftStencil::new(r, grid)?));
    }
    let mut sums = vec![0.0; ts.len()];
    let mut sq_sums = vec![0.0; ts.len()];
    let mut buf = [vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]];
    let mut u = vec![0.0; n];
    for trial in 0..trials {
        let mut stream = SampleStream::new(seed, trial as u64, SampleMode::Generative);
        let nrm = loop {
            for x in u.iter_mut() {
                *x = stream.rng().sample(StandardNormal);
            }
            let nrm = norm2(&u);
            if nrm > 0.0 {
                break nrm;
            }
        };
        u.iter_mut().for_each(|x| *x /= nrm);
        let mut next = 0;
        for t in 0..=t_max {
            if t > 0 {
                let tr = stream.draw_transition(m)?;
                let idx = stencils.partition_point(|s| s.0 < tr.r);
                apply_factor(&mut u, &tr, f, &stencils[idx].1, alpha, &mut buf);
            }
            if next < ts.len() && ts[next] == t {
                let v = norm2(&u).powf(p);
                sums[next] += v;
                sq_sums[next] += v * v;
                next += 1;
            }
        }
    }
    let nt = trials as f64;
    let estimates = ts
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mean = sums[i] / nt;
            let var = ((sq_sums[i] / nt - mean * mean) * nt / (nt - 1.0)).max(0.0);
            let se = (var / nt).sqrt();
            let envelope = (1.0 - alpha * a).powi(t as i32);
            DecayEstimate {
                t,
                mean_moment: mean,
                std_error: se,
                estimate: mean.powf(1.0 / p),
                envelope,
                within_band: mean <= envelope.powf(p) + 4.0 * se,
            }
        })
        .collect();
    Ok(DecayReport { alpha, p, a, trials, estimates })
}

/// (W_{1,μπ}(η_θ, η_θ*), 2K^{-1/2}(1−γ)^{-2}λ_min^{-1/2}‖Ā(θ − θ*)‖).
pub fn error_to_loss_check(
    theta: &ThetaParam,
    sys: &SystemMatrices,
    theta_star: &ThetaParam,
    m: &MrpModel,
    f: &FeatureMap,
) -> Result<(f64, f64)> {
    if theta.d() != sys.d || theta_star.d() != sys.d || theta.grid().k() != sys.grid.k() {
        return Err(StabilityError::Shape);
    }
    let lhs = theta.w1_mu_distance(theta_star, f, m.stationary());
    let delta: Vec<f64> = theta.vec().iter().zip(theta_star.vec()).map(|(a, b)| a - b).collect();
    let ad = norm2(&sys.abar.matvec(&delta)?);
    let k = sys.grid.k() as f64;
    let g = sys.grid.gamma();
    let rhs = 2.0 / (k.sqrt() * (1.0 - g).powi(2) * sys.lambda_min.sqrt()) * ad;
    Ok((lhs, rhs))
}
