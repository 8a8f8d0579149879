//! Exact fixed points of the linear-categorical and linear value Bellman
//! equations, the exact projected operators, and the approximation-error
//! report.
//!
//! All expectations are finite sums over (state, outcome) pairs weighted by
//! μπ(s)·P(outcome|s). Parameters use the CDF representation
//! F_k(s; Θ) = φ(s)ᵀΘ[:, k] + (k+1)/(K+1) with Θ of shape d×K.

use thiserror::Error;

use crate::bellman::{projected_bellman_matrix, ShiftStencil};
use crate::categorical::{
    cumsum, diff, project_categorical, pushforward_project, CategoricalGrid, GeneralMeasure, MeasureError,
    PiecewiseCdf, SignedCategoricalMeasure,
};
use crate::linalg::{
    dot, eigvals_sym, kron_accumulate, norm1, solve_refined, unvectorize, vectorize, LinalgError, Lu, Mat,
    KRON_SIZE_CAP,
};
use crate::mdp::{FeatureMap, MdpError, MrpModel};

/// Condition-number guard for the direct solves.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FixedPointError {
    #[error("feature covariance is singular (λ_min = {0:e})")]
    SingularSigma(f64),
    #[error("system matrix is ill-conditioned or singular: {0}")]
    Solve(LinalgError),
    #[error("dK = {0} exceeds the dense size cap")]
    TooLarge(usize),
    #[error("parameter shape {rows}x{cols} does not match d={d}, K={k}")]
    Shape { rows: usize, cols: usize, d: usize, k: usize },
    #[error("reference resolution K_ref={k_ref} must be at least 8·K = {min}")]
    ReferenceTooCoarse { k_ref: usize, min: usize },
    #[error("projected-operator iteration did not converge in {0} steps")]
    NoConvergence(usize),
    #[error("model: {0}")]
    Model(#[from] MdpError),
    #[error("measure: {0}")]
    Measure(#[from] MeasureError),
    #[error("bellman: {0}")]
    Bellman(#[from] crate::bellman::BellmanError),
    #[error("linear algebra: {0}")]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, FixedPointError>;

/// Linear-categorical parameter Θ (d×K).
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaParam {
    grid: CategoricalGrid,
    theta: Mat,
}

impl ThetaParam {
    pub fn new(grid: CategoricalGrid, theta: Mat) -> Result<Self> {
        if theta.cols() != grid.k() {
            return Err(FixedPointError::Shape { rows: theta.rows(), cols: theta.cols(), d: theta.rows(), k: grid.k() });
        }
        Ok(ThetaParam { grid, theta })
    }

    pub fn zeros(grid: CategoricalGrid, d: usize) -> Self {
        ThetaParam { grid, theta: Mat::zeros(d, grid.k()) }
    }

    /// From θ = vec(Θ) (column stacking, θ(k) blocks of length d).
    pub fn from_vec(grid: CategoricalGrid, d: usize, theta: &[f64]) -> Result<Self> {
        ThetaParam::new(grid, unvectorize(theta, d, grid.k())?)
    }

    pub fn grid(&self) -> &CategoricalGrid {
        &self.grid
    }

    pub fn d(&self) -> usize {
        self.theta.rows()
    }

    pub fn matrix(&self) -> &Mat {
        &self.theta
    }

    /// θ = vec(Θ).
    pub fn vec(&self) -> Vec<f64> {
        vectorize(&self.theta)
    }

    /// Θᵀφ without the (k+1)/(K+1) offset.
    pub fn apply_transpose(&self, phi: &[f64]) -> Vec<f64> {
        let k = self.grid.k();
        let mut out = vec![0.0; k];
        for (i, &fi) in phi.iter().enumerate() {
            if fi != 0.0 {
                for (o, &t) in out.iter_mut().zip(self.theta.row(i)) {
                    *o += fi * t;
                }
            }
        }
        out
    }

    /// F_k(s) = φᵀθ(k) + (k+1)/(K+1).
    pub fn cdf_at(&self, phi: &[f64]) -> Vec<f64> {
        let k1 = self.grid.k() as f64 + 1.0;
        let mut f = self.apply_transpose(phi);
        for (k, x) in f.iter_mut().enumerate() {
            *x += (k as f64 + 1.0) / k1;
        }
        f
    }

    /// The signed measure η_θ(s) for features φ(s).
    pub fn measure_at(&self, phi: &[f64]) -> SignedCategoricalMeasure {
        SignedCategoricalMeasure::new(self.grid, diff(&self.cdf_at(phi))).expect("length K by construction")
    }

    /// V_θ(s) = 1/(2(1−γ)) − ι φᵀΘ1_K.
    pub fn value_at(&self, phi: &[f64]) -> f64 {
        0.5 * self.grid.x_max() - self.grid.iota() * self.apply_transpose(phi).iter().sum::<f64>()
    }

    /// ‖θ − other‖²_{I_K⊗Σφ} = tr(ΔᵀΣφΔ).
    pub fn weighted_sq_distance(&self, other: &ThetaParam, sigma: &Mat) -> f64 {
        let delta = self.theta.sub(&other.theta).expect("same shape");
        weighted_sq_norm(delta.data(), self.d(), self.grid.k(), sigma)
    }

    /// ℓ_{2,μπ}(η_θ, η_other) = √(ι‖θ − other‖²_{I⊗Σφ}).
    pub fn l2_mu_distance(&self, other: &ThetaParam, sigma: &Mat) -> f64 {
        (self.grid.iota() * self.weighted_sq_distance(other, sigma)).max(0.0).sqrt()
    }

    /// W_{1,μπ}(η_θ, η_other) = (Σ_s μ(s) W₁(η_θ(s), η_other(s))²)^{1/2}.
    pub fn w1_mu_distance(&self, other: &ThetaParam, f: &FeatureMap, mu: &[f64]) -> f64 {
        let delta = self.theta.sub(&other.theta).expect("same shape");
        w1_mu_from_delta(delta.data(), self.d(), self.grid.k(), self.grid.iota(), f, mu)
    }
}

/// tr(ΔᵀΣΔ) for Δ stored row-major d×K.
pub fn weighted_sq_norm(delta: &[f64], d: usize, k: usize, sigma: &Mat) -> f64 {
    let mut total = 0.0;
    for i in 0..d {
        let ri = &delta[i * k..(i + 1) * k];
        for j in 0..d {
            let s = sigma.get(i, j);
            if s != 0.0 {
                total += s * dot(ri, &delta[j * k..(j + 1) * k]);
            }
        }
    }
    total
}

/// W_{1,μπ} for a parameter difference Δ stored row-major d×K.
pub fn w1_mu_from_delta(delta: &[f64], d: usize, k: usize, iota: f64, f: &FeatureMap, mu: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut gap = vec![0.0; k];
    for (s, &w) in mu.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        gap.iter_mut().for_each(|x| *x = 0.0);
        for (i, &fi) in f.phi(s).iter().enumerate().take(d) {
            for (g, &t) in gap.iter_mut().zip(&delta[i * k..(i + 1) * k]) {
                *g += fi * t;
            }
        }
        let w1 = iota * norm1(&gap);
        total += w * w1 * w1;
    }
    total.sqrt()
}

/// Linear value parameter ψ.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiParam {
    pub psi: Vec<f64>,
}

impl PsiParam {
    pub fn value_at(&self, phi: &[f64]) -> f64 {
        dot(&self.psi, phi)
    }
}

/// Ā, b̄ and feature moments for one (model, features, grid) triple.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub grid: CategoricalGrid,
    pub d: usize,
    pub abar: Mat,
    pub bbar: Vec<f64>,
    pub sigma_phi: Mat,
    pub lambda_min: f64,
}

/// Σφ and its smallest eigenvalue, failing when Σφ is not positive definite.
pub fn feature_covariance(m: &MrpModel, f: &FeatureMap) -> Result<(Mat, f64)> {
    f.check_model(m)?;
    let sigma = f.sigma(m.stationary());
    let lam = eigvals_sym(&sigma.symmetrize()?)?[0];
    if !(lam > 0.0) || lam <= 1e-14 * sigma.max_abs() {
        return Err(FixedPointError::SingularSigma(lam));
    }
    Ok((sigma, lam))
}

/// Groups E[φ(s)φ(s′)ᵀ] and E[φ(s)] by reward value.
fn moments_by_reward(m: &MrpModel, f: &FeatureMap) -> Vec<(f64, Mat, Vec<f64>)> {
    let d = f.d();
    let mut groups: Vec<(f64, Mat, Vec<f64>)> = m
        .reward_levels()
        .into_iter()
        .map(|r| (r, Mat::zeros(d, d), vec![0.0; d]))
        .collect();
    for (w, s, o) in m.weighted_outcomes() {
        let idx = groups.partition_point(|g| g.0 < o.reward);
        let (_, cross, mean) = &mut groups[idx];
        let (a, b) = (f.phi(s), f.phi(o.next));
        for i in 0..d {
            mean[i] += w * a[i];
            for j in 0..d {
                cross.add_to(i, j, w * a[i] * b[j]);
            }
        }
    }
    groups
}

/// Ā = I_K⊗Σφ − E[(CG̃(r)C⁻¹)⊗(φ(s)φ(s′)ᵀ)] and
/// b̄ = (K+1)⁻¹ E[(C(Σ_j g_j(r) − 1_K))⊗φ(s)], summed exactly.
pub fn assemble_system(m: &MrpModel, f: &FeatureMap, grid: &CategoricalGrid) -> Result<SystemMatrices> {
    let (sigma, lambda_min) = feature_covariance(m, f)?;
    let d = f.d();
    let k = grid.k();
    let n = d * k;
    if n > KRON_SIZE_CAP {
        return Err(FixedPointError::TooLarge(n));
    }
    let mut abar = Mat::zeros(n, n);
    kron_accumulate(&mut abar, 1.0, &Mat::identity(k), &sigma)?;
    let mut bbar = vec![0.0; n];
    for (r, cross, mean) in moments_by_reward(m, f) {
        let y = projected_bellman_matrix(r, grid)?;
        kron_accumulate(&mut abar, -1.0, &y, &cross)?;
        let c = ShiftStencil::new(r, grid)?.bias();
        for (kk, &ck) in c.iter().enumerate() {
            for i in 0..d {
                bbar[kk * d + i] += ck * mean[i];
            }
        }
    }
    Ok(SystemMatrices { grid: *grid, d, abar, bbar, sigma_phi: sigma, lambda_min })
}

/// θ* solving Āθ = b̄.
pub fn solve_theta_star(sys: &SystemMatrices) -> Result<ThetaParam> {
    let theta = solve_refined(&sys.abar, &sys.bbar, MAX_CONDITION).map_err(FixedPointError::Solve)?;
    ThetaParam::from_vec(sys.grid, sys.d, &theta)
}

/// ‖Āθ − b̄‖.
pub fn system_residual(sys: &SystemMatrices, theta: &ThetaParam) -> f64 {
    let ax = sys.abar.matvec(&theta.vec()).expect("conformable");
    ax.iter().zip(&sys.bbar).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Π_{φ,K}: the μπ-weighted least-squares fit of per-state categorical
/// measures, Θ = Σφ⁻¹ Σ_s μ(s) φ(s)(C(p(s) − (K+1)⁻¹1))ᵀ.
pub fn project_linear(
    measures: &[SignedCategoricalMeasure],
    f: &FeatureMap,
    mu: &[f64],
    sigma_lu: &Lu,
    grid: &CategoricalGrid,
) -> Result<ThetaParam> {
    let d = f.d();
    let k = grid.k();
    let u = 1.0 / (k as f64 + 1.0);
    let mut rhs = Mat::zeros(d, k);
    for (s, nu) in measures.iter().enumerate() {
        let w = mu[s];
        if w == 0.0 {
            continue;
        }
        let centered: Vec<f64> = nu.p().iter().map(|x| x - u).collect();
        let fc = cumsum(&centered);
        let phi = f.phi(s);
        for i in 0..d {
            for (kk, &v) in fc.iter().enumerate() {
                rhs.add_to(i, kk, w * phi[i] * v);
            }
        }
    }
    let mut theta = Mat::zeros(d, k);
    for kk in 0..k {
        let col = sigma_lu.solve(&rhs.col(kk));
        for (i, v) in col.into_iter().enumerate() {
            theta.set(i, kk, v);
        }
    }
    ThetaParam::new(*grid, theta)
}

/// Π_K𝒯^π applied state-by-state to the measures η_θ(s) (before the
/// linear projection): p̃(s) = Σ_o P(o|s) Π_K(b_{r,γ})#η_θ(s′).
fn categorical_bellman(theta: &ThetaParam, m: &MrpModel, f: &FeatureMap) -> Result<Vec<SignedCategoricalMeasure>> {
    let grid = *theta.grid();
    let next: Vec<SignedCategoricalMeasure> = (0..m.num_states()).map(|s| theta.measure_at(f.phi(s))).collect();
    let mut out = Vec::with_capacity(m.num_states());
    for s in 0..m.num_states() {
        let mut acc = vec![0.0; grid.k()];
        for o in m.outcomes(s) {
            if o.prob == 0.0 {
                continue;
            }
            let pushed = pushforward_project(&next[o.next], o.reward)?;
            for (a, &x) in acc.iter_mut().zip(pushed.p()) {
                *a += o.prob * x;
            }
        }
        out.push(SignedCategoricalMeasure::new(grid, acc)?);
    }
    Ok(out)
}

/// Π_{φ,K}𝒯^π θ, computed exactly.
pub fn apply_projected_operator(theta: &ThetaParam, m: &MrpModel, f: &FeatureMap) -> Result<ThetaParam> {
    let (sigma, _) = feature_covariance(m, f)?;
    let lu = Lu::factor(&sigma)?;
    let tilde = categorical_bellman(theta, m, f)?;
    project_linear(&tilde, f, m.stationary(), &lu, theta.grid())
}

/// Result of iterating the projected operator from Θ = 0.
#[derive(Debug, Clone)]
pub struct OperatorIteration {
    pub theta: ThetaParam,
    /// ℓ_{2,μπ} gaps between successive iterates.
    pub gaps: Vec<f64>,
}

/// Iterates Π_{φ,K}𝒯^π from zero until the ℓ_{2,μπ} gap drops below `tol`.
pub fn iterate_projected_operator(
    m: &MrpModel,
    f: &FeatureMap,
    grid: &CategoricalGrid,
    tol: f64,
    max_iter: usize,
) -> Result<OperatorIteration> {
    let (sigma, _) = feature_covariance(m, f)?;
    let lu = Lu::factor(&sigma)?;
    let mut theta = ThetaParam::zeros(*grid, f.d());
    let mut gaps = Vec::new();
    for _ in 0..max_iter {
        let tilde = categorical_bellman(&theta, m, f)?;
        let next = project_linear(&tilde, f, m.stationary(), &lu, grid)?;
        let gap = next.l2_mu_distance(&theta, &sigma);
        gaps.push(gap);
        theta = next;
        if gap <= tol {
            return Ok(OperatorIteration { theta, gaps });
        }
    }
    Err(FixedPointError::NoConvergence(max_iter))
}

/// ψ* solving (Σφ − γE[φ(s)φ(s′)ᵀ])ψ = E[φ(s) r].
pub fn solve_psi_star(m: &MrpModel, f: &FeatureMap) -> Result<PsiParam> {
    f.check_model(m)?;
    let (a, b) = td_system(m, f);
    let psi = solve_refined(&a, &b, MAX_CONDITION).map_err(FixedPointError::Solve)?;
    Ok(PsiParam { psi })
}

/// (Σφ − γE[φ(s)φ(s′)ᵀ], E[φ(s) r]).
pub fn td_system(m: &MrpModel, f: &FeatureMap) -> (Mat, Vec<f64>) {
    let d = f.d();
    let mut a = f.sigma(m.stationary());
    let mut b = vec![0.0; d];
    for (w, s, o) in m.weighted_outcomes() {
        let (x, y) = (f.phi(s), f.phi(o.next));
        for i in 0..d {
            b[i] += w * x[i] * o.reward;
            for j in 0..d {
                a.add_to(i, j, -m.gamma() * w * x[i] * y[j]);
            }
        }
    }
    (a, b)
}

/// Tabular categorical fixed point η^{π,K}: iterates Π_K𝒯^π from the
/// uniform measure until the largest per-state ℓ₂ change is below `tol`.
pub fn tabular_fixed_point(
    m: &MrpModel,
    grid: &CategoricalGrid,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<SignedCategoricalMeasure>> {
    let mut eta = vec![SignedCategoricalMeasure::uniform(*grid); m.num_states()];
    for _ in 0..max_iter {
        let mut next = Vec::with_capacity(eta.len());
        let mut change: f64 = 0.0;
        for s in 0..m.num_states() {
            let mut acc = vec![0.0; grid.k()];
            for o in m.outcomes(s) {
                let pushed = pushforward_project(&eta[o.next], o.reward)?;
                for (a, &x) in acc.iter_mut().zip(pushed.p()) {
                    *a += o.prob * x;
                }
            }
            let nu = SignedCategoricalMeasure::new(*grid, acc)?;
            change = change.max(crate::categorical::cramer_l2(&nu, &eta[s])?);
            next.push(nu);
        }
        eta = next;
        if change <= tol {
            return Ok(eta);
        }
    }
    Err(FixedPointError::NoConvergence(max_iter))
}

/// Terms of the approximation-error bound, with η^π replaced by the tabular
/// fixed point at resolution K_ref.
#[derive(Debug, Clone)]
pub struct ApproxErrorReport {
    pub k: usize,
    pub k_ref: usize,
    /// W²_{1,μπ}(η_ref, η_{θ*}).
    pub lhs: f64,
    /// K⁻¹(1−γ)⁻³.
    pub resolution_term: f64,
    /// (1−γ)⁻² ℓ²_{2,μπ}(Π_K η_ref, Π_{φ,K} η_ref).
    pub projection_term: f64,
    /// Bound on ℓ_{2,μπ}(η^π, η_ref): K_ref^{-1/2}(1−γ)^{-1}.
    pub reference_l2_error: f64,
    /// Upper bound on √lhs: √(K⁻¹(1−γ)⁻³ + (1−γ)⁻²(e + 2ε)²) + ε/√(1−γ),
    /// where e² is the unscaled projection term and ε the reference error.
    pub sqrt_bound: f64,
    pub holds: bool,
}

impl ApproxErrorReport {
    pub fn rhs(&self) -> f64 {
        self.resolution_term + self.projection_term
    }

    /// Additive slack on the squared scale: lhs ≤ rhs + slack iff the bound holds.
    pub fn slack(&self) -> f64 {
        self.sqrt_bound * self.sqrt_bound - self.rhs()
    }
}

pub fn approximation_error_report(
    m: &MrpModel,
    f: &FeatureMap,
    grid: &CategoricalGrid,
    k_ref: usize,
) -> Result<ApproxErrorReport> {
    let k = grid.k();
    if k_ref < 8 * k {
        return Err(FixedPointError::ReferenceTooCoarse { k_ref, min: 8 * k });
    }
    let gamma = grid.gamma();
    let ref_grid = CategoricalGrid::new(k_ref, gamma)?;
    let eta_ref = tabular_fixed_point(m, &ref_grid, 1e-13, 100_000)?;
    let sys = assemble_system(m, f, grid)?;
    let theta_star = solve_theta_star(&sys)?;
    let mu = m.stationary();

    let mut lhs = 0.0;
    for (s, nu) in eta_ref.iter().enumerate() {
        let a = PiecewiseCdf::from_categorical(nu);
        let b = PiecewiseCdf::from_categorical(&theta_star.measure_at(f.phi(s)));
        let w1 = a.w1(&b);
        lhs += mu[s] * w1 * w1;
    }

    let projected: Vec<SignedCategoricalMeasure> = eta_ref
        .iter()
        .map(|nu| project_categorical(&GeneralMeasure::from_categorical(nu), grid))
        .collect::<std::result::Result<_, _>>()?;
    let lu = Lu::factor(&sys.sigma_phi)?;
    let fitted = project_linear(&projected, f, mu, &lu, grid)?;
    let mut e2 = 0.0;
    for (s, nu) in projected.iter().enumerate() {
        let d = crate::categorical::cramer_l2(nu, &fitted.measure_at(f.phi(s)))?;
        e2 += mu[s] * d * d;
    }
    let one_minus = 1.0 - gamma;
    let resolution_term = 1.0 / (k as f64 * one_minus.powi(3));
    let projection_term = e2 / one_minus.powi(2);
    let eps = 1.0 / ((k_ref as f64).sqrt() * one_minus);
    let e = e2.sqrt();
    let sqrt_bound =
        (resolution_term + (e + 2.0 * eps).powi(2) / one_minus.powi(2)).sqrt() + eps / one_minus.sqrt();
    Ok(ApproxErrorReport {
        k,
        k_ref,
        lhs,
        resolution_term,
        projection_term,
        reference_l2_error: eps,
        sqrt_bound,
        holds: lhs.sqrt() <= sqrt_bound,
    })
}
