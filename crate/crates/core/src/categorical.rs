//! Categorical signed measures on the grid x_k = k·ι_K, their PMF and CDF
//! views, Cramér and 1-Wasserstein distances, and the hat-function
//! projection Π_K.
//!
//! A measure stores masses p_0..p_{K-1}; the mass at x_K is 1 − Σp, so total
//! mass is 1 by construction. Entries may be negative and CDFs may leave
//! [0, 1]; distances treat F as an arbitrary real step function.

use thiserror::Error;

use crate::linalg::{norm1, norm2};

/// Tolerance for mass and support checks on general measures.
const MEASURE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("measures live on different grids (K={0}, γ={1}) vs (K={2}, γ={3})")]
    GridMismatch(usize, f64, usize, f64),
    #[error("expected {expected} masses, got {got}")]
    Length { expected: usize, got: usize },
    #[error("location {0} lies outside the support [0, {1}]")]
    OutOfSupport(f64, f64),
    #[error("total mass is {0}, expected 1")]
    Mass(f64),
    #[error("reward {0} is outside [0, 1]")]
    Reward(f64),
    #[error("segment [{0}, {1}] is reversed or non-finite")]
    Segment(f64, f64),
    #[error("non-finite value in measure")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, MeasureError>;

/// The support {x_k = k·ι_K : k = 0..K} with ι_K = 1/(K(1−γ)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoricalGrid {
    k: usize,
    gamma: f64,
    iota: f64,
}

impl CategoricalGrid {
    pub fn new(k: usize, gamma: f64) -> Result<Self> {
        if k == 0 {
            return Err(MeasureError::Grid("K must be at least 1".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(MeasureError::Grid(format!("γ = {gamma} is not in (0, 1)")));
        }
        let iota = 1.0 / (k as f64 * (1.0 - gamma));
        Ok(CategoricalGrid { k, gamma, iota })
    }

    /// Number of free masses K (the grid has K + 1 atoms).
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn iota(&self) -> f64 {
        self.iota
    }

    /// x_k = k·ι_K for k in 0..=K.
    pub fn x(&self, k: usize) -> f64 {
        k as f64 * self.iota
    }

    /// x_K = 1/(1−γ).
    pub fn x_max(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }

    pub fn support(&self) -> Vec<f64> {
        (0..=self.k).map(|k| self.x(k)).collect()
    }

    /// K ≥ 1/(1−γ). Algorithms run for any K; several bounds need this.
    pub fn resolution_ok(&self) -> bool {
        self.k as f64 >= 1.0 / (1.0 - self.gamma) - 1e-9
    }

    fn check_same(&self, other: &CategoricalGrid) -> Result<()> {
        if self.k != other.k || self.gamma != other.gamma {
            return Err(MeasureError::GridMismatch(self.k, self.gamma, other.k, other.gamma));
        }
        Ok(())
    }
}

/// Triangular kernel (1 − |u|)₊.
#[inline]
pub fn hat(u: f64) -> f64 {
    (1.0 - u.abs()).max(0.0)
}

/// Signed measure Σ_{k<K} p_k δ_{x_k} + (1 − Σp) δ_{x_K}.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedCategoricalMeasure {
    grid: CategoricalGrid,
    p: Vec<f64>,
}

impl SignedCategoricalMeasure {
    pub fn new(grid: CategoricalGrid, p: Vec<f64>) -> Result<Self> {
        if p.len() != grid.k {
            return Err(MeasureError::Length { expected: grid.k, got: p.len() });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(MeasureError::NonFinite);
        }
        Ok(SignedCategoricalMeasure { grid, p })
    }

    /// δ_{x_j} for j in 0..=K.
    pub fn dirac(grid: CategoricalGrid, j: usize) -> Result<Self> {
        if j > grid.k {
            return Err(MeasureError::Length { expected: grid.k + 1, got: j + 1 });
        }
        let mut p = vec![0.0; grid.k];
        if j < grid.k {
            p[j] = 1.0;
        }
        Ok(SignedCategoricalMeasure { grid, p })
    }

    /// Discrete uniform distribution on the K + 1 atoms.
    pub fn uniform(grid: CategoricalGrid) -> Self {
        SignedCategoricalMeasure { grid, p: vec![1.0 / (grid.k as f64 + 1.0); grid.k] }
    }

    pub fn grid(&self) -> &CategoricalGrid {
        &self.grid
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    /// Implicit mass at x_K.
    pub fn p_last(&self) -> f64 {
        1.0 - self.p.iter().sum::<f64>()
    }

    /// All K + 1 masses.
    pub fn full_pmf(&self) -> Vec<f64> {
        let mut v = self.p.clone();
        v.push(self.p_last());
        v
    }

    pub fn cdf(&self) -> CdfVector {
        CdfVector { grid: self.grid, f: cumsum(&self.p) }
    }

    pub fn mean(&self) -> f64 {
        measure_mean(self)
    }

    pub fn resolution_ok(&self) -> bool {
        self.grid.resolution_ok()
    }

    /// Plain CSV row: K, γ, p_0, …, p_{K−1}.
    pub fn to_csv_row(&self) -> String {
        let mut s = format!("{},{}", self.grid.k, self.grid.gamma);
        for x in &self.p {
            s.push(',');
            s.push_str(&format!("{x}"));
        }
        s
    }
}

/// Partial sums F_k = Σ_{j≤k} p_j for k < K.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfVector {
    grid: CategoricalGrid,
    f: Vec<f64>,
}

impl CdfVector {
    pub fn new(grid: CategoricalGrid, f: Vec<f64>) -> Result<Self> {
        if f.len() != grid.k {
            return Err(MeasureError::Length { expected: grid.k, got: f.len() });
        }
        Ok(CdfVector { grid, f })
    }

    pub fn values(&self) -> &[f64] {
        &self.f
    }

    pub fn to_measure(&self) -> SignedCategoricalMeasure {
        SignedCategoricalMeasure { grid: self.grid, p: diff(&self.f) }
    }
}

/// C·v: running sum.
pub fn cumsum(v: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    v.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

/// C⁻¹·v: first differences.
pub fn diff(v: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    v.iter()
        .map(|&x| {
            let d = x - prev;
            prev = x;
            d
        })
        .collect()
}

/// A uniform mass spread over [left, right].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub left: f64,
    pub right: f64,
    pub mass: f64,
}

/// Finite combination of atoms and uniform segments with total mass 1.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralMeasure {
    atoms: Vec<(f64, f64)>,
    segments: Vec<Segment>,
}

impl GeneralMeasure {
    pub fn new(atoms: Vec<(f64, f64)>, segments: Vec<Segment>) -> Result<Self> {
        if atoms.iter().any(|(x, m)| !x.is_finite() || !m.is_finite()) {
            return Err(MeasureError::NonFinite);
        }
        for s in &segments {
            if !(s.left.is_finite() && s.right.is_finite() && s.mass.is_finite()) || s.left > s.right {
                return Err(MeasureError::Segment(s.left, s.right));
            }
        }
        let total: f64 =
            atoms.iter().map(|a| a.1).sum::<f64>() + segments.iter().map(|s| s.mass).sum::<f64>();
        if (total - 1.0).abs() > MEASURE_TOL {
            return Err(MeasureError::Mass(total));
        }
        Ok(GeneralMeasure { atoms, segments })
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn dirac(x: f64) -> Self {
        GeneralMeasure { atoms: vec![(x, 1.0)], segments: vec![] }
    }

    pub fn uniform(left: f64, right: f64) -> Result<Self> {
        GeneralMeasure::new(vec![], vec![Segment { left, right, mass: 1.0 }])
    }

    /// Atom list of a categorical measure, including the implicit last atom.
    pub fn from_categorical(nu: &SignedCategoricalMeasure) -> Self {
        let atoms = nu.full_pmf().into_iter().enumerate().map(|(k, m)| (nu.grid.x(k), m)).collect();
        GeneralMeasure { atoms, segments: vec![] }
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|(x, m)| x * m).sum::<f64>()
            + self.segments.iter().map(|s| s.mass * 0.5 * (s.left + s.right)).sum::<f64>()
    }

    /// ν([0, x]).
    pub fn cdf_at(&self, x: f64) -> f64 {
        let mut f: f64 = self.atoms.iter().filter(|a| a.0 <= x).map(|a| a.1).sum();
        for s in &self.segments {
            if x >= s.right {
                f += s.mass;
            } else if x > s.left {
                f += s.mass * (x - s.left) / (s.right - s.left);
            }
        }
        f
    }

    /// ν([0, x)).
    pub fn cdf_left(&self, x: f64) -> f64 {
        let mut f: f64 = self.atoms.iter().filter(|a| a.0 < x).map(|a| a.1).sum();
        for s in &self.segments {
            if x > s.right || (x == s.right && s.right > s.left) {
                f += s.mass;
            } else if x > s.left {
                f += s.mass * (x - s.left) / (s.right - s.left);
            }
        }
        f
    }

    /// Pushforward under x ↦ r + γx.
    pub fn affine_pushforward(&self, r: f64, gamma: f64) -> Self {
        GeneralMeasure {
            atoms: self.atoms.iter().map(|&(x, m)| (r + gamma * x, m)).collect(),
            segments: self
                .segments
                .iter()
                .map(|s| Segment { left: r + gamma * s.left, right: r + gamma * s.right, mass: s.mass })
                .collect(),
        }
    }

    fn check_support(&self, upper: f64) -> Result<()> {
        let tol = MEASURE_TOL * upper.max(1.0);
        let bad = |x: f64| x < -tol || x > upper + tol;
        for &(x, _) in &self.atoms {
            if bad(x) {
                return Err(MeasureError::OutOfSupport(x, upper));
            }
        }
        for s in &self.segments {
            if bad(s.left) || bad(s.right) {
                return Err(MeasureError::OutOfSupport(if bad(s.left) { s.left } else { s.right }, upper));
            }
        }
        Ok(())
    }
}

/// Antiderivative of the hat function.
fn hat_integral(u: f64) -> f64 {
    if u <= -1.0 {
        0.0
    } else if u <= 0.0 {
        0.5 * (u + 1.0) * (u + 1.0)
    } else if u <= 1.0 {
        1.0 - 0.5 * (1.0 - u) * (1.0 - u)
    } else {
        1.0
    }
}

/// Π_K ν: p_k = ∫ (1 − |(x − x_k)/ι|)₊ dν(x), exact for atoms and segments.
pub fn project_categorical(nu: &GeneralMeasure, grid: &CategoricalGrid) -> Result<SignedCategoricalMeasure> {
    nu.check_support(grid.x_max())?;
    let iota = grid.iota;
    let k_max = grid.k;
    let mut p = vec![0.0; k_max];
    for &(x, m) in &nu.atoms {
        scatter_hat(x / iota, m, &mut p);
    }
    for s in &nu.segments {
        let width = s.right - s.left;
        if width <= 0.0 {
            scatter_hat(s.left / iota, s.mass, &mut p);
            continue;
        }
        let lo = ((s.left / iota).floor() as isize - 1).max(0) as usize;
        let hi = ((s.right / iota).ceil() as usize + 1).min(k_max - 1);
        for (k, pk) in p.iter_mut().enumerate().take(hi + 1).skip(lo) {
            let xk = grid.x(k);
            let w = iota * (hat_integral((s.right - xk) / iota) - hat_integral((s.left - xk) / iota));
            *pk += s.mass * w / width;
        }
    }
    SignedCategoricalMeasure::new(*grid, p)
}

/// Spreads mass m at grid coordinate u = x/ι onto its two neighbours.
#[inline]
fn scatter_hat(u: f64, m: f64, p: &mut [f64]) {
    let u = u.max(0.0);
    let k0 = u.floor();
    let a = u - k0;
    let k0 = k0 as usize;
    if k0 < p.len() {
        p[k0] += m * (1.0 - a);
    }
    if k0 + 1 < p.len() {
        p[k0 + 1] += m * a;
    }
}

/// ℓ₂(a, b) = √ι·‖C(p_a − p_b)‖.
pub fn cramer_l2(a: &SignedCategoricalMeasure, b: &SignedCategoricalMeasure) -> Result<f64> {
    a.grid.check_same(&b.grid)?;
    Ok(a.grid.iota.sqrt() * norm2(&cdf_gap(a, b)))
}

/// W₁(a, b) = ι·‖C(p_a − p_b)‖₁.
pub fn wasserstein_w1(a: &SignedCategoricalMeasure, b: &SignedCategoricalMeasure) -> Result<f64> {
    a.grid.check_same(&b.grid)?;
    Ok(a.grid.iota * norm1(&cdf_gap(a, b)))
}

fn cdf_gap(a: &SignedCategoricalMeasure, b: &SignedCategoricalMeasure) -> Vec<f64> {
    let d: Vec<f64> = a.p.iter().zip(&b.p).map(|(x, y)| x - y).collect();
    cumsum(&d)
}

/// Π_K (b_{r,γ})# ν, computed as Σ_{j=0}^{K} p_j g_j(r).
pub fn pushforward_project(nu: &SignedCategoricalMeasure, r: f64) -> Result<SignedCategoricalMeasure> {
    if !(0.0..=1.0).contains(&r) {
        return Err(MeasureError::Reward(r));
    }
    let grid = nu.grid;
    let shift = r / grid.iota;
    let mut out = vec![0.0; grid.k];
    let last = nu.p_last();
    for j in 0..=grid.k {
        let pj = if j < grid.k { nu.p[j] } else { last };
        scatter_hat(shift + grid.gamma * j as f64, pj, &mut out);
    }
    SignedCategoricalMeasure::new(grid, out)
}

/// Σ_k x_k p_k including the implicit atom at x_K.
pub fn measure_mean(nu: &SignedCategoricalMeasure) -> f64 {
    let g = &nu.grid;
    nu.p.iter().enumerate().map(|(k, pk)| g.x(k) * pk).sum::<f64>() + g.x_max() * nu.p_last()
}

/// Piecewise-linear CDF on [lo, hi], exact for atoms, segments and
/// categorical measures on any grid. Used for distances across grids.
#[derive(Debug, Clone)]
pub struct PiecewiseCdf {
    /// Sorted breakpoints.
    knots: Vec<f64>,
    /// Per-interval (value just right of knots[i], value just left of knots[i+1]).
    pieces: Vec<(f64, f64)>,
}

impl PiecewiseCdf {
    pub fn from_general(nu: &GeneralMeasure, lo: f64, hi: f64) -> Self {
        let mut knots = vec![lo, hi];
        knots.extend(nu.atoms.iter().map(|a| a.0));
        for s in &nu.segments {
            knots.push(s.left);
            knots.push(s.right);
        }
        knots.retain(|x| *x >= lo && *x <= hi);
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let pieces = knots.windows(2).map(|w| (nu.cdf_at(w[0]), nu.cdf_left(w[1]))).collect();
        PiecewiseCdf { knots, pieces }
    }

    pub fn from_categorical(nu: &SignedCategoricalMeasure) -> Self {
        PiecewiseCdf::from_general(&GeneralMeasure::from_categorical(nu), 0.0, nu.grid.x_max())
    }

    fn value_on(&self, x0: f64, x1: f64) -> (f64, f64) {
        // Interval [x0, x1] lies inside one piece of self.
        let i = match self.knots.binary_search_by(|k| k.total_cmp(&x0)) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
        .min(self.pieces.len().saturating_sub(1));
        if self.pieces.is_empty() {
            return (0.0, 0.0);
        }
        let (a, b) = self.pieces[i];
        let (k0, k1) = (self.knots[i], self.knots[i + 1]);
        let lerp = |x: f64| if k1 > k0 { a + (b - a) * (x - k0) / (k1 - k0) } else { a };
        (lerp(x0), lerp(x1))
    }

    fn merged(&self, other: &PiecewiseCdf) -> Vec<(f64, f64, f64, f64, f64, f64)> {
        let mut knots: Vec<f64> = self.knots.iter().chain(&other.knots).copied().collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        knots
            .windows(2)
            .map(|w| {
                let (f0, f1) = self.value_on(w[0], w[1]);
                let (g0, g1) = other.value_on(w[0], w[1]);
                (w[0], w[1], f0, f1, g0, g1)
            })
            .collect()
    }

    /// ∫ (F − G)² dx.
    pub fn l2_squared(&self, other: &PiecewiseCdf) -> f64 {
        self.merged(other)
            .into_iter()
            .map(|(x0, x1, f0, f1, g0, g1)| {
                let (d0, d1) = (f0 - g0, f1 - g1);
                (x1 - x0) * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0
            })
            .sum()
    }

    pub fn l2(&self, other: &PiecewiseCdf) -> f64 {
        self.l2_squared(other).max(0.0).sqrt()
    }

    /// ∫ |F − G| dx.
    pub fn w1(&self, other: &PiecewiseCdf) -> f64 {
        self.merged(other)
            .into_iter()
            .map(|(x0, x1, f0, f1, g0, g1)| {
                let (d0, d1) = (f0 - g0, f1 - g1);
                let h = x1 - x0;
                if d0 * d1 >= 0.0 {
                    h * 0.5 * (d0.abs() + d1.abs())
                } else {
                    h * 0.5 * (d0 * d0 + d1 * d1) / (d0.abs() + d1.abs())
                }
            })
            .sum()
    }
}
