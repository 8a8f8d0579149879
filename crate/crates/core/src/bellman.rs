//! Structural matrices of the linear-categorical Bellman equation: the
//! cumulative matrix C, the hat-kernel columns g_j(r), G(r), G̃(r) and the
//! projected Bellman matrix CG̃(r)C⁻¹.
//!
//! Hot paths use [`ShiftStencil`], which stores each g_j(r) as its (at most
//! two) adjacent nonzeros, together with running-sum and first-difference
//! transforms in place of dense C and C⁻¹.

use std::f64::consts::PI;

use thiserror::Error;

use crate::categorical::{cumsum, diff, hat, CategoricalGrid};
use crate::linalg::{psd_power, spectral_norm, Mat};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BellmanError {
    #[error("reward {0} is outside [0, 1]")]
    Reward(f64),
    #[error("hat index (j={j}, k={k}) out of range for K={big_k}")]
    Index { j: usize, k: usize, big_k: usize },
}

pub type Result<T> = std::result::Result<T, BellmanError>;

fn check_reward(r: f64) -> Result<()> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(BellmanError::Reward(r))
    }
}

/// The K×K lower-triangular all-ones matrix C = [1{i≥j}].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CumulativeMatrix {
    k: usize,
}

impl CumulativeMatrix {
    pub fn new(k: usize) -> Self {
        CumulativeMatrix { k }
    }

    pub fn dense(&self) -> Mat {
        Mat::from_fn(self.k, self.k, |i, j| if i >= j { 1.0 } else { 0.0 })
    }

    /// Lower bidiagonal: +1 on the diagonal, −1 below it.
    pub fn dense_inverse(&self) -> Mat {
        Mat::from_fn(self.k, self.k, |i, j| {
            if i == j {
                1.0
            } else if i == j + 1 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// (CᵀC)_{ij} = K − max(i, j).
    pub fn dense_ctc(&self) -> Mat {
        Mat::from_fn(self.k, self.k, |i, j| (self.k - i.max(j)) as f64)
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        cumsum(v)
    }

    pub fn apply_inverse(&self, v: &[f64]) -> Vec<f64> {
        diff(v)
    }

    /// Cᵀv: suffix sums.
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        suffix_sum_in_place(&mut out);
        out
    }
}

pub(crate) fn cumsum_in_place(v: &mut [f64]) {
    let mut acc = 0.0;
    for x in v.iter_mut() {
        acc += *x;
        *x = acc;
    }
}

pub(crate) fn suffix_sum_in_place(v: &mut [f64]) {
    let mut acc = 0.0;
    for x in v.iter_mut().rev() {
        acc += *x;
        *x = acc;
    }
}

/// g_{j,k}(r) = (1 − |r/ι + γj − k|)₊ for j in 0..=K, k in 0..K.
pub fn hat_coeff(j: usize, k: usize, r: f64, grid: &CategoricalGrid) -> Result<f64> {
    check_reward(r)?;
    if j > grid.k() || k >= grid.k() {
        return Err(BellmanError::Index { j, k, big_k: grid.k() });
    }
    Ok(hat(r / grid.iota() + grid.gamma() * j as f64 - k as f64))
}

/// Sparse form of g_0(r), …, g_K(r): column j has weight 1 − a_j at k_j and
/// a_j at k_j + 1, where k_j + a_j = r/ι + γj. Indices ≥ K are dropped.
#[derive(Debug, Clone)]
pub struct ShiftStencil {
    k: usize,
    cols: Vec<(usize, f64)>,
}

impl ShiftStencil {
    pub fn new(r: f64, grid: &CategoricalGrid) -> Result<Self> {
        check_reward(r)?;
        let shift = r / grid.iota();
        let cols = (0..=grid.k())
            .map(|j| {
                let u = shift + grid.gamma() * j as f64;
                let k0 = u.floor();
                (k0 as usize, u - k0)
            })
            .collect();
        Ok(ShiftStencil { k: grid.k(), cols })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Lower index and interpolation weight of column j.
    pub fn column(&self, j: usize) -> (usize, f64) {
        self.cols[j]
    }

    #[inline]
    fn scatter(&self, j: usize, w: f64, out: &mut [f64]) {
        let (k0, a) = self.cols[j];
        if k0 < self.k {
            out[k0] += w * (1.0 - a);
        }
        if k0 + 1 < self.k {
            out[k0 + 1] += w * a;
        }
    }

    /// Σ_{j=0}^{K} g_j(r).
    pub fn g_sum(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for j in 0..=self.k {
            self.scatter(j, 1.0, &mut out);
        }
        out
    }

    /// out = Σ_{j=0}^{K} w_j g_j(r) for w of length K + 1.
    pub fn apply_g_into(&self, w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (j, &wj) in w.iter().enumerate().take(self.k + 1) {
            if wj != 0.0 {
                self.scatter(j, wj, out);
            }
        }
    }

    /// out = G̃(r) w = Σ_{j<K} w_j (g_j − g_K).
    pub fn apply_gtilde_into(&self, w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        let mut total = 0.0;
        for (j, &wj) in w.iter().enumerate() {
            if wj != 0.0 {
                self.scatter(j, wj, out);
            }
            total += wj;
        }
        self.scatter(self.k, -total, out);
    }

    /// out = CG̃(r)C⁻¹ v in O(K). `scratch` must have length K.
    pub fn apply_y_into(&self, v: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        let mut prev = 0.0;
        for (s, &x) in scratch.iter_mut().zip(v) {
            *s = x - prev;
            prev = x;
        }
        self.apply_gtilde_into(scratch, out);
        cumsum_in_place(out);
    }

    pub fn apply_y(&self, v: &[f64]) -> Vec<f64> {
        let mut scratch = vec![0.0; self.k];
        let mut out = vec![0.0; self.k];
        self.apply_y_into(v, &mut scratch, &mut out);
        out
    }

    /// (K+1)⁻¹ C(Σ_j g_j(r) − 1_K), the per-sample constant term.
    pub fn bias(&self) -> Vec<f64> {
        let scale = 1.0 / (self.k as f64 + 1.0);
        let mut v: Vec<f64> = self.g_sum().into_iter().map(|x| x - 1.0).collect();
        cumsum_in_place(&mut v);
        v.iter_mut().for_each(|x| *x *= scale);
        v
    }
}

/// Dense G(r), g_K(r) and G̃(r) = G(r) − 1ᵀ ⊗ g_K(r).
#[derive(Debug, Clone)]
pub struct ShiftKernel {
    pub grid: CategoricalGrid,
    pub r: f64,
    pub g: Mat,
    pub g_k: Vec<f64>,
    pub gtilde: Mat,
}

pub fn build_shift_kernel(r: f64, grid: &CategoricalGrid) -> Result<ShiftKernel> {
    let stencil = ShiftStencil::new(r, grid)?;
    let k = grid.k();
    let mut g = Mat::zeros(k, k);
    let mut col = vec![0.0; k];
    for j in 0..k {
        col.iter_mut().for_each(|x| *x = 0.0);
        stencil.scatter(j, 1.0, &mut col);
        for (i, &x) in col.iter().enumerate() {
            g.set(i, j, x);
        }
    }
    let mut g_k = vec![0.0; k];
    stencil.scatter(k, 1.0, &mut g_k);
    let gtilde = Mat::from_fn(k, k, |i, j| g.get(i, j) - g_k[i]);
    Ok(ShiftKernel { grid: *grid, r, g, g_k, gtilde })
}

/// CG̃(r)C⁻¹ in O(K²): running sums down columns, then column differences.
pub fn projected_bellman_matrix(r: f64, grid: &CategoricalGrid) -> Result<Mat> {
    let kernel = build_shift_kernel(r, grid)?;
    let k = grid.k();
    let mut m = kernel.gtilde;
    for i in 1..k {
        for j in 0..k {
            let above = m.get(i - 1, j);
            m.add_to(i, j, above);
        }
    }
    for i in 0..k {
        for j in 0..k.saturating_sub(1) {
            let next = m.get(i, j + 1);
            m.add_to(i, j, -next);
        }
    }
    Ok(m)
}

/// Eigenvalues of CᵀC, ascending: 1/(4cos²(kπ/(2K+1))) for k = 1..K.
pub fn ctc_spectrum(k: usize) -> Vec<f64> {
    let n = 2.0 * k as f64 + 1.0;
    (1..=k).map(|i| 1.0 / (4.0 * (i as f64 * PI / n).cos().powi(2))).collect()
}

/// ‖CᵀC‖ = 1/(4sin²(π/(4K+2))).
pub fn ctc_norm(k: usize) -> f64 {
    1.0 / (4.0 * (PI / (4.0 * k as f64 + 2.0)).sin().powi(2))
}

/// ‖(CᵀC)⁻¹‖ = 4cos²(π/(2K+1)).
pub fn ctc_inverse_norm(k: usize) -> f64 {
    4.0 * (PI / (2.0 * k as f64 + 1.0)).cos().powi(2)
}

/// Default breakpoint budget for [`default_r_samples`].
pub const DEFAULT_BREAKPOINT_CAP: usize = 200;

/// 101 equispaced rewards in [0, 1] plus the kinks of r ↦ g_{j,k}(r), i.e.
/// the r where r/ι + γj is an integer. When there are more than
/// `breakpoint_cap` kinks an evenly spaced subset of the sorted list is kept.
pub fn default_r_samples(grid: &CategoricalGrid, breakpoint_cap: usize) -> Vec<f64> {
    let mut rs: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let iota = grid.iota();
    let mut kinks = Vec::new();
    for j in 0..=grid.k() {
        let offset = grid.gamma() * j as f64;
        let lo = offset.ceil() as i64;
        let hi = (offset + 1.0 / iota).floor() as i64;
        for m in lo..=hi {
            let r = iota * (m as f64 - offset);
            if (0.0..=1.0).contains(&r) {
                kinks.push(r);
            }
        }
    }
    kinks.sort_by(f64::total_cmp);
    kinks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    if kinks.len() > breakpoint_cap && breakpoint_cap > 0 {
        let n = kinks.len();
        kinks = (0..breakpoint_cap).map(|i| kinks[i * (n - 1) / (breakpoint_cap - 1).max(1)]).collect();
    }
    rs.extend(kinks);
    rs.sort_by(f64::total_cmp);
    rs.dedup();
    rs
}

/// Largest ‖CG̃(r)C⁻¹‖ over the samples.
pub fn spectral_contraction_check(grid: &CategoricalGrid, r_samples: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &r in r_samples {
        worst = worst.max(spectral_norm(&projected_bellman_matrix(r, grid)?));
    }
    Ok(worst)
}

/// Largest ‖(CᵀC)^{1/2} G̃(r) (CᵀC)^{−1/2}‖ over the samples.
pub fn weighted_contraction_check(grid: &CategoricalGrid, r_samples: &[f64]) -> Result<f64> {
    let ctc = CumulativeMatrix::new(grid.k()).dense_ctc();
    let half = psd_power(&ctc, 0.5).expect("CᵀC is symmetric positive definite");
    let neg_half = psd_power(&ctc, -0.5).expect("CᵀC is symmetric positive definite");
    let mut worst: f64 = 0.0;
    for &r in r_samples {
        let gt = build_shift_kernel(r, grid)?.gtilde;
        let m = half.matmul(&gt).and_then(|x| x.matmul(&neg_half)).expect("square K×K products");
        worst = worst.max(spectral_norm(&m));
    }
    Ok(worst)
}
