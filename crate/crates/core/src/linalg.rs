//! Dense real matrices, Kronecker products, vectorization, symmetric
//! eigen-decomposition and LU solves.
//!
//! Matrices are small (dK at most a few thousand), so everything is dense and
//! row-major. Eigenvalues come from nalgebra's Householder tridiagonalization
//! followed by implicit symmetric QR, which is deterministic.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

/// Largest row or column count a Kronecker product may produce.
pub const KRON_SIZE_CAP: usize = 16_384;

/// Absolute asymmetry tolerated by [`eig_sym`].
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("kronecker output {rows}x{cols} exceeds the size cap {cap}")]
    SizeCap { rows: usize, cols: usize, cap: usize },
    #[error("matrix is not symmetric: max |m - m^T| = {0:e}")]
    Asymmetric(f64),
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("matrix is ill-conditioned: estimated 1-norm condition number {0:e}")]
    IllConditioned(f64),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Mat {
    /// Builds a matrix from row-major entries, rejecting NaN and infinities.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(LinalgError::Dimension(format!(
                "{rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite(i));
        }
        Ok(Mat { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::Dimension("ragged rows".into()));
        }
        Mat::new(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Mat::diag(&vec![1.0; n])
    }

    pub fn diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = Mat::zeros(n, n);
        for (i, &x) in d.iter().enumerate() {
            m.data[i * n + i] = x;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    /// Outer product u vᵀ.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        Mat::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(LinalgError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// mᵀm without forming the transpose.
    pub fn gram(&self) -> Mat {
        let n = self.cols;
        let mut out = Mat::zeros(n, n);
        for k in 0..self.rows {
            let r = self.row(k);
            for i in 0..n {
                if r[i] == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in orow.iter_mut().zip(r) {
                    *o += r[i] * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(LinalgError::Dimension(format!(
                "cannot apply {}x{} to a vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    /// self += s * other
    pub fn axpy(&mut self, s: f64, other: &Mat) -> Result<()> {
        self.check_same(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    fn check_same(&self, other: &Mat) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::Dimension(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Result<Mat> {
        self.check_same(other)?;
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// (m + mᵀ)/2
    pub fn symmetrize(&self) -> Result<Mat> {
        if !self.is_square() {
            return Err(LinalgError::Dimension("symmetrize needs a square matrix".into()));
        }
        Ok(Mat::from_fn(self.rows, self.cols, |i, j| 0.5 * (self.get(i, j) + self.get(j, i))))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn norm_fro(&self) -> f64 {
        norm2(&self.data)
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.rows).all(|i| (0..self.cols).all(|j| i == j || self.get(i, j) == 0.0))
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn from_nalgebra(m: &DMatrix<f64>) -> Mat {
        Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

/// Finite-checked vector. Most internal code works on `&[f64]`; this type
/// marks values that crossed an API boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite(i));
        }
        Ok(Vector(v))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

/// a ⊗ b with entry ((i,k),(j,l)) = a[i,j]·b[k,l].
pub fn kron(a: &Mat, b: &Mat) -> Result<Mat> {
    let rows = a.rows * b.rows;
    let cols = a.cols * b.cols;
    if rows > KRON_SIZE_CAP || cols > KRON_SIZE_CAP {
        return Err(LinalgError::SizeCap { rows, cols, cap: KRON_SIZE_CAP });
    }
    let mut out = Mat::zeros(rows, cols);
    for i in 0..a.rows {
        for j in 0..a.cols {
            let s = a.get(i, j);
            if s == 0.0 {
                continue;
            }
            for k in 0..b.rows {
                let dst = (i * b.rows + k) * cols + j * b.cols;
                for (o, &x) in out.data[dst..dst + b.cols].iter_mut().zip(b.row(k)) {
                    *o = s * x;
                }
            }
        }
    }
    Ok(out)
}

/// Adds s·(a ⊗ b) into `out` in place, avoiding the temporary.
pub fn kron_accumulate(out: &mut Mat, s: f64, a: &Mat, b: &Mat) -> Result<()> {
    if out.rows != a.rows * b.rows || out.cols != a.cols * b.cols {
        return Err(LinalgError::Dimension("kron_accumulate target has the wrong shape".into()));
    }
    let cols = out.cols;
    for i in 0..a.rows {
        for j in 0..a.cols {
            let sa = s * a.get(i, j);
            if sa == 0.0 {
                continue;
            }
            for k in 0..b.rows {
                let dst = (i * b.rows + k) * cols + j * b.cols;
                for (o, &x) in out.data[dst..dst + b.cols].iter_mut().zip(b.row(k)) {
                    *o += sa * x;
                }
            }
        }
    }
    Ok(())
}

/// Column-stacking vectorization: columns concatenated first to last.
pub fn vectorize(m: &Mat) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.rows * m.cols);
    for j in 0..m.cols {
        for i in 0..m.rows {
            v.push(m.get(i, j));
        }
    }
    v
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &[f64], rows: usize, cols: usize) -> Result<Mat> {
    if v.len() != rows * cols {
        return Err(LinalgError::Dimension(format!(
            "vector of length {} cannot be reshaped to {rows}x{cols}",
            v.len()
        )));
    }
    Mat::new(rows, cols, Mat::from_fn(rows, cols, |i, j| v[j * rows + i]).into_data())
}

/// Eigenvalues in ascending order with matching eigenvector columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

/// Symmetric eigen-decomposition. Rejects inputs whose asymmetry exceeds
/// [`SYMMETRY_TOL`].
pub fn eig_sym(m: &Mat) -> Result<SymEigen> {
    check_symmetric(m)?;
    let eig = SymmetricEigen::new(m.symmetrize()?.to_nalgebra());
    let n = m.rows;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Mat::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(SymEigen { values, vectors })
}

/// Ascending eigenvalues only.
pub fn eigvals_sym(m: &Mat) -> Result<Vec<f64>> {
    check_symmetric(m)?;
    let mut v: Vec<f64> = m.symmetrize()?.to_nalgebra().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn check_symmetric(m: &Mat) -> Result<()> {
    if !m.is_square() {
        return Err(LinalgError::Dimension(format!("{}x{} is not square", m.rows, m.cols)));
    }
    let asym = m.max_asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(LinalgError::Asymmetric(asym));
    }
    Ok(())
}

/// Smallest eigenvalue of (m + mᵀ)/2.
pub fn min_eig_symmetrized(m: &Mat) -> Result<f64> {
    Ok(eigvals_sym(&m.symmetrize()?)?[0])
}

/// Largest singular value, via the eigenvalues of the smaller Gram matrix.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.rows == 0 || m.cols == 0 {
        return 0.0;
    }
    if m.is_square() && m.is_diagonal() {
        return (0..m.rows).map(|i| m.get(i, i).abs()).fold(0.0, f64::max);
    }
    let g = if m.rows >= m.cols { m.gram() } else { m.transpose().gram() };
    let g = g.symmetrize().expect("gram matrix is square");
    let top = g.to_nalgebra().symmetric_eigenvalues().iter().copied().fold(0.0, f64::max);
    top.max(0.0).sqrt()
}

/// True iff the smallest eigenvalue of sym(b − a) is at least −slack.
pub fn psd_order_check(a: &Mat, b: &Mat, slack: f64) -> Result<bool> {
    Ok(psd_margin(a, b)? >= -slack)
}

/// Smallest eigenvalue of sym(b − a); non-negative iff a ≼ b.
pub fn psd_margin(a: &Mat, b: &Mat) -> Result<f64> {
    if !a.is_square() || a.rows != b.rows || a.cols != b.cols {
        return Err(LinalgError::Dimension(format!(
            "psd order needs equal square sizes, got {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    min_eig_symmetrized(&b.sub(a)?)
}

/// Symmetric PSD matrix power via eigen-decomposition; negative rounding
/// eigenvalues are clamped to zero.
pub fn psd_power(m: &Mat, power: f64) -> Result<Mat> {
    let e = eig_sym(m)?;
    let n = m.rows;
    let mut out = Mat::zeros(n, n);
    for (k, &lam) in e.values.iter().enumerate() {
        let lam = lam.max(0.0);
        if lam == 0.0 && power < 0.0 {
            return Err(LinalgError::Singular);
        }
        let w = lam.powf(power);
        let v = e.vectors.col(k);
        for i in 0..n {
            for j in 0..n {
                out.add_to(i, j, w * v[i] * v[j]);
            }
        }
    }
    Ok(out)
}

/// LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    norm1: f64,
}

impl Lu {
    pub fn factor(m: &Mat) -> Result<Lu> {
        if !m.is_square() {
            return Err(LinalgError::Dimension("LU needs a square matrix".into()));
        }
        let n = m.rows;
        let mut lu = m.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = m.max_abs();
        for k in 0..n {
            let (p, pv) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -1.0), |best, c| if c.1 > best.1 { c } else { best });
            if pv <= f64::EPSILON * scale * n as f64 || pv == 0.0 {
                return Err(LinalgError::Singular);
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let piv = lu[k * n + k];
            for i in (k + 1)..n {
                let f = lu[i * n + k] / piv;
                lu[i * n + k] = f;
                if f != 0.0 {
                    let (top, bottom) = lu.split_at_mut(i * n);
                    let krow = &top[k * n + k + 1..k * n + n];
                    for (x, &y) in bottom[k + 1..n].iter_mut().zip(krow) {
                        *x -= f * y;
                    }
                }
            }
        }
        Ok(Lu { n, lu, perm, norm1: m.norm_1() })
    }

    /// Solves m x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s = dot(&self.lu[i * n..i * n + i], &x[..i]);
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s = dot(&self.lu[i * n + i + 1..(i + 1) * n], &x[i + 1..]);
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        x
    }

    /// Solves mᵀ x = b.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.lu[k * n + i] * y[k];
            }
            y[i] = s / self.lu[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.lu[k * n + i] * y[k];
            }
            y[i] = s;
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }

    /// Hager–Higham estimate of the 1-norm condition number.
    pub fn cond1_estimate(&self) -> f64 {
        let n = self.n;
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0;
        for _ in 0..5 {
            let y = self.solve(&x);
            let new_est = norm1(&y);
            let xi: Vec<f64> = y.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect();
            let z = self.solve_transpose(&xi);
            let (j, zmax) = z
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, v)| if v.abs() > b.1 { (i, v.abs()) } else { b });
            if new_est <= est || zmax <= dot(&z, &x) {
                est = est.max(new_est);
                break;
            }
            est = new_est;
            x = vec![0.0; n];
            x[j] = 1.0;
        }
        est * self.norm1
    }

    pub fn inverse(&self) -> Mat {
        let n = self.n;
        let mut inv = Mat::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            for (i, v) in self.solve(&e).into_iter().enumerate() {
                inv.set(i, j, v);
            }
        }
        inv
    }
}

/// Direct solve with one step of iterative refinement and a condition guard.
pub fn solve_refined(m: &Mat, b: &[f64], max_cond: f64) -> Result<Vec<f64>> {
    if b.len() != m.rows {
        return Err(LinalgError::Dimension("right-hand side length".into()));
    }
    let lu = Lu::factor(m)?;
    let cond = lu.cond1_estimate();
    if !(cond <= max_cond) {
        return Err(LinalgError::IllConditioned(cond));
    }
    let mut x = lu.solve(b);
    let r: Vec<f64> = m.matvec(&x)?.iter().zip(b).map(|(ax, bi)| bi - ax).collect();
    let dx = lu.solve(&r);
    for (xi, d) in x.iter_mut().zip(dx) {
        *xi += d;
    }
    Vector::new(x).map(Vector::into_inner)
}

pub fn inverse(m: &Mat) -> Result<Mat> {
    Ok(Lu::factor(m)?.inverse())
}

impl From<&Mat> for DMatrix<f64> {
    fn from(m: &Mat) -> Self {
        m.to_nalgebra()
    }
}

impl From<&DMatrix<f64>> for Mat {
    fn from(m: &DMatrix<f64>) -> Self {
        Mat::from_nalgebra(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Mat {
        Mat::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn rejects_non_finite_and_bad_shapes() {
        assert!(Mat::new(2, 2, vec![1.0, 2.0, f64::NAN, 0.0]).is_err());
        assert!(Mat::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Vector::new(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn kron_identity() {
        let k = kron(&Mat::identity(2), &Mat::identity(3)).unwrap();
        assert_eq!(k, Mat::identity(6));
    }

    #[test]
    fn kron_block_layout() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = m(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let k = kron(&a, &b).unwrap();
        assert_eq!(k.get(0, 1), 1.0);
        assert_eq!(k.get(1, 2), 2.0);
        assert_eq!(k.get(3, 2), 4.0);
        assert_eq!(k.get(2, 1), 3.0);
        let lhs = spectral_norm(&k);
        let rhs = spectral_norm(&a) * spectral_norm(&b);
        assert!((lhs - rhs).abs() <= 1e-12 * rhs);
    }

    #[test]
    fn kron_size_cap() {
        let a = Mat::zeros(200, 1);
        let b = Mat::zeros(100, 1);
        assert!(matches!(kron(&a, &b), Err(LinalgError::SizeCap { .. })));
    }

    #[test]
    fn vectorize_is_column_stacking() {
        let a = m(&[&[1.0, 3.0], &[2.0, 4.0]]);
        assert_eq!(vectorize(&a), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(unvectorize(&[1.0, 2.0, 3.0, 4.0], 2, 2).unwrap(), a);
    }

    #[test]
    fn spectral_norm_simple_cases() {
        assert_eq!(spectral_norm(&Mat::diag(&[3.0, 1.0, 2.0])), 3.0);
        assert!((spectral_norm(&m(&[&[0.0, 1.0], &[0.0, 0.0]])) - 1.0).abs() < 1e-15);
        assert_eq!(spectral_norm(&Mat::zeros(3, 2)), 0.0);
        let r1 = Mat::outer(&[1.0, 2.0, 2.0], &[3.0, 4.0]);
        assert!((spectral_norm(&r1) - 15.0).abs() < 1e-13);
    }

    #[test]
    fn eig_sym_two_by_two() {
        let e = eig_sym(&m(&[&[2.0, 1.0], &[1.0, 1.0]])).unwrap();
        let s5 = 5f64.sqrt();
        assert!((e.values[0] - (3.0 - s5) / 2.0).abs() < 1e-14);
        assert!((e.values[1] - (3.0 + s5) / 2.0).abs() < 1e-14);
        assert_eq!(eig_sym(&Mat::identity(3)).unwrap().values, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn eig_sym_rejects_asymmetric() {
        assert!(matches!(eig_sym(&m(&[&[1.0, 1e-6], &[0.0, 1.0]])), Err(LinalgError::Asymmetric(_))));
    }

    #[test]
    fn psd_order_simple() {
        let z = Mat::zeros(3, 3);
        let i = Mat::identity(3);
        assert!(psd_order_check(&z, &i, 0.0).unwrap());
        assert!(!psd_order_check(&i.scale(2.0), &i, 0.0).unwrap());
        assert!(psd_order_check(&z, &Mat::identity(2), 0.0).is_err());
    }

    #[test]
    fn lu_solves_and_transposes() {
        let a = m(&[&[0.0, 2.0, 1.0], &[1.0, 1.0, 0.0], &[3.0, 0.0, 1.0]]);
        let lu = Lu::factor(&a).unwrap();
        let b = [1.0, 2.0, 3.0];
        let x = lu.solve(&b);
        let ax = a.matvec(&x).unwrap();
        assert!(ax.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-14));
        let y = lu.solve_transpose(&b);
        let aty = a.transpose().matvec(&y).unwrap();
        assert!(aty.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-14));
        let exact = inverse(&a).unwrap().norm_1() * a.norm_1();
        let est = lu.cond1_estimate();
        assert!(est <= exact * (1.0 + 1e-12) && est >= exact / 3.0);
    }

    #[test]
    fn singular_and_ill_conditioned() {
        let s = m(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(matches!(Lu::factor(&s), Err(LinalgError::Singular)));
        let ill = m(&[&[1.0, 1.0], &[1.0, 1.0 + 1e-13]]);
        assert!(matches!(solve_refined(&ill, &[1.0, 1.0], 1e12), Err(LinalgError::IllConditioned(_))));
    }

    #[test]
    fn psd_power_round_trip() {
        let a = m(&[&[2.0, 0.5], &[0.5, 1.0]]);
        let h = psd_power(&a, 0.5).unwrap();
        let back = h.matmul(&h).unwrap();
        assert!(back.sub(&a).unwrap().max_abs() < 1e-14);
        let ih = psd_power(&a, -0.5).unwrap();
        let id = ih.matmul(&a).unwrap().matmul(&ih).unwrap();
        assert!(id.sub(&Mat::identity(2)).unwrap().max_abs() < 1e-14);
    }
}
