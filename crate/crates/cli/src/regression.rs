//! Quadratic least squares for the K-scaling of 1/α∞.

use anyhow::{bail, Result};
use lctd_core::linalg::solve_refined;
use lctd_core::Mat;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticFit {
    /// y ≈ a + bx + cx².
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub r_squared: f64,
}

impl QuadraticFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.a + self.b * x + self.c * x * x
    }
}

/// Fits on x scaled to [0, 1] for conditioning and maps the coefficients
/// back. Needs at least five points.
pub fn fit_quadratic(xs: &[f64], ys: &[f64]) -> Result<QuadraticFit> {
    if xs.len() != ys.len() {
        bail!("{} x values but {} y values", xs.len(), ys.len());
    }
    if xs.len() < 5 {
        bail!("quadratic regression needs at least 5 points, got {}", xs.len());
    }
    let scale = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !(scale > 0.0) || xs.iter().chain(ys).any(|v| !v.is_finite()) {
        bail!("regression inputs must be finite with some nonzero x");
    }
    let mut ata = Mat::zeros(3, 3);
    let mut aty = [0.0; 3];
    for (&x, &y) in xs.iter().zip(ys) {
        let u = x / scale;
        let row = [1.0, u, u * u];
        for i in 0..3 {
            aty[i] += row[i] * y;
            for j in 0..3 {
                ata.add_to(i, j, row[i] * row[j]);
            }
        }
    }
    let coef = solve_refined(&ata, &aty, 1e12)?;
    let fit = QuadraticFit { a: coef[0], b: coef[1] / scale, c: coef[2] / (scale * scale), r_squared: 0.0 };
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(&x, &y)| (y - fit.eval(x)).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(QuadraticFit { r_squared, ..fit })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_quadratic_has_unit_r_squared() {
        let xs = [30.0, 45.0, 75.0, 105.0, 150.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x + 0.02 * x * x).collect();
        let f = fit_quadratic(&xs, &ys).unwrap();
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!((f.a - 3.0).abs() < 1e-8 && (f.b + 0.5).abs() < 1e-10 && (f.c - 0.02).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        assert!(fit_quadratic(&[1.0, 2.0, 3.0, 4.0], &[1.0; 4]).is_err());
    }

    #[test]
    fn noise_lowers_r_squared() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let ys = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        assert!(fit_quadratic(&xs, &ys).unwrap().r_squared < 0.5);
    }
}
