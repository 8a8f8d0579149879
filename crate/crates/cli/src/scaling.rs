//! K-scaling of the largest stable step size: the PMF baseline's 1/α∞
//! against a quadratic in K, and the spread of Linear-CTD's α∞.

use anyhow::{bail, Result};
use lctd_core::Algorithm;

use crate::config::ExperimentConfig;
use crate::experiment::Problem;
use crate::regression::{fit_quadratic, QuadraticFit};
use crate::search::{search_all, AlphaSearchResult};

#[derive(Debug, Clone)]
pub struct ScalingReport {
    pub baseline: Vec<AlphaSearchResult>,
    pub ctd: Vec<AlphaSearchResult>,
    /// 1/α∞ of the baseline against K.
    pub baseline_fit: QuadraticFit,
    /// 1/α∞ of Linear-CTD against K, when at least five searches succeeded.
    pub ctd_fit: Option<QuadraticFit>,
    /// max/min of Linear-CTD's α∞.
    pub ctd_ratio: f64,
    pub warnings: Vec<String>,
}

impl ScalingReport {
    /// c·K_max² relative to the mean of 1/α∞: the share of the fitted
    /// curve owed to the quadratic term at the largest K.
    pub fn relative_curvature(fit: &QuadraticFit, results: &[AlphaSearchResult]) -> f64 {
        let kmax = results.iter().map(|r| r.k).max().unwrap_or(0) as f64;
        let mean = results.iter().map(|r| 1.0 / r.alpha_inf()).sum::<f64>() / results.len().max(1) as f64;
        fit.c * kmax * kmax / mean
    }

    pub fn to_text(&self) -> String {
        let f = &self.baseline_fit;
        let mut out = format!(
            "baseline_a={:e}\nbaseline_b={:e}\nbaseline_c={:e}\nbaseline_r_squared={}\nbaseline_relative_curvature={}\n",
            f.a,
            f.b,
            f.c,
            f.r_squared,
            Self::relative_curvature(f, &self.baseline)
        );
        if let Some(c) = &self.ctd_fit {
            out.push_str(&format!(
                "ctd_a={:e}\nctd_b={:e}\nctd_c={:e}\nctd_r_squared={}\nctd_relative_curvature={}\n",
                c.a,
                c.b,
                c.c,
                c.r_squared,
                Self::relative_curvature(c, &self.ctd)
            ));
        }
        out.push_str(&format!("ctd_alpha_ratio={}\n", self.ctd_ratio));
        for w in &self.warnings {
            out.push_str(&format!("warning={w}\n"));
        }
        out
    }
}

fn collect(results: Vec<Result<AlphaSearchResult>>, ks: &[usize], warnings: &mut Vec<String>) -> Vec<AlphaSearchResult> {
    let mut ok = Vec::new();
    for (r, &k) in results.into_iter().zip(ks) {
        match r {
            Ok(r) if r.upper.is_finite() => ok.push(r),
            Ok(_) => warnings.push(format!("K = {k}: every probe converged at t = 0; excluded")),
            Err(e) => warnings.push(format!("K = {k}: {e}; excluded")),
        }
    }
    ok
}

/// Runs both searches over the config's K list. The per-algorithm
/// default α ranges are used.
pub fn k_scaling(cfg: &ExperimentConfig, problem: &Problem) -> Result<ScalingReport> {
    let cfg = ExperimentConfig { alpha_range: None, ..cfg.clone() };
    let mut warnings = Vec::new();
    let baseline = collect(search_all(&cfg, problem, Algorithm::SsgdPmf), &cfg.k_list, &mut warnings);
    let ctd = collect(search_all(&cfg, problem, Algorithm::LinearCtd), &cfg.k_list, &mut warnings);
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    fit_results(baseline, ctd, warnings)
}

pub fn fit_results(
    baseline: Vec<AlphaSearchResult>,
    ctd: Vec<AlphaSearchResult>,
    warnings: Vec<String>,
) -> Result<ScalingReport> {
    if baseline.len() < 5 {
        bail!("only {} baseline searches completed; the regression needs at least 5", baseline.len());
    }
    let xy = |rs: &[AlphaSearchResult]| -> (Vec<f64>, Vec<f64>) {
        rs.iter().map(|r| (r.k as f64, 1.0 / r.alpha_inf())).unzip()
    };
    let (xs, ys) = xy(&baseline);
    let baseline_fit = fit_quadratic(&xs, &ys)?;
    let ctd_fit = if ctd.len() >= 5 {
        let (xs, ys) = xy(&ctd);
        Some(fit_quadratic(&xs, &ys)?)
    } else {
        None
    };
    let alphas: Vec<f64> = ctd.iter().map(AlphaSearchResult::alpha_inf).collect();
    let ctd_ratio = if alphas.is_empty() {
        f64::NAN
    } else {
        alphas.iter().cloned().fold(f64::MIN, f64::max) / alphas.iter().cloned().fold(f64::MAX, f64::min)
    };
    Ok(ScalingReport { baseline, ctd, baseline_fit, ctd_fit, ctd_ratio, warnings })
}
