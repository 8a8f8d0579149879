//! The `verify` suite: matrix properties, fixed points, noise and stability
//! bounds on the configured model, one report line per check.

use anyhow::Result;
use lctd_core::bellman::{
    ctc_spectrum, default_r_samples, projected_bellman_matrix, CumulativeMatrix, DEFAULT_BREAKPOINT_CAP,
};
use lctd_core::fixed_point::{
    approximation_error_report, assemble_system, iterate_projected_operator, solve_theta_star, system_residual,
    ThetaParam,
};
use lctd_core::learners::{linear_ctd_step, linear_td_step, matched_td_init, value_of};
use lctd_core::linalg::{eigvals_sym, norm2, spectral_norm};
use lctd_core::stability::{
    alpha_p_inf, biscuit_norm, error_to_loss_check, matrix_product_decay, noise_stats, rank_one_kronecker_check,
    stability_inequality_check,
};
use lctd_core::{
    CategoricalGrid, Check, CheckStatus, FeatureMap, LearnerState, Mat, Params, SampleMode, SampleStream,
};

use crate::experiment::Problem;

/// Dense Kronecker checks are skipped above this dK.
pub const DENSE_DIM_CAP: usize = 256;

#[derive(Debug, Clone)]
pub struct VerifyLine {
    pub k: usize,
    pub check: Check,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub lines: Vec<VerifyLine>,
}

impl VerifyReport {
    pub fn count(&self, status: CheckStatus) -> usize {
        self.lines.iter().filter(|l| l.check.status == status).count()
    }

    pub fn all_passed(&self) -> bool {
        self.count(CheckStatus::Fail) == 0
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            let c = &l.check;
            out.push_str(&format!(
                "k={} check=\"{}\" status={} value={:e} bound={:e} margin={:e} tolerance={:e}\n",
                l.k,
                c.name,
                c.status,
                c.value,
                c.bound,
                c.margin_value(),
                c.tolerance
            ));
        }
        out.push_str(&format!(
            "summary passed={} failed={} skipped={}\n",
            self.count(CheckStatus::Pass),
            self.count(CheckStatus::Fail),
            self.count(CheckStatus::Skipped)
        ));
        out
    }
}

/// Runs every group for every K. A group that errors is reported as one
/// failed check carrying the error text.
pub fn verify(problem: &Problem, k_list: &[usize]) -> VerifyReport {
    let mut report = VerifyReport::default();
    for &k in k_list {
        let grid = match problem.grid(k) {
            Ok(g) => g,
            Err(e) => {
                report.lines.push(VerifyLine { k, check: failed("grid", &e) });
                continue;
            }
        };
        let groups: [(&str, fn(&Problem, &CategoricalGrid) -> Result<Vec<Check>>); 6] = [
            ("projected Bellman matrix", bellman_checks),
            ("fixed point", fixed_point_checks),
            ("noise bounds", noise_checks),
            ("stability", stability_checks),
            ("matrix-product decay", decay_checks),
            ("mean preservation", mean_preservation_checks),
        ];
        for (name, group) in groups {
            match group(problem, &grid) {
                Ok(checks) => report.lines.extend(checks.into_iter().map(|check| VerifyLine { k, check })),
                Err(e) => report.lines.push(VerifyLine { k, check: failed(name, &e) }),
            }
        }
    }
    report
}

fn failed(name: &str, e: &dyn std::fmt::Display) -> Check {
    Check {
        name: format!("{name}: {e}"),
        value: f64::NAN,
        bound: f64::NAN,
        tolerance: 0.0,
        status: CheckStatus::Fail,
    }
}

fn dense_ok(problem: &Problem, grid: &CategoricalGrid) -> bool {
    problem.features.d() * grid.k() <= DENSE_DIM_CAP
}

fn bellman_checks(problem: &Problem, grid: &CategoricalGrid) -> Result<Vec<Check>> {
    let g = grid.gamma();
    let mut rs = default_r_samples(grid, DEFAULT_BREAKPOINT_CAP);
    rs.extend(problem.model.reward_levels());
    let (mut spec, mut neg, mut col_dev, mut row): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for &r in &rs {
        let y = projected_bellman_matrix(r, grid)?;
        spec = spec.max(spectral_norm(&y));
        neg = neg.max(-y.min_entry());
        col_dev = col_dev.max((y.norm_1() - g).abs());
        row = row.max(y.norm_inf());
    }
    let mut out = vec![
        Check::upper("‖CG̃(r)C⁻¹‖ ≤ √γ", spec, g.sqrt(), 1e-10),
        Check::upper("entries of CG̃(r)C⁻¹ ≥ 0", neg, 0.0, 1e-14),
        Check::upper("max column sum of CG̃(r)C⁻¹ = γ", col_dev, 0.0, 1e-10),
        Check::upper("max row sum of CG̃(r)C⁻¹ ≤ 1", row, 1.0, 1e-10),
    ];
    if grid.k() <= 512 {
        let numeric = eigvals_sym(&CumulativeMatrix::new(grid.k()).dense_ctc())?;
        let rel = numeric.iter().zip(ctc_spectrum(grid.k())).map(|(a, b)| (a - b).abs() / b.abs()).fold(0.0, f64::max);
        out.push(Check::upper("CᵀC spectrum matches closed form (relative)", rel, 0.0, 1e-8));
    } else {
        out.push(Check::skipped("CᵀC spectrum matches closed form (relative)"));
    }
    Ok(out)
}

fn fixed_point_checks(problem: &Problem, grid: &CategoricalGrid) -> Result<Vec<Check>> {
    let (m, f) = (&problem.model, &problem.features);
    let sys = assemble_system(m, f, grid)?;
    let star = solve_theta_star(&sys)?;
    let b_norm = norm2(&sys.bbar);
    let mut out = vec![Check::upper("‖Āθ* − b̄‖ ≤ 1e-10(1+‖b̄‖)", system_residual(&sys, &star), 1e-10 * (1.0 + b_norm), 0.0)];
    let it = iterate_projected_operator(m, f, grid, 1e-13, 20_000)?;
    let gap = it.theta.matrix().sub(star.matrix())?.max_abs();
    out.push(Check::upper("operator iteration matches direct solve", gap, 0.0, 1e-9));
    let ratio = it
        .gaps
        .windows(2)
        .filter(|w| w[0] > 1e-10)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max);
    out.push(Check::upper("operator contraction factor ≤ √γ", ratio, grid.gamma().sqrt(), 1e-6));
    let approx = approximation_error_report(m, f, grid, 8 * grid.k())?;
    out.push(Check::upper("approximation error W₁ bound", approx.lhs.max(0.0).sqrt(), approx.sqrt_bound, 1e-12));
    Ok(out)
}

fn noise_checks(problem: &Problem, grid: &CategoricalGrid) -> Result<Vec<Check>> {
    if !dense_ok(problem, grid) {
        return Ok(vec![Check::skipped("noise bounds (dK above dense cap)")]);
    }
    let (m, f) = (&problem.model, &problem.features);
    let sys = assemble_system(m, f, grid)?;
    let star = solve_theta_star(&sys)?;
    Ok(noise_stats(m, f, grid, &sys, &star)?.bound_checks(1e-9))
}

fn stability_checks(problem: &Problem, grid: &CategoricalGrid) -> Result<Vec<Check>> {
    if !dense_ok(problem, grid) {
        return Ok(vec![Check::skipped("stability inequalities (dK above dense cap)")]);
    }
    let (m, f) = (&problem.model, &problem.features);
    let sys = assemble_system(m, f, grid)?;
    let mut out = Vec::new();
    for p in 1..=2 {
        let alpha = 0.5 * alpha_p_inf(grid.gamma(), p as f64);
        let rep = stability_inequality_check(&sys, m, f, grid, alpha, p)?;
        out.extend(rep.checks().into_iter().map(|mut c| {
            c.name = format!("p={p}: {}", c.name);
            c
        }));
    }
    let biscuit = biscuit_norm(m, f, grid, &sys.sigma_phi)?;
    out.push(Check::upper("‖E[Y⊗Σφ^{-1/2}φφ′ᵀΣφ^{-1/2}]‖ ≤ √γ", biscuit, grid.gamma().sqrt(), 1e-9));
    let (lhs, bound) = rank_one_kronecker_check(m, f, grid)?;
    out.push(Check::upper("‖E[Y⊗xzᵀ]‖ ≤ C_Y√(C_x C_z)", lhs, bound, 1e-12));
    if grid.resolution_ok() {
        let star = solve_theta_star(&sys)?;
        let n = star.matrix().data().len();
        let bump: Vec<f64> =
            star.matrix().data().iter().enumerate().map(|(i, x)| x + 0.05 * ((i * 7 % 11) as f64 / 5.0 - 1.0)).collect();
        let theta = ThetaParam::new(*grid, Mat::new(f.d(), grid.k(), bump)?)?;
        debug_assert_eq!(theta.matrix().data().len(), n);
        let (lhs, rhs) = error_to_loss_check(&theta, &sys, &star, m, f)?;
        out.push(Check::upper("W₁ loss ≤ 2K^{-1/2}(1−γ)^{-2}λ_min^{-1/2}‖Ā(θ−θ*)‖", lhs, rhs, 1e-12));
    } else {
        out.push(Check::skipped("W₁ loss ≤ 2K^{-1/2}(1−γ)^{-2}λ_min^{-1/2}‖Ā(θ−θ*)‖"));
    }
    Ok(out)
}

fn decay_checks(problem: &Problem, grid: &CategoricalGrid) -> Result<Vec<Check>> {
    if !dense_ok(problem, grid) {
        return Ok(vec![Check::skipped("matrix-product decay (dK above dense cap)")]);
    }
    let (m, f) = (&problem.model, &problem.features);
    let sys = assemble_system(m, f, grid)?;
    let alpha = 0.5 * alpha_p_inf(grid.gamma(), 2.0);
    let rep = matrix_product_decay(m, f, grid, sys.lambda_min, alpha, &[50, 100], 1000, 2.0, 0)?;
    Ok(rep
        .estimates
        .iter()
        .map(|e| {
            Check::upper(
                format!("E‖Γ_t u‖² ≤ (1−αa)^{{2t}} + 4σ at t={}", e.t),
                e.mean_moment,
                e.envelope.powi(2),
                4.0 * e.std_error,
            )
        })
        .collect())
}

fn mean_preservation_checks(problem: &Problem, grid: &CategoricalGrid) -> Result<Vec<Check>> {
    let name = "Linear-CTD mean equals Linear-TD value over 1000 coupled steps";
    let (m, f) = (&problem.model, &problem.features);
    let Ok(psi0) = matched_td_init(f, grid.gamma()) else {
        return Ok(vec![Check::skipped(format!("{name} (constant not in feature span)"))]);
    };
    let steps = 1000;
    let mut ctd = LearnerState::new(Params::Theta { d: f.d(), k: grid.k(), data: vec![0.0; f.d() * grid.k()] }, steps);
    let mut td = LearnerState::new(Params::Psi(psi0), steps);
    let mut stream = SampleStream::new(0, 0, SampleMode::Generative);
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let tr = stream.draw_transition(m)?;
        linear_ctd_step(&mut ctd, &tr, m, f, grid, 0.05)?;
        linear_td_step(&mut td, &tr, m, f, 0.05)?;
        let v = value_of(&ctd.params().to_theta(grid).expect("Θ parameters"), f);
        let psi = td.params().to_psi().expect("ψ parameters");
        for (s, vs) in v.iter().enumerate() {
            worst = worst.max((vs - psi.value_at(f.phi(s))).abs());
        }
    }
    Ok(vec![Check::upper(name, worst, 0.0, 1e-8)])
}

/// Φ multiplied by `scale` without renormalisation.
pub fn scaled_features(f: &FeatureMap, scale: f64) -> FeatureMap {
    FeatureMap::new_unnormalized(f.matrix().scale(scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use lctd_core::mdp::make_experiment_mdp;

    fn problem() -> Problem {
        let (model, features) = make_experiment_mdp(0, 3, 3, 0.75, 3).unwrap();
        Problem { model, features }
    }

    #[test]
    fn default_model_passes() {
        let rep = verify(&problem(), &[4, 8]);
        assert!(rep.all_passed(), "{}", rep.to_text());
    }

    #[test]
    fn coarse_grid_skips_resolution_checks() {
        let rep = verify(&problem(), &[2]);
        assert!(rep.all_passed(), "{}", rep.to_text());
        assert!(rep.count(CheckStatus::Skipped) >= 3);
    }

    #[test]
    fn unnormalized_features_break_c_a() {
        let mut p = problem();
        p.features = scaled_features(&p.features, 3.0);
        let rep = verify(&p, &[8]);
        assert!(rep.lines.iter().any(|l| l.check.name.starts_with("C_A") && l.check.status == CheckStatus::Fail));
        assert!(!rep.all_passed());
    }
}
