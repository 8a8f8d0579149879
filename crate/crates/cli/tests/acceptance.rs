//! Acceptance criteria. Runs without the libtest harness so that the
//! `PASS`/`FAIL` line of every criterion, with its measurements and wall
//! time, always reaches the output. Criteria run one after another so the
//! timings are not inflated by each other.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic;
use std::time::{Duration, Instant};

use lctd_cli::config::ExperimentConfig;
use lctd_cli::experiment::Problem;
use lctd_cli::scaling::k_scaling;
use lctd_core::bellman::{
    ctc_spectrum, default_r_samples, projected_bellman_matrix, CumulativeMatrix, DEFAULT_BREAKPOINT_CAP,
};
use lctd_core::categorical::{measure_mean, project_categorical};
use lctd_core::fixed_point::{assemble_system, iterate_projected_operator, solve_theta_star, system_residual};
use lctd_core::learners::{
    linear_ctd_step, linear_td_step, matched_td_init, run, tabular_ctd_step, value_of,
};
use lctd_core::linalg::{eigvals_sym, norm2, spectral_norm};
use lctd_core::mdp::make_experiment_mdp;
use lctd_core::stability::{
    alpha_p_inf, biscuit_norm, matrix_product_decay, noise_stats, stability_inequality_check,
};
use lctd_core::{
    Algorithm, CategoricalGrid, FeatureMap, GeneralMeasure, LearnerConfig, LearnerState, Params, Reference,
    SampleMode, SampleStream,
};
use nalgebra::{DMatrix, DVector};

fn report(n: usize, title: &str, ok: bool, detail: &str, elapsed: Duration, limit: Option<Duration>) -> bool {
    let in_time = limit.is_none_or(|l| elapsed < l);
    let status = if ok && in_time { "PASS" } else { "FAIL" };
    let limit = limit.map(|l| format!(" (limit {:.0} s)", l.as_secs_f64())).unwrap_or_default();
    println!("{status} criterion {n}: {title}: {detail}; {:.2} s{limit}", elapsed.as_secs_f64());
    ok && in_time
}

fn criterion_1_matrix_properties() -> bool {
    let start = Instant::now();
    let (mut spec_gap, mut min_entry, mut col_dev, mut max_row, mut max_col) =
        (f64::NEG_INFINITY, f64::INFINITY, 0.0f64, 0.0f64, 0.0f64);
    let mut ctc_rel: f64 = 0.0;
    let mut samples = 0;
    for k in [1, 2, 4, 8, 16, 32, 64, 128, 256] {
        for gamma in [0.5, 0.75, 0.9, 0.99] {
            let grid = CategoricalGrid::new(k, gamma).unwrap();
            for r in default_r_samples(&grid, DEFAULT_BREAKPOINT_CAP) {
                let y = projected_bellman_matrix(r, &grid).unwrap();
                spec_gap = spec_gap.max(spectral_norm(&y) - gamma.sqrt());
                min_entry = min_entry.min(y.min_entry());
                col_dev = col_dev.max((y.norm_1() - gamma).abs());
                max_col = max_col.max(y.norm_1());
                max_row = max_row.max(y.norm_inf());
                samples += 1;
            }
        }
        let numeric = eigvals_sym(&CumulativeMatrix::new(k).dense_ctc()).unwrap();
        for (a, b) in numeric.iter().zip(ctc_spectrum(k)) {
            ctc_rel = ctc_rel.max((a - b).abs() / b.abs());
        }
    }
    // The norm equal to γ is the maximum absolute column sum; the maximum
    // absolute row sum is the one bounded by 1.
    let ok = spec_gap <= 1e-10 && min_entry >= -1e-14 && col_dev <= 1e-10 && max_row <= 1.0 + 1e-10 && ctc_rel <= 1e-8;
    let detail = format!(
        "{samples} (K, γ, r) samples; max ‖Y‖−√γ = {spec_gap:.3e}, min entry = {min_entry:.3e}, \
         max |col-sum norm − γ| = {col_dev:.3e}, max row-sum norm = {max_row:.6}, max col-sum norm = {max_col:.6}, \
         CᵀC spectrum rel err = {ctc_rel:.3e}"
    );
    report(1, "matrix-property suite", ok, &detail, start.elapsed(), Some(Duration::from_secs(60)))
}

/// Least-squares step-CDF fit on a quadrature grid, through the normal equations.
fn quadrature_projection(nu: &GeneralMeasure, grid: &CategoricalGrid) -> Vec<f64> {
    let k = grid.k();
    let per = (10_000 / (3 * (k + 8))).max(1);
    let nodes = common::quadrature(0.0, grid.x_max(), &common::breakpoints(nu, grid), per);
    let mut a = DMatrix::<f64>::zeros(nodes.len(), k);
    let mut y = DVector::<f64>::zeros(nodes.len());
    for (q, &(x, w)) in nodes.iter().enumerate() {
        let sw = w.sqrt();
        for j in 0..k {
            if grid.x(j) <= x {
                a[(q, j)] = sw;
            }
        }
        y[q] = sw * common::general_cdf(nu, x);
    }
    let ata = a.transpose() * &a;
    let aty = a.transpose() * y;
    ata.lu().solve(&aty).expect("normal equations are nonsingular").iter().copied().collect()
}

fn criterion_2_projection_oracle() -> bool {
    let start = Instant::now();
    let mut rng = common::rng(2024);
    let (mut worst, mut mean_err) = (0.0f64, 0.0f64);
    for case in 0..100 {
        let k = 1 + case % 32;
        let grid = CategoricalGrid::new(k, [0.5, 0.75, 0.9][case % 3]).unwrap();
        let nu = common::random_measure(&mut rng, grid.x_max());
        let p = project_categorical(&nu, &grid).unwrap();
        for (a, b) in p.p().iter().zip(quadrature_projection(&nu, &grid)) {
            worst = worst.max((a - b).abs());
        }
        mean_err = mean_err.max((measure_mean(&p) - nu.mean()).abs());
    }
    let ok = worst <= 1e-6 && mean_err <= 1e-10;
    let detail = format!("100 measures, K ≤ 32; max |p − p_quad| = {worst:.3e}, max mean error = {mean_err:.3e}");
    report(2, "projection oracle", ok, &detail, start.elapsed(), Some(Duration::from_secs(30)))
}

fn criterion_3_fixed_point_residuals() -> bool {
    let start = Instant::now();
    let (mut res_ratio, mut iter_gap, mut contraction_excess) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for i in 0..20u64 {
        let s = 1 + (i as usize % 5);
        let d = 1 + (i as usize / 5) % s;
        let k = [4, 8, 16, 32, 64][i as usize % 5];
        let gamma = [0.5, 0.75, 0.9][i as usize % 3];
        let (m, f) = make_experiment_mdp(i, s, d, gamma, 3).unwrap();
        let grid = CategoricalGrid::new(k, gamma).unwrap();
        let sys = assemble_system(&m, &f, &grid).unwrap();
        let star = solve_theta_star(&sys).unwrap();
        res_ratio = res_ratio.max(system_residual(&sys, &star) / (1e-10 * (1.0 + norm2(&sys.bbar))));
        let it = iterate_projected_operator(&m, &f, &grid, 1e-13, 50_000).unwrap();
        iter_gap = iter_gap.max(it.theta.matrix().sub(star.matrix()).unwrap().max_abs());
        for w in it.gaps.windows(2).filter(|w| w[0] > 1e-10) {
            contraction_excess = contraction_excess.max(w[1] / w[0] - gamma.sqrt());
        }
    }
    let ok = res_ratio <= 1.0 && iter_gap <= 1e-9 && contraction_excess <= 1e-6;
    let detail = format!(
        "20 models; max residual / (1e-10(1+‖b̄‖)) = {res_ratio:.3e}, operator iteration vs solve = {iter_gap:.3e}, \
         max contraction − √γ = {contraction_excess:.3e}"
    );
    report(3, "fixed-point residuals", ok, &detail, start.elapsed(), None)
}

fn criterion_4_tabular_equivalence_and_mean_preservation() -> bool {
    let start = Instant::now();
    let gamma = 0.75;
    let steps = 1000;
    let (m, f) = make_experiment_mdp(0, 3, 3, gamma, 3).unwrap();
    let grid = CategoricalGrid::new(30, gamma).unwrap();
    let one_hot = FeatureMap::one_hot(3);
    let mut lin = LearnerState::new(Params::zeros_for(Algorithm::LinearCtd, 3, 3, &grid), steps);
    let mut tab = LearnerState::new(Params::zeros_for(Algorithm::TabularCtd, 3, 3, &grid), steps);
    let mut ctd = LearnerState::new(Params::zeros_for(Algorithm::LinearCtd, 3, 3, &grid), steps);
    let mut td = LearnerState::new(Params::Psi(matched_td_init(&f, gamma).unwrap()), steps);
    let mut stream = SampleStream::new(4, 0, SampleMode::Generative);
    let (mut tab_gap, mut mean_gap) = (0.0f64, 0.0f64);
    for _ in 0..steps {
        let tr = stream.draw_transition(&m).unwrap();
        linear_ctd_step(&mut lin, &tr, &m, &one_hot, &grid, 0.2).unwrap();
        tabular_ctd_step(&mut tab, &tr, &m, &grid, 0.2).unwrap();
        linear_ctd_step(&mut ctd, &tr, &m, &f, &grid, 0.05).unwrap();
        linear_td_step(&mut td, &tr, &m, &f, 0.05).unwrap();
        let a = lin.params().to_theta(&grid).unwrap();
        let b = tab.params().to_theta(&grid).unwrap();
        tab_gap = tab_gap.max(a.matrix().sub(b.matrix()).unwrap().max_abs());
        let v = value_of(&ctd.params().to_theta(&grid).unwrap(), &f);
        let psi = td.params().to_psi().unwrap();
        for (s, vs) in v.iter().enumerate() {
            mean_gap = mean_gap.max((vs - psi.value_at(f.phi(s))).abs());
        }
    }
    let ok = tab_gap <= 1e-12 && mean_gap <= 1e-8;
    let detail = format!("{steps} coupled steps; one-hot vs tabular = {tab_gap:.3e}, max_s |V_θ − V_ψ| = {mean_gap:.3e}");
    report(4, "tabular equivalence and mean preservation", ok, &detail, start.elapsed(), Some(Duration::from_secs(30)))
}

fn criterion_5_stability_bounds() -> bool {
    let start = Instant::now();
    let mut worst = [f64::NEG_INFINITY; 5];
    let mut cases = 0;
    for seed in 0..3 {
        for gamma in [0.5, 0.75, 0.9] {
            for k in [8, 16, 32] {
                let grid = CategoricalGrid::new(k, gamma).unwrap();
                if !grid.resolution_ok() {
                    continue;
                }
                cases += 1;
                let (m, f) = make_experiment_mdp(seed, 3, 3, gamma, 3).unwrap();
                let sys = assemble_system(&m, &f, &grid).unwrap();
                let star = solve_theta_star(&sys).unwrap();
                let st = noise_stats(&m, &f, &grid, &sys, &star).unwrap();
                let kk = k as f64;
                let sg = gamma.sqrt();
                worst[0] = worst[0].max(st.c_a - 2.0 * (1.0 + sg));
                worst[1] = worst[1].max(st.max_b_norm - 3.0 * kk.sqrt() * (1.0 - gamma));
                worst[2] = worst[2]
                    .max(st.trace_sigma_e - 18.0 * (st.theta_star_weighted_sq + kk * (1.0 - gamma).powi(2)));
                let alpha = 0.999 * alpha_p_inf(gamma, 1.0);
                let rep = stability_inequality_check(&sys, &m, &f, &grid, alpha, 1).unwrap();
                worst[3] = worst[3].max(-rep.eb_margin);
                worst[4] = worst[4].max(biscuit_norm(&m, &f, &grid, &sys.sigma_phi).unwrap() - sg);
            }
        }
    }
    let ok = worst[0] <= 0.0 && worst[1] <= 0.0 && worst[2] <= 0.0 && worst[3] <= 1e-9 && worst[4] <= 1e-9;
    let detail = format!(
        "{cases} resolution_ok models; max excess over bound: C_A {:.3e}, ‖b‖ {:.3e}, tr Σ_e {:.3e}, \
         E[B] PSD margin {:.3e}, biscuit {:.3e}",
        worst[0], worst[1], worst[2], worst[3], worst[4]
    );
    report(5, "stability bounds", ok, &detail, start.elapsed(), None)
}

fn criterion_6_convergence_rate() -> bool {
    let start = Instant::now();
    let gamma = 0.75;
    let (m, f) = make_experiment_mdp(0, 3, 3, gamma, 3).unwrap();
    let grid = CategoricalGrid::new(64, gamma).unwrap();
    let star = solve_theta_star(&assemble_system(&m, &f, &grid).unwrap()).unwrap();
    let reference = Reference::Theta(star);
    let t = 20_000;
    let seeds = 16;
    let (mut e1, mut e4) = (0.0, 0.0);
    for seed in 0..seeds {
        let mut cfg = LearnerConfig::new(Algorithm::LinearCtd, 0.1 * (1.0 - gamma.sqrt()), 4 * t);
        cfg.seed = seed;
        let out = run(&cfg, &m, &f, &grid, &[t, 4 * t], &reference, None).unwrap();
        assert!(!out.diverged);
        let at = |tt: usize| out.trace.rows.iter().find(|r| r.t == tt).unwrap().loss_l2_mu;
        e1 += at(t) / seeds as f64;
        e4 += at(4 * t) / seeds as f64;
    }
    let ratio = e1 / e4;
    let ok = (1.4..=2.8).contains(&ratio);
    let detail = format!("mean ℓ₂ error {e1:.4e} at T = {t}, {e4:.4e} at 4T; ratio = {ratio:.3} (band [1.4, 2.8])");
    report(6, "convergence rate", ok, &detail, start.elapsed(), Some(Duration::from_secs(300)))
}

fn criterion_7_step_size_scaling() -> bool {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        k_list: vec![30, 45, 75, 105, 150],
        seeds: vec![0, 1, 2],
        t_max: 200_000,
        batch: 25,
        epsilon: 2e-6,
        divergence: 1e6,
        rel_tol: 0.05,
        ..ExperimentConfig::default()
    };
    let problem = Problem::from_config(&cfg).unwrap();
    let rep = k_scaling(&cfg, &problem).unwrap();
    let ok = rep.baseline.len() == 5
        && rep.ctd.len() == 5
        && rep.baseline_fit.r_squared >= 0.99
        && rep.ctd_ratio <= 2.0
        && rep.baseline.iter().chain(&rep.ctd).all(|r| r.is_monotone() && r.upper / r.lower <= 1.05);
    let brackets = |rs: &[lctd_cli::search::AlphaSearchResult]| {
        rs.iter().map(|r| format!("{}:[{:.3e},{:.3e}]", r.k, r.lower, r.upper)).collect::<Vec<_>>().join(" ")
    };
    let detail = format!(
        "baseline 1/α∞ quadratic fit R² = {:.6}; Linear-CTD α∞ max/min = {:.3}; baseline {}; Linear-CTD {}",
        rep.baseline_fit.r_squared,
        rep.ctd_ratio,
        brackets(&rep.baseline),
        brackets(&rep.ctd)
    );
    report(7, "step-size scaling", ok, &detail, start.elapsed(), Some(Duration::from_secs(1800)))
}

fn criterion_8_matrix_product_decay() -> bool {
    let start = Instant::now();
    let gamma = 0.75;
    let (m, f) = make_experiment_mdp(0, 3, 3, gamma, 3).unwrap();
    let grid = CategoricalGrid::new(16, gamma).unwrap();
    let sys = assemble_system(&m, &f, &grid).unwrap();
    let alpha = 0.5 * alpha_p_inf(gamma, 2.0);
    let rep = matrix_product_decay(&m, &f, &grid, sys.lambda_min, alpha, &[50, 100, 200], 2000, 2.0, 8).unwrap();
    let ok = rep.estimates.iter().all(|e| e.within_band);
    let detail = rep
        .estimates
        .iter()
        .map(|e| format!("t={}: E^(1/2)‖Γu‖² = {:.6} vs (1−αa)^t = {:.6} (σ = {:.1e})", e.t, e.estimate, e.envelope, e.std_error))
        .collect::<Vec<_>>()
        .join(", ");
    report(8, "matrix-product decay", ok, &detail, start.elapsed(), Some(Duration::from_secs(120)))
}

fn main() {
    let criteria: [(&str, fn() -> bool); 8] = [
        ("criterion 1", criterion_1_matrix_properties),
        ("criterion 2", criterion_2_projection_oracle),
        ("criterion 3", criterion_3_fixed_point_residuals),
        ("criterion 4", criterion_4_tabular_equivalence_and_mean_preservation),
        ("criterion 5", criterion_5_stability_bounds),
        ("criterion 6", criterion_6_convergence_rate),
        ("criterion 7", criterion_7_step_size_scaling),
        ("criterion 8", criterion_8_matrix_product_decay),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match panic::catch_unwind(f) {
            Ok(true) => {}
            Ok(false) => failed += 1,
            Err(_) => {
                println!("FAIL {name}: panicked");
                failed += 1;
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
