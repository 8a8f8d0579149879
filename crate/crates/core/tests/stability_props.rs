mod common;

use lctd_core::fixed_point::{assemble_system, solve_theta_star, ThetaParam};
use lctd_core::learners::{linear_ctd_step, LearnerState, Params};
use lctd_core::linalg::{spectral_norm, Mat};
use lctd_core::stability::{
    alpha_p_inf, biscuit_norm, enumerate_outcomes, error_to_loss_check, matrix_product_decay, noise_stats,
    rank_one_kronecker_check, stability_inequality_check, stability_margins, StabilityError,
};
use lctd_core::{CategoricalGrid, CheckStatus, FeatureMap, SampleMode, SampleStream};
use proptest::prelude::*;
use rand::Rng;

const GAMMAS: [f64; 3] = [0.5, 0.75, 0.9];

#[test]
fn noise_bounds_hold_across_resolutions() {
    for gamma in GAMMAS {
        let (m, f) = common::model(11, 3, 3, gamma, 3);
        for k in [8, 16, 32, 64] {
            let grid = CategoricalGrid::new(k, gamma).unwrap();
            let sys = assemble_system(&m, &f, &grid).unwrap();
            let star = solve_theta_star(&sys).unwrap();
            let stats = noise_stats(&m, &f, &grid, &sys, &star).unwrap();
            for c in stats.bound_checks(1e-9) {
                assert_ne!(c.status, CheckStatus::Fail, "K={k} γ={gamma}: {} = {} > {}", c.name, c.value, c.bound);
                if c.status == CheckStatus::Skipped {
                    assert!(!grid.resolution_ok());
                }
            }
        }
    }
}

#[test]
fn sampled_noise_trace_matches_exact_value() {
    // e = Aθ* − b is recovered from one unit-step learner update at θ*.
    let gamma = 0.75;
    let (m, f) = common::model(2, 3, 3, gamma, 3);
    let grid = CategoricalGrid::new(8, gamma).unwrap();
    let sys = assemble_system(&m, &f, &grid).unwrap();
    let star = solve_theta_star(&sys).unwrap();
    let exact = noise_stats(&m, &f, &grid, &sys, &star).unwrap().trace_sigma_e;
    let start = Params::from_theta(&star);
    let mut stream = SampleStream::new(21, 0, SampleMode::Generative);
    let n = 200_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let tr = stream.draw_transition(&m).unwrap();
        let mut st = LearnerState::new(start.clone(), 2);
        linear_ctd_step(&mut st, &tr, &m, &f, &grid, 1.0).unwrap();
        let e2: f64 = st.params().data().iter().zip(start.data()).map(|(a, b)| (a - b).powi(2)).sum();
        sum += e2;
        sq += e2 * e2;
    }
    let mean = sum / n as f64;
    let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - exact).abs() <= 4.0 * se, "{mean} vs {exact} (se {se})");
}

#[test]
fn stability_inequalities_hold_below_alpha_p_inf() {
    for gamma in GAMMAS {
        let (m, f) = common::model(3, 3, 3, gamma, 3);
        for k in [4, 12, 24] {
            let grid = CategoricalGrid::new(k, gamma).unwrap();
            let sys = assemble_system(&m, &f, &grid).unwrap();
            for p in 1..=3 {
                let alpha = 0.9 * alpha_p_inf(gamma, p as f64);
                let rep = stability_inequality_check(&sys, &m, &f, &grid, alpha, p).unwrap();
                for c in rep.checks() {
                    assert!(c.passed(), "K={k} γ={gamma} p={p}: {} margin {}", c.name, c.value);
                }
                assert!(rep.a > 0.0);
            }
        }
    }
}

#[test]
fn first_order_margin_survives_larger_steps() {
    // E[B] ≽ (2(1−√γ) − 2α(1+γ))I⊗Σφ, which stays above ½(1−√γ) here.
    for gamma in GAMMAS {
        let (m, f) = common::model(4, 3, 3, gamma, 3);
        let grid = CategoricalGrid::new(16, gamma).unwrap();
        let sys = assemble_system(&m, &f, &grid).unwrap();
        let outs = enumerate_outcomes(&m, &f, &grid).unwrap();
        let alpha = (1.0 - gamma.sqrt()) / (2.0 * (1.0 + gamma));
        let rep = stability_margins(&sys, &outs, &grid, alpha, 1).unwrap();
        assert!(rep.power_margin > 0.0, "γ={gamma}: {}", rep.power_margin);
    }
}

#[test]
fn stability_check_rejects_out_of_range_arguments() {
    let (m, f) = common::model(0, 3, 3, 0.75, 3);
    let grid = CategoricalGrid::new(4, 0.75).unwrap();
    let sys = assemble_system(&m, &f, &grid).unwrap();
    let bound = alpha_p_inf(0.75, 2.0);
    assert!(matches!(stability_inequality_check(&sys, &m, &f, &grid, bound, 2), Err(StabilityError::StepSize { .. })));
    assert!(matches!(stability_inequality_check(&sys, &m, &f, &grid, 0.0, 2), Err(StabilityError::StepSize { .. })));
    assert!(matches!(stability_inequality_check(&sys, &m, &f, &grid, bound / 2.0, 4), Err(StabilityError::Order(4))));
}

#[test]
fn kronecker_cross_moment_bounds() {
    for gamma in GAMMAS {
        for seed in 0..4 {
            let (m, f) = common::model(seed, 4, 3, gamma, 3);
            let grid = CategoricalGrid::new(10, gamma).unwrap();
            let sigma = f.sigma(m.stationary());
            assert!(biscuit_norm(&m, &f, &grid, &sigma).unwrap() <= gamma.sqrt() + 1e-10);
            let (lhs, bound) = rank_one_kronecker_check(&m, &f, &grid).unwrap();
            assert!(lhs <= bound + 1e-12);
        }
    }
}

#[test]
fn per_outcome_update_matrix_norm() {
    for gamma in GAMMAS {
        let (m, f) = common::model(6, 3, 3, gamma, 3);
        let grid = CategoricalGrid::new(9, gamma).unwrap();
        for o in enumerate_outcomes(&m, &f, &grid).unwrap() {
            assert!(spectral_norm(&o.a) <= 1.0 + gamma.sqrt() + 1e-12);
        }
    }
}

#[test]
fn one_hot_w1_matches_brute_force() {
    let gamma = 0.75;
    let (m, _) = common::model(1, 4, 4, gamma, 3);
    let f = FeatureMap::one_hot(4);
    let grid = CategoricalGrid::new(12, gamma).unwrap();
    let mut rng = common::rng(5);
    let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
        let data = (0..4 * 12).map(|_| rng.random_range(-0.1..0.1)).collect();
        ThetaParam::new(grid, Mat::new(4, 12, data).unwrap()).unwrap()
    };
    let (a, b) = (mk(&mut rng), mk(&mut rng));
    let mut brute = 0.0;
    for s in 0..4 {
        let fa = a.cdf_at(f.phi(s));
        let fb = b.cdf_at(f.phi(s));
        let l1: f64 = fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).sum();
        brute += m.stationary()[s] * (grid.iota() * l1).powi(2);
    }
    assert!((a.w1_mu_distance(&b, &f, m.stationary()) - brute.sqrt()).abs() < 1e-13);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn parameter_error_controls_w1_loss(seed in any::<u64>(), gi in 0usize..3, scale in 1e-3f64..1.0) {
        let gamma = GAMMAS[gi];
        let (m, f) = common::model(seed % 9, 3, 3, gamma, 3);
        let k = (1.0 / (1.0 - gamma)).ceil() as usize + 4;
        let grid = CategoricalGrid::new(k, gamma).unwrap();
        let sys = assemble_system(&m, &f, &grid).unwrap();
        let star = solve_theta_star(&sys).unwrap();
        let mut rng = common::rng(seed);
        let data: Vec<f64> = star.matrix().data().iter().map(|x| x + scale * rng.random_range(-1.0..1.0)).collect();
        let theta = ThetaParam::new(grid, Mat::new(3, k, data).unwrap()).unwrap();
        let (lhs, rhs) = error_to_loss_check(&theta, &sys, &star, &m, &f).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-15, "{lhs} > {rhs}");
    }
}

#[test]
fn decay_rejects_bad_arguments() {
    let (m, f) = common::model(0, 3, 3, 0.75, 3);
    let grid = CategoricalGrid::new(4, 0.75).unwrap();
    assert!(matches!(matrix_product_decay(&m, &f, &grid, 0.1, 0.01, &[10], 999, 2.0, 0), Err(StabilityError::Trials(999))));
    assert!(matches!(matrix_product_decay(&m, &f, &grid, 0.1, 0.01, &[10], 1000, 1.5, 0), Err(StabilityError::MomentOrder(_))));
}

#[test]
fn decay_with_zero_step_is_identity() {
    let (m, f) = common::model(0, 3, 3, 0.75, 3);
    let grid = CategoricalGrid::new(4, 0.75).unwrap();
    let rep = matrix_product_decay(&m, &f, &grid, 0.1, 0.0, &[0, 5, 20], 1000, 2.0, 3).unwrap();
    for e in &rep.estimates {
        assert!((e.estimate - 1.0).abs() < 1e-12);
        assert_eq!(e.envelope, 1.0);
        assert!(e.within_band);
    }
}

#[test]
fn decay_stays_under_envelope() {
    let gamma = 0.75;
    let (m, f) = common::model(7, 3, 3, gamma, 3);
    let grid = CategoricalGrid::new(8, gamma).unwrap();
    let sys = assemble_system(&m, &f, &grid).unwrap();
    let alpha = 0.5 * alpha_p_inf(gamma, 2.0);
    let rep = matrix_product_decay(&m, &f, &grid, sys.lambda_min, alpha, &[25, 50, 100], 1000, 2.0, 9).unwrap();
    let mut prev = f64::INFINITY;
    for e in &rep.estimates {
        assert!(e.within_band, "t={}: {} vs {}", e.t, e.estimate, e.envelope);
        assert!(e.estimate < prev);
        prev = e.estimate;
    }
}
