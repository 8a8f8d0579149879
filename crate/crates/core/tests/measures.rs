mod common;

use common::{breakpoints, general_cdf, quadrature, random_measure, step_cdf};
use lctd_core::categorical::{
    cramer_l2, measure_mean, project_categorical, pushforward_project, wasserstein_w1, PiecewiseCdf, Segment,
};
use lctd_core::{CategoricalGrid, GeneralMeasure, SignedCategoricalMeasure};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

/// Least-squares fit of a step CDF with jumps at x_0..x_{K−1} to F_ν on a
/// quadrature grid over [0, x_K], solved through the normal equations.
fn quadrature_projection(nu: &GeneralMeasure, grid: &CategoricalGrid) -> Vec<f64> {
    let k = grid.k();
    // ~10⁴ nodes overall.
    let per = (10_000 / (3 * (k + 8))).max(1);
    let nodes = quadrature(0.0, grid.x_max(), &breakpoints(nu, grid), per);
    let mut a = DMatrix::<f64>::zeros(nodes.len(), k);
    let mut y = DVector::<f64>::zeros(nodes.len());
    for (q, &(x, w)) in nodes.iter().enumerate() {
        let sw = w.sqrt();
        for j in 0..k {
            if grid.x(j) <= x {
                a[(q, j)] = sw;
            }
        }
        y[q] = sw * general_cdf(nu, x);
    }
    let ata = a.transpose() * &a;
    let aty = a.transpose() * y;
    ata.lu().solve(&aty).expect("normal equations are nonsingular").iter().copied().collect()
}

fn quad_l2_sq(a: &[f64], b: &[f64], grid: &CategoricalGrid) -> f64 {
    let breaks: Vec<f64> = (0..=grid.k()).map(|k| grid.x(k)).collect();
    quadrature(0.0, grid.x_max(), &breaks, 1)
        .into_iter()
        .map(|(x, w)| w * (step_cdf(a, grid, x) - step_cdf(b, grid, x)).powi(2))
        .sum()
}

fn random_categorical(rng: &mut impl Rng, grid: CategoricalGrid) -> SignedCategoricalMeasure {
    let p = (0..grid.k()).map(|_| rng.random_range(-0.5..1.0) / grid.k() as f64).collect();
    SignedCategoricalMeasure::new(grid, p).unwrap()
}

#[test]
fn projection_matches_quadrature_least_squares() {
    let mut rng = common::rng(11);
    for case in 0..100 {
        let k = 1 + case % 32;
        let gamma = [0.5, 0.75, 0.9][case % 3];
        let grid = CategoricalGrid::new(k, gamma).unwrap();
        let nu = random_measure(&mut rng, grid.x_max());
        let p = project_categorical(&nu, &grid).unwrap();
        let oracle = quadrature_projection(&nu, &grid);
        for (a, b) in p.p().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "case {case}: {a} vs {b}");
        }
        assert!((measure_mean(&p) - nu.mean()).abs() < 1e-10);
    }
}

#[test]
fn full_uniform_projection_matches_quadrature() {
    let grid = CategoricalGrid::new(4, 0.75).unwrap();
    let nu = GeneralMeasure::uniform(0.0, grid.x_max()).unwrap();
    let p = project_categorical(&nu, &grid).unwrap();
    let oracle = quadrature_projection(&nu, &grid);
    for (a, b) in p.p().iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn projection_examples() {
    let grid = CategoricalGrid::new(5, 0.75).unwrap();
    let p = project_categorical(&GeneralMeasure::dirac(grid.x(2)), &grid).unwrap();
    assert_eq!(p.full_pmf(), vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    let mid = project_categorical(&GeneralMeasure::dirac(0.5 * grid.x(1)), &grid).unwrap();
    assert!((mid.p()[0] - 0.5).abs() < 1e-15 && (mid.p()[1] - 0.5).abs() < 1e-15);
    assert!(project_categorical(&GeneralMeasure::dirac(grid.x_max() + 0.1), &grid).is_err());
}

#[test]
fn distance_examples() {
    let grid = CategoricalGrid::new(6, 0.5).unwrap();
    let d0 = SignedCategoricalMeasure::dirac(grid, 0).unwrap();
    let d1 = SignedCategoricalMeasure::dirac(grid, 1).unwrap();
    let d2 = SignedCategoricalMeasure::dirac(grid, 2).unwrap();
    assert!((cramer_l2(&d0, &d1).unwrap() - grid.iota().sqrt()).abs() < 1e-15);
    assert!((wasserstein_w1(&d0, &d2).unwrap() - 2.0 * grid.iota()).abs() < 1e-15);
    assert_eq!(cramer_l2(&d1, &d1).unwrap(), 0.0);
    let other = CategoricalGrid::new(6, 0.75).unwrap();
    assert!(cramer_l2(&d0, &SignedCategoricalMeasure::dirac(other, 0).unwrap()).is_err());
}

#[test]
fn pushforward_examples() {
    let grid = CategoricalGrid::new(8, 0.75).unwrap();
    let d0 = SignedCategoricalMeasure::dirac(grid, 0).unwrap();
    assert_eq!(pushforward_project(&d0, 0.0).unwrap().full_pmf(), d0.full_pmf());
    let shifted = pushforward_project(&d0, grid.x(1)).unwrap();
    let d1 = SignedCategoricalMeasure::dirac(grid, 1).unwrap();
    for (a, b) in shifted.full_pmf().iter().zip(d1.full_pmf()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(pushforward_project(&d0, -0.1).is_err());
}

#[test]
fn mean_examples() {
    let grid = CategoricalGrid::new(7, 0.6).unwrap();
    assert!((measure_mean(&SignedCategoricalMeasure::dirac(grid, 3).unwrap()) - grid.x(3)).abs() < 1e-14);
    let u = SignedCategoricalMeasure::uniform(grid);
    assert!((measure_mean(&u) - grid.x_max() / 2.0).abs() < 1e-12);
}

#[test]
fn uniform_shift_bound() {
    for gamma in [0.5, 0.75, 0.9] {
        for k in [10, 16, 32, 64] {
            let grid = CategoricalGrid::new(k, gamma).unwrap();
            if !grid.resolution_ok() {
                continue;
            }
            let nu = SignedCategoricalMeasure::uniform(grid);
            for i in 0..=10 {
                let r = i as f64 / 10.0;
                let pushed = pushforward_project(&nu, r).unwrap();
                let lhs = cramer_l2(&pushed, &nu).unwrap() / grid.iota().sqrt();
                assert!(lhs <= 3.0 * (k as f64).sqrt() * (1.0 - gamma) + 1e-12);
            }
        }
    }
}

#[test]
fn csv_row_has_k_gamma_and_masses() {
    let grid = CategoricalGrid::new(3, 0.5).unwrap();
    let row = SignedCategoricalMeasure::dirac(grid, 1).unwrap().to_csv_row();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields.len(), 2 + 3);
    assert_eq!(fields[0], "3");
}

fn grid_strategy() -> impl Strategy<Value = CategoricalGrid> {
    (1usize..=24, prop::sample::select(vec![0.5, 0.75, 0.9])).prop_map(|(k, g)| CategoricalGrid::new(k, g).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cramer_matches_quadrature(grid in grid_strategy(), seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let a = random_categorical(&mut rng, grid);
        let b = random_categorical(&mut rng, grid);
        let q = quad_l2_sq(&a.full_pmf(), &b.full_pmf(), &grid);
        let l2 = cramer_l2(&a, &b).unwrap();
        prop_assert!((l2 * l2 - q).abs() <= 1e-10 * q.max(1e-12));
        let w1 = wasserstein_w1(&a, &b).unwrap();
        prop_assert!(w1 <= l2 / (1.0 - grid.gamma()).sqrt() + 1e-12);
    }

    #[test]
    fn pythagoras(grid in grid_strategy(), seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let nu = random_measure(&mut rng, grid.x_max());
        let proj = project_categorical(&nu, &grid).unwrap();
        let other = random_categorical(&mut rng, grid);
        let (lo, hi) = (0.0, grid.x_max());
        let f_nu = PiecewiseCdf::from_general(&nu, lo, hi);
        let lhs = f_nu.l2_squared(&PiecewiseCdf::from_categorical(&other));
        let a = f_nu.l2_squared(&PiecewiseCdf::from_categorical(&proj));
        let b = cramer_l2(&proj, &other).unwrap().powi(2);
        prop_assert!((lhs - a - b).abs() <= 1e-9 * lhs.max(1.0));
    }

    #[test]
    fn projection_is_non_expansive_and_mean_preserving(grid in grid_strategy(), seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let n1 = random_measure(&mut rng, grid.x_max());
        let n2 = random_measure(&mut rng, grid.x_max());
        let p1 = project_categorical(&n1, &grid).unwrap();
        let p2 = project_categorical(&n2, &grid).unwrap();
        let full = PiecewiseCdf::from_general(&n1, 0.0, grid.x_max()).l2(&PiecewiseCdf::from_general(&n2, 0.0, grid.x_max()));
        prop_assert!(cramer_l2(&p1, &p2).unwrap() <= full + 1e-12);
        prop_assert!((measure_mean(&p1) - n1.mean()).abs() < 1e-10);
    }

    #[test]
    fn pushforward_is_a_sqrt_gamma_contraction(grid in grid_strategy(), r in 0.0f64..=1.0, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let a = random_categorical(&mut rng, grid);
        let b = random_categorical(&mut rng, grid);
        let lhs = cramer_l2(&pushforward_project(&a, r).unwrap(), &pushforward_project(&b, r).unwrap()).unwrap();
        prop_assert!(lhs <= grid.gamma().sqrt() * cramer_l2(&a, &b).unwrap() + 1e-12);
    }

    #[test]
    fn pushforward_matches_projection_of_shifted_atoms(grid in grid_strategy(), r in 0.0f64..=1.0, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let nu = random_categorical(&mut rng, grid);
        let fast = pushforward_project(&nu, r).unwrap();
        let shifted = GeneralMeasure::from_categorical(&nu).affine_pushforward(r, grid.gamma());
        let slow = project_categorical(&shifted, &grid).unwrap();
        for (a, b) in fast.p().iter().zip(slow.p()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cdf_round_trip(grid in grid_strategy(), seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let nu = random_categorical(&mut rng, grid);
        let back = nu.cdf().to_measure();
        for (a, b) in nu.p().iter().zip(back.p()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!((nu.full_pmf().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn segment_projection_mean(grid in grid_strategy(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (l, r) = (a.min(b) * grid.x_max(), a.max(b) * grid.x_max());
        let nu = GeneralMeasure::new(vec![], vec![Segment { left: l, right: r, mass: 1.0 }]).unwrap();
        let p = project_categorical(&nu, &grid).unwrap();
        prop_assert!((measure_mean(&p) - 0.5 * (l + r)).abs() < 1e-10);
    }
}
