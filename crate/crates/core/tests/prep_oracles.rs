mod common;

use common::oracles;
use ohz_core::prep::{class_means, ledoit_wolf, precision, ClassStats, Preprocessor};
use ohz_core::Matrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

/// Rows with independent coordinates of standard deviation `sqrt(1 + j)`.
fn anisotropic(r: &mut impl Rng, n: usize, d: usize) -> Matrix {
    let data = (0..n * d)
        .map(|i| {
            let z: f64 = r.sample(StandardNormal);
            z * (1.0 + (i % d) as f64).sqrt()
        })
        .collect();
    Matrix::from_vec(n, d, data).unwrap()
}

#[test]
fn ledoit_wolf_matches_formula_oracle() {
    let mut r = oracles::rng(21);
    for _ in 0..10 {
        let x = anisotropic(&mut r, 500, 8);
        let got = ledoit_wolf(&x).unwrap();
        let (sigma, lambda) = oracles::ledoit_wolf(&x);
        assert!(got.covariance.max_abs_diff(&sigma) < 1e-9);
        assert!((got.lambda - lambda).abs() < 1e-9);
    }
}

#[test]
fn lambda_in_unit_interval() {
    let mut r = oracles::rng(22);
    for _ in 0..100 {
        let n = r.random_range(2..60);
        let d = r.random_range(1..12);
        let x = if r.random_bool(0.5) {
            anisotropic(&mut r, n, d)
        } else {
            oracles::random_matrix(&mut r, n, d, 1.0)
        };
        let l = ledoit_wolf(&x).unwrap().lambda;
        assert!((0.0..=1.0).contains(&l), "lambda {l}");
    }
}

#[test]
fn lambda_shrinks_as_samples_grow() {
    let d = 16;
    let mut r = oracles::rng(23);
    let mean_lambda = |r: &mut rand_chacha::ChaCha8Rng, n: usize| {
        (0..20).map(|_| ledoit_wolf(&anisotropic(r, n, d)).unwrap().lambda).sum::<f64>() / 20.0
    };
    let small = mean_lambda(&mut r, d / 2);
    let mid = mean_lambda(&mut r, 2 * d);
    let large = mean_lambda(&mut r, 20 * d);
    assert!(small > mid && mid > large, "{small} {mid} {large}");
}

#[test]
fn covariance_is_symmetric_psd() {
    let mut r = oracles::rng(24);
    for _ in 0..20 {
        let n = r.random_range(3..40);
        let x = anisotropic(&mut r, n, 10);
        let cov = ledoit_wolf(&x).unwrap().covariance;
        assert!(cov.max_abs_diff(&cov.transpose()) < 1e-10);
        for _ in 0..20 {
            let v: Vec<f64> = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
            let mut q = 0.0;
            for i in 0..10 {
                for j in 0..10 {
                    q += v[i] * cov[(i, j)] * v[j];
                }
            }
            assert!(q >= -1e-10);
        }
    }
}

#[test]
fn precision_multiplies_back_to_identity() {
    let mut r = oracles::rng(25);
    for _ in 0..10 {
        let sigma = oracles::random_spd(&mut r, 16);
        let p = precision(&sigma, 1e-6).unwrap();
        let prod = sigma.matmul(&p).unwrap();
        assert!(prod.max_abs_diff(&Matrix::identity(16)) < 1e-8);
    }
    let p = precision(&Matrix::from_diagonal(&[2.0, 4.0]), 1e-6).unwrap();
    assert!(p.max_abs_diff(&Matrix::from_diagonal(&[0.5, 0.25])) < 1e-15);
}

#[test]
fn singular_covariance_is_floored() {
    let p = precision(&Matrix::from_diagonal(&[1.0, 0.0]), 1e-6).unwrap();
    assert!(p.is_finite());
    assert!((p[(1, 1)] - 1e6).abs() < 1e-3);
}

#[test]
fn center_matches_two_pass_oracle() {
    let mut r = oracles::rng(26);
    let x = oracles::random_matrix(&mut r, 100, 16, 4.0);
    let prep = Preprocessor::fit_center(&x).unwrap();
    for j in 0..16 {
        let mean = (0..100).map(|i| x[(i, j)]).sum::<f64>() / 100.0;
        assert!((prep.mean[j] - mean).abs() < 1e-12);
    }
}

#[test]
fn class_means_match_grouped_sum() {
    let mut r = oracles::rng(27);
    let x = oracles::random_matrix(&mut r, 90, 5, 2.0);
    let y: Vec<usize> = (0..90).map(|_| r.random_range(0..4)).collect();
    let (means, counts) = class_means(&x, &y, 4).unwrap();
    assert_eq!(counts.iter().sum::<usize>(), 90);
    for c in 0..4 {
        for j in 0..5 {
            let rows: Vec<f64> = (0..90).filter(|&i| y[i] == c).map(|i| x[(i, j)]).collect();
            let m = rows.iter().sum::<f64>() / rows.len() as f64;
            assert!((means[(c, j)] - m).abs() < 1e-12);
        }
    }
}

#[test]
fn fitted_stats_are_consistent() {
    let mut r = oracles::rng(28);
    let raw = anisotropic(&mut r, 300, 12);
    let y: Vec<usize> = (0..300).map(|i| i % 3).collect();
    let prep = Preprocessor::fit_center(&raw).unwrap();
    let x = prep.center_normalize(&raw).unwrap();
    let stats = ClassStats::fit(&x, &y, 3, 1e-6).unwrap();
    assert_eq!(stats.counts, vec![100, 100, 100]);
    assert!((0.0..=1.0).contains(&stats.shrinkage_lambda));
    let prod = stats.covariance.matmul(&stats.precision).unwrap();
    assert!(prod.max_abs_diff(&Matrix::identity(12)) < 1e-6);
}

proptest! {
    #[test]
    fn normalized_rows_are_unit_or_zero(
        data in prop::collection::vec(-10.0f64..10.0, 6 * 4),
        test in prop::collection::vec(-10.0f64..10.0, 5 * 4),
    ) {
        let train = Matrix::from_vec(6, 4, data).unwrap();
        let prep = Preprocessor::fit_center(&train).unwrap();
        let mut t = Matrix::from_vec(5, 4, test).unwrap();
        t.row_mut(0).copy_from_slice(&prep.mean.clone());
        let out = prep.center_normalize(&t).unwrap();
        prop_assert!(out.row(0).iter().all(|&v| v == 0.0));
        for row in out.iter_rows() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-9);
        }
    }
}
