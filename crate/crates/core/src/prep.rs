//! Feature preprocessing and class-conditional Gaussian statistics.
//!
//! Distance-based scores work on centered, unit-length features. The
//! centering vector is always fitted on training features and only applied
//! to test features; no constructor here sees test data.
//!
//! Class statistics use one covariance shared by all classes, estimated
//! from within-class residuals with Ledoit–Wolf shrinkage toward the
//! scaled identity `(tr S / d)·I`:
//!
//! ```text
//! S   = RᵀR / N
//! δ²  = ‖S − (tr S / d) I‖²_F
//! β²  = min(δ², Σ_i ‖r_i r_iᵀ − S‖²_F / N²)
//! λ   = clamp(β² / δ², 0, 1)
//! Σ   = (1 − λ) S + λ (tr S / d) I
//! ```

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::matrix::{dot, Matrix};

/// Rows with `‖x − μ‖₂` below this map to the zero vector.
pub const DEGENERATE_NORM: f64 = 1e-12;
/// Covariance used when every residual is zero: `ZERO_RESIDUAL_VARIANCE · I`.
pub const ZERO_RESIDUAL_VARIANCE: f64 = 1e-6;
pub const DEFAULT_PRECISION_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PrepError {
    #[error("cannot fit on an empty feature matrix")]
    Empty,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{labels} labels for {rows} rows")]
    LabelCount { rows: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("class {0} has no training rows")]
    EmptyClass(usize),
    #[error("Ledoit-Wolf needs at least 2 residual rows, got {0}")]
    TooFewRows(usize),
    #[error("covariance is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("Cholesky factorization failed even after adding {floor}·I")]
    Factorization { floor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub mean: Vec<f64>,
}

impl Preprocessor {
    /// Global mean of the training rows, accumulated in row order.
    pub fn fit_center(train: &Matrix) -> Result<Self, PrepError> {
        if train.rows() == 0 {
            return Err(PrepError::Empty);
        }
        if !train.is_finite() {
            return Err(PrepError::NonFinite("training features"));
        }
        let mut mean = vec![0.0; train.cols()];
        for row in train.iter_rows() {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        let n = train.rows() as f64;
        for m in &mut mean {
            *m /= n;
        }
        Ok(Self { mean })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(x − μ) / ‖x − μ‖₂` per row; near-zero rows become the zero vector.
    pub fn center_normalize(&self, features: &Matrix) -> Result<Matrix, PrepError> {
        if features.cols() != self.dim() {
            return Err(PrepError::DimensionMismatch {
                expected: self.dim(),
                found: features.cols(),
            });
        }
        if !features.is_finite() {
            return Err(PrepError::NonFinite("features"));
        }
        let mut out = Matrix::zeros(features.rows(), features.cols());
        for (i, row) in features.iter_rows().enumerate() {
            let dst = out.row_mut(i);
            for ((o, &x), &m) in dst.iter_mut().zip(row).zip(&self.mean) {
                *o = x - m;
            }
            let n = dot(dst, dst).sqrt();
            if n < DEGENERATE_NORM {
                dst.fill(0.0);
            } else {
                for o in dst.iter_mut() {
                    *o /= n;
                }
            }
        }
        Ok(out)
    }
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<(), PrepError> {
    if labels.len() != rows {
        return Err(PrepError::LabelCount {
            rows,
            labels: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(PrepError::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Per-class arithmetic means (K×d) and row counts.
pub fn class_means(
    features: &Matrix,
    labels: &[usize],
    num_classes: usize,
) -> Result<(Matrix, Vec<usize>), PrepError> {
    check_labels(labels, features.rows(), num_classes)?;
    let mut sums = Matrix::zeros(num_classes, features.cols());
    let mut counts = vec![0usize; num_classes];
    for (row, &y) in features.iter_rows().zip(labels) {
        counts[y] += 1;
        for (s, &x) in sums.row_mut(y).iter_mut().zip(row) {
            *s += x;
        }
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(PrepError::EmptyClass(c));
    }
    for (c, &n) in counts.iter().enumerate() {
        for s in sums.row_mut(c) {
            *s /= n as f64;
        }
    }
    Ok((sums, counts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shrinkage {
    pub covariance: Matrix,
    pub lambda: f64,
}

fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_dmatrix(m: &DMatrix<f64>) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[(i, j)] = m[(i, j)];
        }
    }
    out
}

fn symmetrize(m: &mut Matrix) {
    for i in 0..m.rows() {
        for j in (i + 1)..m.cols() {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Ledoit–Wolf shrinkage covariance of residual rows (already centered).
///
/// `Σ_i ‖r_i r_iᵀ − S‖²_F` is evaluated as `Σ_i ‖r_i‖⁴ − N ‖S‖²_F`, which
/// follows from `Σ_i r_iᵀ S r_i = N ‖S‖²_F`. When `δ² = 0` the target equals
/// `S` and λ is reported as 1.
pub fn ledoit_wolf(residuals: &Matrix) -> Result<Shrinkage, PrepError> {
    let n = residuals.rows();
    let d = residuals.cols();
    if n < 2 {
        return Err(PrepError::TooFewRows(n));
    }
    if !residuals.is_finite() {
        return Err(PrepError::NonFinite("residuals"));
    }
    if residuals.as_slice().iter().all(|&v| v == 0.0) {
        let diag = vec![ZERO_RESIDUAL_VARIANCE; d];
        return Ok(Shrinkage {
            covariance: Matrix::from_diagonal(&diag),
            lambda: 1.0,
        });
    }

    let r = to_dmatrix(residuals);
    let mut s = from_dmatrix(&(r.tr_mul(&r) / n as f64));
    symmetrize(&mut s);

    let mu = s.trace() / d as f64;
    let mut delta2 = 0.0;
    let mut s_fro2 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let v = s[(i, j)];
            s_fro2 += v * v;
            let t = if i == j { v - mu } else { v };
            delta2 += t * t;
        }
    }
    let sum_r4: f64 = residuals
        .iter_rows()
        .map(|row| {
            let sq = dot(row, row);
            sq * sq
        })
        .sum();
    let nf = n as f64;
    let beta2_raw = ((sum_r4 - nf * s_fro2) / (nf * nf)).max(0.0);
    let beta2 = beta2_raw.min(delta2);
    let lambda = if delta2 > 0.0 {
        (beta2 / delta2).clamp(0.0, 1.0)
    } else {
        1.0
    };

    let mut cov = s;
    for i in 0..d {
        for j in 0..d {
            cov[(i, j)] *= 1.0 - lambda;
        }
        cov[(i, i)] += lambda * mu;
    }
    Ok(Shrinkage {
        covariance: cov,
        lambda,
    })
}

fn min_pivot(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows())
        .map(|i| l[(i, i)] * l[(i, i)])
        .fold(f64::INFINITY, f64::min)
}

/// Inverse of a symmetric positive (semi-)definite matrix by Cholesky.
/// If factorization fails or the smallest pivot is below `floor`, `floor·I`
/// is added first.
pub fn precision(covariance: &Matrix, floor: f64) -> Result<Matrix, PrepError> {
    if covariance.rows() != covariance.cols() {
        return Err(PrepError::NotSquare {
            rows: covariance.rows(),
            cols: covariance.cols(),
        });
    }
    if !covariance.is_finite() {
        return Err(PrepError::NonFinite("covariance"));
    }
    let mut sym = covariance.clone();
    symmetrize(&mut sym);
    let m = to_dmatrix(&sym);
    let chol = match Cholesky::new(m.clone()) {
        Some(c) if min_pivot(&c) >= floor => c,
        _ => {
            let floored = m + DMatrix::identity(sym.rows(), sym.rows()) * floor;
            Cholesky::new(floored).ok_or(PrepError::Factorization { floor })?
        }
    };
    let mut inv = from_dmatrix(&chol.inverse());
    symmetrize(&mut inv);
    if !inv.is_finite() {
        return Err(PrepError::Factorization { floor });
    }
    Ok(inv)
}

/// Class means, shared shrinkage covariance and its precision, all in
/// centered+normalized feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class_means: Matrix,
    pub counts: Vec<usize>,
    pub covariance: Matrix,
    pub precision: Matrix,
    pub shrinkage_lambda: f64,
}

impl ClassStats {
    /// Fits on normalized training features with labels in `0..num_classes`.
    pub fn fit(
        normalized: &Matrix,
        labels: &[usize],
        num_classes: usize,
        precision_floor: f64,
    ) -> Result<Self, PrepError> {
        let (means, counts) = class_means(normalized, labels, num_classes)?;
        let mut residuals = normalized.clone();
        for (i, &y) in labels.iter().enumerate() {
            for (r, &m) in residuals.row_mut(i).iter_mut().zip(means.row(y)) {
                *r -= m;
            }
        }
        let shrink = ledoit_wolf(&residuals)?;
        let precision = precision(&shrink.covariance, precision_floor)?;
        Ok(Self {
            class_means: means,
            counts,
            covariance: shrink.covariance,
            precision,
            shrinkage_lambda: shrink.lambda,
        })
    }

    /// Stats with caller-supplied means and covariance (fixtures, demos).
    pub fn from_parts(class_means: Matrix, covariance: Matrix) -> Result<Self, PrepError> {
        if covariance.rows() != class_means.cols() {
            return Err(PrepError::DimensionMismatch {
                expected: class_means.cols(),
                found: covariance.rows(),
            });
        }
        let precision = precision(&covariance, DEFAULT_PRECISION_FLOOR)?;
        Ok(Self {
            counts: vec![0; class_means.rows()],
            class_means,
            covariance,
            precision,
            shrinkage_lambda: 0.0,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_means.rows()
    }

    pub fn dim(&self) -> usize {
        self.class_means.cols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed_value: u64) -> Matrix {
        let mut rng = seed::rng(seed_value, "prep-test");
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn center_of_symmetric_pair_is_zero() {
        let x = Matrix::from_rows(3, &[[1.0, -2.0, 0.5], [-1.0, 2.0, -0.5]]).unwrap();
        assert_eq!(Preprocessor::fit_center(&x).unwrap().mean, vec![0.0; 3]);
        let one = Matrix::from_rows(2, &[[0.25, 7.0]]).unwrap();
        assert_eq!(Preprocessor::fit_center(&one).unwrap().mean, vec![0.25, 7.0]);
        assert_eq!(
            Preprocessor::fit_center(&Matrix::zeros(0, 2)),
            Err(PrepError::Empty)
        );
    }

    #[test]
    fn center_matches_two_pass_mean() {
        let x = random_matrix(100, 16, 4);
        let prep = Preprocessor::fit_center(&x).unwrap();
        for j in 0..16 {
            // column pass, independent accumulation order
            let col: Vec<f64> = (0..100).map(|i| x[(i, j)]).collect();
            let mean = col.iter().rev().sum::<f64>() / 100.0;
            assert!((prep.mean[j] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_three_four_five() {
        let prep = Preprocessor { mean: vec![1.0, 1.0] };
        let x = Matrix::from_rows(2, &[[4.0, 5.0], [1.0, 1.0]]).unwrap();
        let y = prep.center_normalize(&x).unwrap();
        assert!((y[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((y[(0, 1)] - 0.8).abs() < 1e-15);
        assert_eq!(y.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn normalized_rows_are_unit_or_zero() {
        let x = random_matrix(50, 7, 9);
        let prep = Preprocessor::fit_center(&x).unwrap();
        let y = prep.center_normalize(&x).unwrap();
        for row in y.iter_rows() {
            let n = dot(row, row).sqrt();
            assert!(n == 0.0 || (n - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn class_means_cases() {
        let x = Matrix::from_rows(2, &[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.5], [1.0, -0.5]]).unwrap();
        let (m, counts) = class_means(&x, &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(m.row(0), &[1.0, 0.0]);
        assert_eq!(m.row(1), &[0.0, 1.0]);
        assert_eq!(m.row(2), &[0.0, 0.0]);
        assert_eq!(counts, vec![1, 1, 2]);
        assert_eq!(class_means(&x, &[0, 0, 2, 2], 3), Err(PrepError::EmptyClass(1)));
    }

    #[test]
    fn class_means_match_grouped_sum() {
        let x = random_matrix(60, 5, 12);
        let labels: Vec<usize> = (0..60).map(|i| (i * 7) % 4).collect();
        let (m, _) = class_means(&x, &labels, 4).unwrap();
        for c in 0..4 {
            let rows: Vec<usize> = (0..60).filter(|&i| labels[i] == c).collect();
            for j in 0..5 {
                let mean = rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / rows.len() as f64;
                assert!((m[(c, j)] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lw_scaled_identity_is_left_alone() {
        // permuted one-hot rows: S = I/3 exactly
        let r = Matrix::from_rows(3, &[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]]).unwrap();
        let sh = ledoit_wolf(&r).unwrap();
        assert_eq!(sh.lambda, 1.0);
        let expected = Matrix::from_diagonal(&[1.0 / 3.0; 3]);
        assert!(sh.covariance.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn lw_two_by_two_hand_evaluated() {
        // S = [[1,0],[0,0]], tr/d = 0.5, δ² = 0.5, each r rᵀ equals S so β² = 0
        // → λ = 0, Σ = S.
        let r = Matrix::from_rows(2, &[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let sh = ledoit_wolf(&r).unwrap();
        assert_eq!(sh.lambda, 0.0);
        assert_eq!(sh.covariance.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn lw_degenerate_inputs() {
        assert_eq!(
            ledoit_wolf(&Matrix::zeros(1, 3)),
            Err(PrepError::TooFewRows(1))
        );
        let sh = ledoit_wolf(&Matrix::zeros(5, 3)).unwrap();
        assert_eq!(sh.lambda, 1.0);
        assert_eq!(sh.covariance, Matrix::from_diagonal(&[1e-6; 3]));
    }

    #[test]
    fn precision_closed_forms() {
        assert!(precision(&Matrix::identity(4), 1e-6)
            .unwrap()
            .max_abs_diff(&Matrix::identity(4))
            < 1e-15);
        let p = precision(&Matrix::from_diagonal(&[2.0, 4.0]), 1e-6).unwrap();
        assert!(p.max_abs_diff(&Matrix::from_diagonal(&[0.5, 0.25])) < 1e-15);
    }

    #[test]
    fn precision_floors_singular_input() {
        let s = Matrix::from_rows(2, &[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        let p = precision(&s, 1e-6).unwrap();
        assert!((p[(1, 1)] - 1e6).abs() < 1e-3);
        assert!((p[(0, 0)] - 1.0 / (1.0 + 1e-6)).abs() < 1e-12);
    }

    #[test]
    fn class_stats_shapes() {
        let x = random_matrix(40, 6, 2);
        let prep = Preprocessor::fit_center(&x).unwrap();
        let z = prep.center_normalize(&x).unwrap();
        let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let stats = ClassStats::fit(&z, &labels, 3, DEFAULT_PRECISION_FLOOR).unwrap();
        assert_eq!(stats.counts.iter().sum::<usize>(), 40);
        assert!((0.0..=1.0).contains(&stats.shrinkage_lambda));
        let prod = stats.covariance.matmul(&stats.precision).unwrap();
        assert!(prod.max_abs_diff(&Matrix::identity(6)) < 1e-6);
    }
}
