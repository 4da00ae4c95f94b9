//! Brute-force reference implementations. These deliberately avoid the
//! library's code paths: no sorting tricks, no factorizations, no
//! algebraic shortcuts.
#![allow(dead_code)]

use ohz_core::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(r: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| r.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Scores drawn from a small grid so that ties are frequent.
pub fn tied_scores(r: &mut impl Rng, n: usize, levels: u32, shift: f64) -> Vec<f64> {
    (0..n)
        .map(|_| f64::from(r.random_range(0..levels)) * 0.25 + shift)
        .collect()
}

/// `row_i = W x_i + b` with explicit triple loop.
pub fn forward(w: &Matrix, b: &[f64], x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), w.rows());
    for i in 0..x.rows() {
        for k in 0..w.rows() {
            let mut acc = b[k];
            for j in 0..w.cols() {
                acc += w[(k, j)] * x[(i, j)];
            }
            out[(i, k)] = acc;
        }
    }
    out
}

/// Mean of −ln(softmax_y) computed naively (no log-sum-exp).
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let denom: f64 = (0..logits.cols()).map(|k| logits[(i, k)].exp()).sum();
        total += -(logits[(i, y)].exp() / denom).ln();
    }
    total / labels.len() as f64
}

pub fn argmax_scan(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Ledoit–Wolf written straight from the formula with explicit outer
/// products for the β² term.
pub fn ledoit_wolf(r: &Matrix) -> (Matrix, f64) {
    let (n, d) = (r.rows(), r.cols());
    let mut s = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for t in 0..n {
                acc += r[(t, i)] * r[(t, j)];
            }
            s[(i, j)] = acc / n as f64;
        }
    }
    let mu = (0..d).map(|i| s[(i, i)]).sum::<f64>() / d as f64;
    let mut delta2 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let t = s[(i, j)] - if i == j { mu } else { 0.0 };
            delta2 += t * t;
        }
    }
    let mut beta_sum = 0.0;
    for t in 0..n {
        for i in 0..d {
            for j in 0..d {
                let e = r[(t, i)] * r[(t, j)] - s[(i, j)];
                beta_sum += e * e;
            }
        }
    }
    let beta2 = (beta_sum / (n * n) as f64).min(delta2);
    let lambda = if delta2 > 0.0 { (beta2 / delta2).clamp(0.0, 1.0) } else { 1.0 };
    let mut sigma = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            sigma[(i, j)] = (1.0 - lambda) * s[(i, j)] + if i == j { lambda * mu } else { 0.0 };
        }
    }
    (sigma, lambda)
}

/// Random symmetric positive-definite matrix `AᵀA/d + 0.5·I`.
pub fn random_spd(r: &mut impl Rng, d: usize) -> Matrix {
    let a = random_matrix(r, d, d, 1.0);
    let mut m = a.transpose().matmul(&a).unwrap();
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] /= d as f64;
        }
        m[(i, i)] += 0.5;
    }
    m
}

/// `min_c Σ_i Σ_j (x−μ_c)_i P_ij (x−μ_c)_j`
pub fn mahalanobis(x: &Matrix, means: &Matrix, precision: &Matrix) -> Vec<f64> {
    let d = x.cols();
    (0..x.rows())
        .map(|n| {
            let mut best = f64::INFINITY;
            for c in 0..means.rows() {
                let mut q = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        q += (x[(n, i)] - means[(c, i)]) * precision[(i, j)] * (x[(n, j)] - means[(c, j)]);
                    }
                }
                best = best.min(q);
            }
            best
        })
        .collect()
}

/// Full sort of every (distance, index) pair, sum of the first k in order.
pub fn knn(queries: &Matrix, train: &Matrix, k: usize) -> Vec<f64> {
    (0..queries.rows())
        .map(|q| {
            let mut all: Vec<(f64, usize)> = (0..train.rows())
                .map(|t| {
                    let mut s = 0.0;
                    for j in 0..train.cols() {
                        let diff = queries[(q, j)] - train[(t, j)];
                        s += diff * diff;
                    }
                    (s.sqrt(), t)
                })
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            all[..k].iter().map(|p| p.0).sum::<f64>() / k as f64
        })
        .collect()
}

/// Doubled Mann–Whitney count over all pairs; returns percent.
pub fn auroc_pairwise(id: &[f64], ood: &[f64]) -> f64 {
    let mut doubled: u64 = 0;
    for &o in ood {
        for &i in id {
            doubled += if o > i {
                2
            } else if o == i {
                1
            } else {
                0
            };
        }
    }
    100.0 * doubled as f64 / (2 * id.len() * ood.len()) as f64
}

pub fn count_gt(v: &[f64], t: f64) -> usize {
    v.iter().filter(|&&x| x > t).count()
}

pub fn count_ge(v: &[f64], t: f64) -> usize {
    v.iter().filter(|&&x| x >= t).count()
}

/// Distinct values, descending, via linear scans.
pub fn distinct_desc(values: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    let mut remaining: Vec<f64> = values.to_vec();
    while !remaining.is_empty() {
        let m = remaining.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.push(m);
        remaining.retain(|&x| x != m);
    }
    out
}

/// Average precision, rank by rank over distinct score levels.
pub fn aupr_recount(id: &[f64], ood: &[f64]) -> f64 {
    let all: Vec<f64> = id.iter().chain(ood).copied().collect();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for v in distinct_desc(&all) {
        let tp = count_ge(ood, v);
        let fp = count_ge(id, v);
        let recall = tp as f64 / ood.len() as f64;
        ap += (recall - prev) * tp as f64 / (tp + fp) as f64;
        prev = recall;
    }
    100.0 * ap
}

/// Largest threshold among `{+∞, observed, −∞}` with at least
/// `required` OOD scores strictly above it; returns (fpr %, τ).
pub fn fpr_recount(id: &[f64], ood: &[f64], required: usize) -> (f64, f64) {
    let mut candidates = vec![f64::INFINITY, f64::NEG_INFINITY];
    candidates.extend(id.iter().chain(ood).copied());
    let tau = candidates
        .into_iter()
        .filter(|&t| count_gt(ood, t) >= required)
        .fold(f64::NEG_INFINITY, f64::max);
    (100.0 * count_gt(id, tau) as f64 / id.len() as f64, tau)
}
