//! Post-hoc open-set scores. Every score is oriented so that a larger value
//! means "more likely out-of-distribution"; a sample is rejected as unknown
//! when its score exceeds the operating threshold.
//!
//! Energy is reported as the *negated* temperature-scaled log-sum-exp,
//! `−T·log Σ_k exp(z_k / T)`. Confident inputs have a large log-sum-exp,
//! so the negation is what puts them at the low end of the scale.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::matrix::{dot, Matrix};
use crate::prep::{ClassStats, PrepError, Preprocessor};
use crate::probe::{self, log_sum_exp, ProbeModel};

pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("logit-based scores need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("kNN needs at least k={k} training rows, got {rows}")]
    NotEnoughNeighbours { k: usize, rows: usize },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("missing artifact for {kind} scoring: {artifact}")]
    MissingArtifact {
        kind: ScoreKind,
        artifact: &'static str,
    },
    #[error("unknown score kind {0:?}")]
    UnknownKind(String),
    #[error(transparent)]
    Probe(#[from] probe::ProbeError),
    #[error(transparent)]
    Prep(#[from] PrepError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Msp,
    Energy,
    Mahalanobis,
    Knn,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 4] = [
        ScoreKind::Msp,
        ScoreKind::Energy,
        ScoreKind::Mahalanobis,
        ScoreKind::Knn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Msp => "msp",
            ScoreKind::Energy => "energy",
            ScoreKind::Mahalanobis => "mahalanobis",
            ScoreKind::Knn => "knn",
        }
    }

    pub fn uses_logits(self) -> bool {
        matches!(self, ScoreKind::Msp | ScoreKind::Energy)
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreKind {
    type Err = ScoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "msp" => Ok(ScoreKind::Msp),
            "energy" => Ok(ScoreKind::Energy),
            "mahalanobis" | "maha" => Ok(ScoreKind::Mahalanobis),
            "knn" => Ok(ScoreKind::Knn),
            other => Err(ScoreError::UnknownKind(other.to_string())),
        }
    }
}

/// A score kind together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreMethod {
    Msp,
    Energy { temperature: f64 },
    Mahalanobis,
    Knn { k: usize },
}

impl ScoreMethod {
    pub fn kind(&self) -> ScoreKind {
        match self {
            ScoreMethod::Msp => ScoreKind::Msp,
            ScoreMethod::Energy { .. } => ScoreKind::Energy,
            ScoreMethod::Mahalanobis => ScoreKind::Mahalanobis,
            ScoreMethod::Knn { .. } => ScoreKind::Knn,
        }
    }

    pub fn with_defaults(kind: ScoreKind) -> Self {
        Self::new(kind, DEFAULT_TEMPERATURE, DEFAULT_K)
    }

    /// Picks the parameters relevant to `kind`.
    pub fn new(kind: ScoreKind, temperature: f64, k: usize) -> Self {
        match kind {
            ScoreKind::Msp => ScoreMethod::Msp,
            ScoreKind::Energy => ScoreMethod::Energy { temperature },
            ScoreKind::Mahalanobis => ScoreMethod::Mahalanobis,
            ScoreKind::Knn => ScoreMethod::Knn { k },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub method: ScoreMethod,
}

impl ScoreVector {
    pub fn kind(&self) -> ScoreKind {
        self.method.kind()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

fn check_logits(logits: &Matrix) -> Result<(), ScoreError> {
    if logits.cols() < 2 {
        return Err(ScoreError::TooFewClasses(logits.cols()));
    }
    if !logits.is_finite() {
        return Err(ScoreError::NonFinite("logits"));
    }
    Ok(())
}

/// `−max_k softmax(z)_k`, in `[−1, −1/K]`.
pub fn msp_score(logits: &Matrix) -> Result<ScoreVector, ScoreError> {
    check_logits(logits)?;
    let scores = logits
        .iter_rows()
        .map(|z| {
            // max_k softmax = exp(max − lse)
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            -(max - log_sum_exp(z)).exp()
        })
        .collect();
    Ok(ScoreVector {
        scores,
        method: ScoreMethod::Msp,
    })
}

/// `−T·log Σ_k exp(z_k / T)`.
pub fn energy_score(logits: &Matrix, temperature: f64) -> Result<ScoreVector, ScoreError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(ScoreError::InvalidTemperature(temperature));
    }
    check_logits(logits)?;
    let mut scaled = vec![0.0; logits.cols()];
    let scores = logits
        .iter_rows()
        .map(|z| {
            for (s, &v) in scaled.iter_mut().zip(z) {
                *s = v / temperature;
            }
            -temperature * log_sum_exp(&scaled)
        })
        .collect();
    Ok(ScoreVector {
        scores,
        method: ScoreMethod::Energy { temperature },
    })
}

/// `min_c (x − μ_c)ᵀ Σ⁻¹ (x − μ_c)`.
///
/// Evaluated as `min_c ‖Lᵀx − Lᵀμ_c‖²` with `Σ⁻¹ = L Lᵀ`, so each class
/// costs O(d) after one O(d²) transform per row and the result is a sum of
/// squares (never negative).
pub fn mahalanobis_score(
    features_normalized: &Matrix,
    stats: &ClassStats,
) -> Result<ScoreVector, ScoreError> {
    let d = stats.dim();
    if features_normalized.cols() != d {
        return Err(ScoreError::DimensionMismatch {
            expected: d,
            found: features_normalized.cols(),
        });
    }
    if !features_normalized.is_finite() {
        return Err(ScoreError::NonFinite("features"));
    }
    let p = DMatrix::from_row_slice(d, d, stats.precision.as_slice());
    let Some(chol) = Cholesky::new(p) else {
        return Ok(ScoreVector {
            scores: mahalanobis_direct(features_normalized, stats),
            method: ScoreMethod::Mahalanobis,
        });
    };
    // rows of `lt` are the rows of Lᵀ
    let l = chol.l();
    let mut lt = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            lt[(i, j)] = l[(j, i)];
        }
    }
    let whiten = |x: &[f64], out: &mut [f64]| {
        for (i, o) in out.iter_mut().enumerate() {
            // Lᵀ is upper triangular
            *o = dot(&lt.row(i)[i..], &x[i..]);
        }
    };
    let mut centers = Matrix::zeros(stats.num_classes(), d);
    for c in 0..stats.num_classes() {
        whiten(stats.class_means.row(c), centers.row_mut(c));
    }
    let mut w = vec![0.0; d];
    let scores = features_normalized
        .iter_rows()
        .map(|x| {
            whiten(x, &mut w);
            centers
                .iter_rows()
                .map(|m| w.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(ScoreVector {
        scores,
        method: ScoreMethod::Mahalanobis,
    })
}

fn mahalanobis_direct(features: &Matrix, stats: &ClassStats) -> Vec<f64> {
    let d = stats.dim();
    let mut diff = vec![0.0; d];
    features
        .iter_rows()
        .map(|x| {
            stats
                .class_means
                .iter_rows()
                .map(|m| {
                    for ((t, &a), &b) in diff.iter_mut().zip(x).zip(m) {
                        *t = a - b;
                    }
                    (0..d)
                        .map(|i| diff[i] * dot(stats.precision.row(i), &diff))
                        .sum::<f64>()
                        .max(0.0)
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

#[inline]
fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Indices of the `k` nearest training rows to `query`, ordered by
/// (distance, index) ascending, together with their distances.
pub fn nearest_neighbours(query: &[f64], train: &Matrix, k: usize) -> Vec<(f64, usize)> {
    let mut dists: Vec<(f64, usize)> = train
        .iter_rows()
        .enumerate()
        .map(|(j, t)| (euclidean(query, t), j))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dists.len() {
        dists.select_nth_unstable_by(k - 1, cmp);
        dists.truncate(k);
    }
    dists.sort_unstable_by(cmp);
    dists
}

/// Mean Euclidean distance to the `k` nearest training rows. Ties at the
/// k-th distance go to the lower training index; a query equal to a
/// training row counts that zero distance.
pub fn knn_score(
    query_normalized: &Matrix,
    train_normalized: &Matrix,
    k: usize,
) -> Result<ScoreVector, ScoreError> {
    if k == 0 {
        return Err(ScoreError::ZeroK);
    }
    if train_normalized.rows() < k {
        return Err(ScoreError::NotEnoughNeighbours {
            k,
            rows: train_normalized.rows(),
        });
    }
    if query_normalized.cols() != train_normalized.cols() {
        return Err(ScoreError::DimensionMismatch {
            expected: train_normalized.cols(),
            found: query_normalized.cols(),
        });
    }
    if !query_normalized.is_finite() || !train_normalized.is_finite() {
        return Err(ScoreError::NonFinite("features"));
    }
    let scores = query_normalized
        .iter_rows()
        .map(|q| {
            let nn = nearest_neighbours(q, train_normalized, k);
            nn.iter().map(|(d, _)| d).sum::<f64>() / k as f64
        })
        .collect();
    Ok(ScoreVector {
        scores,
        method: ScoreMethod::Knn { k },
    })
}

/// Everything fitted on the training split that the scores may need.
#[derive(Debug, Clone, Default)]
pub struct OsrArtifacts {
    pub probe: Option<ProbeModel>,
    pub preprocessor: Option<Preprocessor>,
    pub class_stats: Option<ClassStats>,
    /// Training features after `preprocessor.center_normalize`.
    pub train_normalized: Option<Matrix>,
}

impl OsrArtifacts {
    /// Fits every artifact on raw training features with labels in
    /// `0..num_classes`: the probe on raw features, the centering vector,
    /// class statistics and the normalized training matrix.
    pub fn fit(
        train_raw: &Matrix,
        labels: &[usize],
        num_classes: usize,
        config: &probe::TrainConfig,
        precision_floor: f64,
    ) -> Result<(Self, probe::TrainOutcome), ScoreError> {
        let outcome = probe::train_probe(train_raw, labels, num_classes, config)?;
        let prep = Preprocessor::fit_center(train_raw)?;
        let normalized = prep.center_normalize(train_raw)?;
        let stats = ClassStats::fit(&normalized, labels, num_classes, precision_floor)?;
        Ok((
            Self {
                probe: Some(outcome.model.clone()),
                preprocessor: Some(prep),
                class_stats: Some(stats),
                train_normalized: Some(normalized),
            },
            outcome,
        ))
    }

    fn probe_for(&self, kind: ScoreKind) -> Result<&ProbeModel, ScoreError> {
        self.probe.as_ref().ok_or(ScoreError::MissingArtifact {
            kind,
            artifact: "probe model",
        })
    }

    fn prep_for(&self, kind: ScoreKind) -> Result<&Preprocessor, ScoreError> {
        self.preprocessor.as_ref().ok_or(ScoreError::MissingArtifact {
            kind,
            artifact: "centering vector",
        })
    }

    /// Scores raw (un-normalized) features with one method. Logit scores run
    /// the probe on raw features; distance scores use the training
    /// centering + normalization first.
    pub fn score(&self, method: ScoreMethod, raw: &Matrix) -> Result<ScoreVector, ScoreError> {
        let kind = method.kind();
        match method {
            ScoreMethod::Msp => msp_score(&probe::forward(self.probe_for(kind)?, raw)?),
            ScoreMethod::Energy { temperature } => {
                energy_score(&probe::forward(self.probe_for(kind)?, raw)?, temperature)
            }
            ScoreMethod::Mahalanobis => {
                let stats = self.class_stats.as_ref().ok_or(ScoreError::MissingArtifact {
                    kind,
                    artifact: "class statistics",
                })?;
                let x = self.prep_for(kind)?.center_normalize(raw)?;
                mahalanobis_score(&x, stats)
            }
            ScoreMethod::Knn { k } => {
                let train = self.train_normalized.as_ref().ok_or(ScoreError::MissingArtifact {
                    kind,
                    artifact: "normalized training features",
                })?;
                let x = self.prep_for(kind)?.center_normalize(raw)?;
                knn_score(&x, train, k)
            }
        }
    }
}

/// Scores the ID and OOD test sets with the same artifacts.
pub fn score_pipeline(
    method: ScoreMethod,
    artifacts: &OsrArtifacts,
    id_test: &Matrix,
    ood_test: &Matrix,
) -> Result<(ScoreVector, ScoreVector), ScoreError> {
    Ok((
        artifacts.score(method, id_test)?,
        artifacts.score(method, ood_test)?,
    ))
}
