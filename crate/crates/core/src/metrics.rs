//! Threshold-sweep metrics for open-set recognition.
//!
//! OOD samples are the positives. A sample is flagged unknown iff its
//! score is strictly greater than the threshold τ; every metric below is
//! derived from that one rule. Sweeps are exact over the observed scores
//! plus the ±∞ endpoints.

use serde::{Deserialize, Serialize};

use crate::scores::ScoreKind;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("{0} scores are empty")]
    Empty(&'static str),
    #[error("non-finite score in {0}")]
    NonFinite(&'static str),
    #[error("length mismatch: {what} ({found}) vs ID scores ({expected})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("target rate must lie in [0, 1], got {0}")]
    InvalidTarget(f64),
}

fn check(scores: &[f64], side: &'static str) -> Result<(), MetricError> {
    if scores.is_empty() {
        return Err(MetricError::Empty(side));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(side));
    }
    Ok(())
}

fn sorted(scores: &[f64]) -> Vec<f64> {
    let mut v = scores.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    v
}

/// Number of entries of an ascending slice strictly above `tau`.
#[inline]
fn count_above(sorted: &[f64], tau: f64) -> usize {
    sorted.len() - sorted.partition_point(|&x| x <= tau)
}

/// Distinct values of both (ascending) inputs, descending.
fn distinct_desc(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = a.iter().chain(b).copied().collect();
    all.sort_unstable_by(|x, y| y.total_cmp(x));
    all.dedup();
    all
}

#[inline]
fn percent(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

/// Number of positives needed to reach `target` of `n`. Products within
/// 1e-9 of an integer count as that integer (0.95·100 is not exactly 95).
fn required_count(target: f64, n: usize) -> usize {
    let x = target * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

fn check_target(target: f64) -> Result<(), MetricError> {
    if !(0.0..=1.0).contains(&target) {
        return Err(MetricError::InvalidTarget(target));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `+∞`, then every distinct observed score descending, then `−∞`.
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
}

impl RocCurve {
    /// Trapezoidal area, as a percentage.
    pub fn area(&self) -> f64 {
        let mut area = 0.0;
        for i in 1..self.fpr.len() {
            area += (self.fpr[i] - self.fpr[i - 1]) * (self.tpr[i] + self.tpr[i - 1]) * 0.5;
        }
        100.0 * area
    }
}

pub fn roc(id_scores: &[f64], ood_scores: &[f64]) -> Result<RocCurve, MetricError> {
    check(id_scores, "ID")?;
    check(ood_scores, "OOD")?;
    let id = sorted(id_scores);
    let ood = sorted(ood_scores);
    let mut thresholds = vec![f64::INFINITY];
    thresholds.extend(distinct_desc(&id, &ood));
    thresholds.push(f64::NEG_INFINITY);
    let (n_id, n_ood) = (id.len() as f64, ood.len() as f64);
    let tpr = thresholds.iter().map(|&t| count_above(&ood, t) as f64 / n_ood).collect();
    let fpr = thresholds.iter().map(|&t| count_above(&id, t) as f64 / n_id).collect();
    Ok(RocCurve {
        thresholds,
        tpr,
        fpr,
    })
}

/// AUROC as the Mann–Whitney statistic, in percent: the fraction of
/// (OOD, ID) pairs where the OOD sample scores higher, ties counting half.
/// Pair counts are accumulated as exact integers.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64, MetricError> {
    check(id_scores, "ID")?;
    check(ood_scores, "OOD")?;
    let id = sorted(id_scores);
    let mut doubled: u128 = 0;
    for &s in ood_scores {
        let below = id.partition_point(|&x| x < s);
        let not_above = id.partition_point(|&x| x <= s);
        doubled += 2 * below as u128 + (not_above - below) as u128;
    }
    let pairs = 2 * id.len() as u128 * ood_scores.len() as u128;
    Ok(100.0 * doubled as f64 / pairs as f64)
}

/// Average precision (step-wise, no interpolation), in percent.
pub fn aupr(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64, MetricError> {
    check(id_scores, "ID")?;
    check(ood_scores, "OOD")?;
    let id = sorted(id_scores);
    let ood = sorted(ood_scores);
    let n_ood = ood.len() as f64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for v in distinct_desc(&id, &ood) {
        // everything scoring >= v is flagged
        let tp = ood.len() - ood.partition_point(|&x| x < v);
        let fp = id.len() - id.partition_point(|&x| x < v);
        let recall = tp as f64 / n_ood;
        if recall > prev_recall {
            ap += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
            prev_recall = recall;
        }
    }
    Ok(100.0 * ap)
}

/// Operating point found by [`fpr_at_tpr`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FprAtTpr {
    /// Percentage of ID samples flagged unknown.
    pub fpr: f64,
    pub threshold: f64,
    /// Achieved fraction of OOD samples flagged unknown.
    pub tpr: f64,
}

struct OperatingPoint {
    threshold: f64,
    id_flagged: usize,
    ood_flagged: usize,
}

/// Largest candidate threshold (`+∞`, observed scores, `−∞`) at which at
/// least `⌈target·|OOD|⌉` OOD samples lie strictly above it.
fn operating_point(
    id_scores: &[f64],
    ood_scores: &[f64],
    target: f64,
) -> Result<OperatingPoint, MetricError> {
    check(id_scores, "ID")?;
    check(ood_scores, "OOD")?;
    check_target(target)?;
    let id = sorted(id_scores);
    let ood = sorted(ood_scores);
    let need = required_count(target, ood.len());
    let threshold = std::iter::once(f64::INFINITY)
        .chain(distinct_desc(&id, &ood))
        .find(|&t| count_above(&ood, t) >= need)
        .unwrap_or(f64::NEG_INFINITY);
    Ok(OperatingPoint {
        threshold,
        id_flagged: count_above(&id, threshold),
        ood_flagged: count_above(&ood, threshold),
    })
}

pub fn fpr_at_tpr(
    id_scores: &[f64],
    ood_scores: &[f64],
    target: f64,
) -> Result<FprAtTpr, MetricError> {
    let op = operating_point(id_scores, ood_scores, target)?;
    Ok(FprAtTpr {
        fpr: percent(op.id_flagged, id_scores.len()),
        threshold: op.threshold,
        tpr: op.ood_flagged as f64 / ood_scores.len() as f64,
    })
}

/// Decision statistics at a fixed OOD rejection rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionStats {
    pub threshold: f64,
    /// Fraction of ID samples with score > τ.
    pub fpr_id: f64,
    /// ID samples with score ≤ τ.
    pub id_kept: usize,
    pub id_total: usize,
    /// `1 − fpr_id`.
    pub retention_rate: f64,
    /// Fraction of OOD samples with score > τ.
    pub ood_rejection_rate: f64,
}

impl DecisionStats {
    /// FPR on ID data in percent, computed exactly as [`fpr_at_tpr`] does.
    pub fn fpr_id_percent(&self) -> f64 {
        percent(self.id_total - self.id_kept, self.id_total)
    }
}

pub fn decision_stats(
    id_scores: &[f64],
    ood_scores: &[f64],
    target_rejection: f64,
) -> Result<DecisionStats, MetricError> {
    let op = operating_point(id_scores, ood_scores, target_rejection)?;
    let n_id = id_scores.len();
    let fpr_id = op.id_flagged as f64 / n_id as f64;
    Ok(DecisionStats {
        threshold: op.threshold,
        fpr_id,
        id_kept: n_id - op.id_flagged,
        id_total: n_id,
        retention_rate: 1.0 - fpr_id,
        ood_rejection_rate: op.ood_flagged as f64 / ood_scores.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscrCurve {
    /// `−∞`, every distinct observed score ascending, then `+∞`.
    pub thresholds: Vec<f64>,
    /// Fraction of OOD accepted as known (score ≤ τ).
    pub fpr_ood: Vec<f64>,
    /// Fraction of ID that is correctly classified and accepted.
    pub ccr: Vec<f64>,
    /// Trapezoidal area of ccr over fpr_ood, in `[0, 1]`.
    pub area: f64,
}

impl OscrCurve {
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.fpr_ood.iter().copied().zip(self.ccr.iter().copied())
    }
}

pub fn oscr(
    id_scores: &[f64],
    id_predictions: &[usize],
    id_labels: &[usize],
    ood_scores: &[f64],
) -> Result<OscrCurve, MetricError> {
    check(id_scores, "ID")?;
    check(ood_scores, "OOD")?;
    for (what, len) in [("predictions", id_predictions.len()), ("labels", id_labels.len())] {
        if len != id_scores.len() {
            return Err(MetricError::LengthMismatch {
                what,
                expected: id_scores.len(),
                found: len,
            });
        }
    }
    let correct: Vec<f64> = id_scores
        .iter()
        .zip(id_predictions.iter().zip(id_labels))
        .filter(|(_, (p, l))| p == l)
        .map(|(&s, _)| s)
        .collect();
    let correct = sorted(&correct);
    let id = sorted(id_scores);
    let ood = sorted(ood_scores);
    let accepted = |v: &[f64], t: f64| v.partition_point(|&x| x <= t);

    let mut thresholds = vec![f64::NEG_INFINITY];
    let mut desc = distinct_desc(&id, &ood);
    desc.reverse();
    thresholds.extend(desc);
    thresholds.push(f64::INFINITY);

    let (n_id, n_ood) = (id.len() as f64, ood.len() as f64);
    let fpr_ood: Vec<f64> = thresholds.iter().map(|&t| accepted(&ood, t) as f64 / n_ood).collect();
    let ccr: Vec<f64> = thresholds
        .iter()
        .map(|&t| accepted(&correct, t) as f64 / n_id)
        .collect();
    let mut area = 0.0;
    for i in 1..thresholds.len() {
        area += (fpr_ood[i] - fpr_ood[i - 1]) * (ccr[i] + ccr[i - 1]) * 0.5;
    }
    Ok(OscrCurve {
        thresholds,
        fpr_ood,
        ccr,
        area,
    })
}

/// One row of the backbone × score grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub backbone_id: String,
    pub kind: ScoreKind,
    pub auroc: f64,
    pub aupr: f64,
    pub fpr_at_95: f64,
    /// `None` when no ID predictions were available.
    pub oscr_area: Option<f64>,
}

/// ID predictions and labels for OSCR.
#[derive(Debug, Clone, Copy)]
pub struct ClosedSet<'a> {
    pub predictions: &'a [usize],
    pub labels: &'a [usize],
}

/// Everything one (backbone, score) cell produces.
#[derive(Debug, Clone, PartialEq)]
pub struct CellEvaluation {
    pub report: EvalReport,
    pub roc: RocCurve,
    pub oscr: Option<OscrCurve>,
    pub decision: DecisionStats,
}

pub fn evaluate_cell(
    backbone_id: &str,
    kind: ScoreKind,
    id_scores: &[f64],
    ood_scores: &[f64],
    closed_set: Option<ClosedSet<'_>>,
    target: f64,
) -> Result<CellEvaluation, MetricError> {
    let oscr = closed_set
        .map(|cs| oscr(id_scores, cs.predictions, cs.labels, ood_scores))
        .transpose()?;
    let report = EvalReport {
        backbone_id: backbone_id.to_string(),
        kind,
        auroc: auroc(id_scores, ood_scores)?,
        aupr: aupr(id_scores, ood_scores)?,
        fpr_at_95: fpr_at_tpr(id_scores, ood_scores, target)?.fpr,
        oscr_area: oscr.as_ref().map(|c| c.area),
    };
    Ok(CellEvaluation {
        report,
        roc: roc(id_scores, ood_scores)?,
        oscr,
        decision: decision_stats(id_scores, ood_scores, target)?,
    })
}
