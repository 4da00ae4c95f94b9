//! Few-shot class-incremental learning over frozen features.
//!
//! A base session builds one unit-norm prototype per base class from the
//! class mean of normalized features. Each incremental session adds novel
//! classes from a handful of shots. All strategies share the
//! nearest-class-mean readout (maximum cosine similarity), so they differ
//! only in how prototypes are built:
//!
//! * `baseline`: the bank is frozen after the base session.
//! * `sppr`: the shot mean is pulled toward existing prototypes, weighted by
//!   a softmax over similarities.
//! * `orco`: every prototype is moved by projected gradient descent on an
//!   anchor-attraction + pairwise-orthogonality objective.
//! * `concm`: the shot mean attends over base prototypes, then is averaged
//!   with Gaussian pseudo-features.
//!
//! SPPR and ConCM only append; OrCo may move existing prototypes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::matrix::{dot, normalize_in_place, Matrix};
use crate::prep::{PrepError, Preprocessor};
use crate::probe::softmax_unchecked;
use crate::seed;

const COLLAPSE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FscilError {
    #[error("class {0} has no samples")]
    EmptyClass(i64),
    #[error("class {0} collapsed to a zero-norm prototype")]
    ClassCollapse(i64),
    #[error("no shots supplied for class {0}")]
    EmptyShots(i64),
    #[error("prototype bank is empty")]
    EmptyBank,
    #[error("prototype bank holds no base-session prototypes")]
    EmptyBaseBank,
    #[error("class {0} already has a prototype")]
    DuplicateClass(i64),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("OrCo loss became non-finite at step {step}; lower the step size")]
    NonFiniteLoss { step: usize },
    #[error("class {class} has {available} training samples, {requested} shots requested")]
    InsufficientShots {
        class: i64,
        available: usize,
        requested: usize,
    },
    #[error("no test samples for the seen classes")]
    EmptyTest,
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error(transparent)]
    Prep(#[from] PrepError),
}

/// Unit-norm class prototypes with the session each class arrived in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    prototypes: Matrix,
    class_ids: Vec<i64>,
    session_of: Vec<usize>,
    /// Normalized data mean each prototype was built from (OrCo anchors).
    anchors: Matrix,
}

impl PrototypeBank {
    pub fn empty(dim: usize) -> Self {
        Self {
            prototypes: Matrix::zeros(0, dim),
            class_ids: Vec::new(),
            session_of: Vec::new(),
            anchors: Matrix::zeros(0, dim),
        }
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn prototypes(&self) -> &Matrix {
        &self.prototypes
    }

    pub fn anchors(&self) -> &Matrix {
        &self.anchors
    }

    pub fn class_ids(&self) -> &[i64] {
        &self.class_ids
    }

    pub fn session_of(&self) -> &[usize] {
        &self.session_of
    }

    pub fn prototype_of(&self, class_id: i64) -> Option<&[f64]> {
        self.class_ids
            .iter()
            .position(|&c| c == class_id)
            .map(|i| self.prototypes.row(i))
    }

    /// Appends a class. `prototype` and `anchor` must already be unit norm.
    fn push(
        &mut self,
        class_id: i64,
        session: usize,
        prototype: &[f64],
        anchor: &[f64],
    ) -> Result<(), FscilError> {
        if self.class_ids.contains(&class_id) {
            return Err(FscilError::DuplicateClass(class_id));
        }
        let dim = self.dim();
        let grow = |m: &Matrix, row: &[f64]| {
            let mut data = m.as_slice().to_vec();
            data.extend_from_slice(row);
            Matrix::from_vec(m.rows() + 1, dim, data).expect("row length checked")
        };
        self.prototypes = grow(&self.prototypes, prototype);
        self.anchors = grow(&self.anchors, anchor);
        self.class_ids.push(class_id);
        self.session_of.push(session);
        Ok(())
    }

    fn check_dim(&self, found: usize) -> Result<(), FscilError> {
        if found != self.dim() {
            return Err(FscilError::DimensionMismatch {
                expected: self.dim(),
                found,
            });
        }
        Ok(())
    }
}

fn normalized_mean(rows: &Matrix, class_id: i64) -> Result<Vec<f64>, FscilError> {
    if rows.rows() == 0 {
        return Err(FscilError::EmptyShots(class_id));
    }
    let mut mean = vec![0.0; rows.cols()];
    for r in rows.iter_rows() {
        for (m, &x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    let n = rows.rows() as f64;
    for m in &mut mean {
        *m /= n;
    }
    if !normalize_in_place(&mut mean, COLLAPSE_NORM) {
        return Err(FscilError::ClassCollapse(class_id));
    }
    Ok(mean)
}

/// One prototype per listed class: the normalized mean of its rows.
/// Classes are stored in ascending id order, all tagged session 0.
pub fn base_prototypes(
    features_normalized: &Matrix,
    labels: &[i64],
    base_classes: &[i64],
) -> Result<PrototypeBank, FscilError> {
    let classes: BTreeSet<i64> = base_classes.iter().copied().collect();
    let mut bank = PrototypeBank::empty(features_normalized.cols());
    for c in classes {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.is_empty() {
            return Err(FscilError::EmptyClass(c));
        }
        let p = normalized_mean(&features_normalized.select_rows(&idx), c)?;
        bank.push(c, 0, &p, &p)?;
    }
    Ok(bank)
}

/// Class with the largest cosine similarity; ties go to the lowest class id.
pub fn ncm_predict(bank: &PrototypeBank, query: &[f64]) -> Result<i64, FscilError> {
    if bank.is_empty() {
        return Err(FscilError::EmptyBank);
    }
    bank.check_dim(query.len())?;
    let mut best: Option<(f64, i64)> = None;
    for (p, &c) in bank.prototypes.iter_rows().zip(&bank.class_ids) {
        let s = dot(p, query);
        best = match best {
            Some((bs, bc)) if bs > s || (bs == s && bc < c) => Some((bs, bc)),
            _ => Some((s, c)),
        };
    }
    Ok(best.expect("bank is non-empty").1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpprParams {
    pub gamma: f64,
    pub temperature: f64,
}

impl Default for SpprParams {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            temperature: 0.1,
        }
    }
}

/// Relation-weighted refinement: `normalize((1−γ)·m + γ·Σ_c w_c p_c)` with
/// `w = softmax(⟨m, p_c⟩ / temperature)` over the current bank.
pub fn sppr_refine(
    bank: &PrototypeBank,
    shots_normalized: &Matrix,
    class_id: i64,
    session: usize,
    params: &SpprParams,
) -> Result<PrototypeBank, FscilError> {
    bank.check_dim(shots_normalized.cols())?;
    let m = normalized_mean(shots_normalized, class_id)?;
    let mut context = vec![0.0; bank.dim()];
    if !bank.is_empty() {
        let logits: Vec<f64> = bank
            .prototypes
            .iter_rows()
            .map(|p| dot(&m, p) / params.temperature)
            .collect();
        let w = softmax_unchecked(&logits);
        for (p, &wc) in bank.prototypes.iter_rows().zip(&w) {
            for (c, &x) in context.iter_mut().zip(p) {
                *c += wc * x;
            }
        }
    }
    let mut refined: Vec<f64> = m
        .iter()
        .zip(&context)
        .map(|(&a, &b)| (1.0 - params.gamma) * a + params.gamma * b)
        .collect();
    if !normalize_in_place(&mut refined, COLLAPSE_NORM) {
        return Err(FscilError::ClassCollapse(class_id));
    }
    let mut out = bank.clone();
    out.push(class_id, session, &refined, &m)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrcoParams {
    pub steps: usize,
    pub step_size: f64,
    pub lambda_orth: f64,
    pub perturb_sigma: f64,
}

impl Default for OrcoParams {
    fn default() -> Self {
        Self {
            steps: 200,
            step_size: 0.05,
            lambda_orth: 0.1,
            perturb_sigma: 0.05,
        }
    }
}

/// `Σ_c ‖p_c − a_c‖² + λ·Σ_{i≠j} ⟨p_i, p_j⟩²` (ordered pairs).
pub fn orco_loss(prototypes: &Matrix, anchors: &Matrix, lambda_orth: f64) -> f64 {
    let mut attract = 0.0;
    for (p, a) in prototypes.iter_rows().zip(anchors.iter_rows()) {
        attract += p.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    let mut orth = 0.0;
    for i in 0..prototypes.rows() {
        for j in 0..prototypes.rows() {
            if i != j {
                let g = dot(prototypes.row(i), prototypes.row(j));
                orth += g * g;
            }
        }
    }
    attract + lambda_orth * orth
}

/// Projected gradient descent on [`orco_loss`]; rows are re-normalized
/// after every step. Returns the loss before the first step and after
/// each step.
pub fn orco_descend(
    prototypes: &mut Matrix,
    anchors: &Matrix,
    params: &OrcoParams,
) -> Result<Vec<f64>, FscilError> {
    let c = prototypes.rows();
    let mut trace = Vec::with_capacity(params.steps + 1);
    let initial = orco_loss(prototypes, anchors, params.lambda_orth);
    if !initial.is_finite() {
        return Err(FscilError::NonFiniteLoss { step: 0 });
    }
    trace.push(initial);
    let mut grad = Matrix::zeros(c, prototypes.cols());
    for step in 1..=params.steps {
        // ∂/∂p_i = 2(p_i − a_i) + 4λ Σ_{j≠i} ⟨p_i, p_j⟩ p_j
        for i in 0..c {
            let (pi, ai) = (prototypes.row(i), anchors.row(i));
            let g = grad.row_mut(i);
            for ((gk, &p), &a) in g.iter_mut().zip(pi).zip(ai) {
                *gk = 2.0 * (p - a);
            }
            for j in 0..c {
                if j == i {
                    continue;
                }
                let pj = prototypes.row(j);
                let coef = 4.0 * params.lambda_orth * dot(pi, pj);
                for (gk, &x) in g.iter_mut().zip(pj) {
                    *gk += coef * x;
                }
            }
        }
        for i in 0..c {
            let row = prototypes.row_mut(i);
            for (p, &g) in row.iter_mut().zip(grad.row(i)) {
                *p -= params.step_size * g;
            }
            if !normalize_in_place(row, COLLAPSE_NORM) {
                return Err(FscilError::NonFiniteLoss { step });
            }
        }
        let loss = orco_loss(prototypes, anchors, params.lambda_orth);
        if !loss.is_finite() {
            return Err(FscilError::NonFiniteLoss { step });
        }
        trace.push(loss);
    }
    Ok(trace)
}

/// Adds the novel class at `normalize(shot mean + σ·N(0, I))` and then runs
/// [`orco_descend`] over every prototype. Anchors are the normalized data
/// means (base means for old classes, the shot mean for the new one).
pub fn orco_update<R: Rng + ?Sized>(
    bank: &PrototypeBank,
    shots_normalized: &Matrix,
    class_id: i64,
    session: usize,
    params: &OrcoParams,
    rng: &mut R,
) -> Result<(PrototypeBank, Vec<f64>), FscilError> {
    bank.check_dim(shots_normalized.cols())?;
    let anchor = normalized_mean(shots_normalized, class_id)?;
    let mut init: Vec<f64> = anchor
        .iter()
        .map(|&a| {
            let z: f64 = rng.sample(StandardNormal);
            a + params.perturb_sigma * z
        })
        .collect();
    if !normalize_in_place(&mut init, COLLAPSE_NORM) {
        return Err(FscilError::ClassCollapse(class_id));
    }
    let mut out = bank.clone();
    out.push(class_id, session, &init, &anchor)?;
    let trace = orco_descend(&mut out.prototypes, &out.anchors, params)?;
    Ok((out, trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConcmParams {
    pub alpha: f64,
    pub aug_count: usize,
    pub aug_sigma: f64,
}

impl Default for ConcmParams {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            aug_count: 50,
            aug_sigma: 0.05,
        }
    }
}

/// Cross-attention calibration over base-session prototypes followed by
/// Gaussian prototype augmentation.
pub fn concm_calibrate<R: Rng + ?Sized>(
    bank: &PrototypeBank,
    shots_normalized: &Matrix,
    class_id: i64,
    session: usize,
    params: &ConcmParams,
    rng: &mut R,
) -> Result<PrototypeBank, FscilError> {
    bank.check_dim(shots_normalized.cols())?;
    let q = normalized_mean(shots_normalized, class_id)?;
    let base: Vec<&[f64]> = bank
        .prototypes
        .iter_rows()
        .zip(&bank.session_of)
        .filter(|(_, &s)| s == 0)
        .map(|(p, _)| p)
        .collect();
    if base.is_empty() {
        return Err(FscilError::EmptyBaseBank);
    }
    let scale = (bank.dim() as f64).sqrt();
    let logits: Vec<f64> = base.iter().map(|p| dot(&q, p) / scale).collect();
    let attn = softmax_unchecked(&logits);
    let mut context = vec![0.0; bank.dim()];
    for (p, &a) in base.iter().zip(&attn) {
        for (c, &x) in context.iter_mut().zip(*p) {
            *c += a * x;
        }
    }
    let mut calibrated: Vec<f64> = q
        .iter()
        .zip(&context)
        .map(|(&a, &b)| params.alpha * a + (1.0 - params.alpha) * b)
        .collect();
    if !normalize_in_place(&mut calibrated, COLLAPSE_NORM) {
        return Err(FscilError::ClassCollapse(class_id));
    }
    let mut sum = calibrated.clone();
    for _ in 0..params.aug_count {
        for (s, &c) in sum.iter_mut().zip(&calibrated) {
            let z: f64 = rng.sample(StandardNormal);
            *s += c + params.aug_sigma * z;
        }
    }
    let count = (params.aug_count + 1) as f64;
    for s in &mut sum {
        *s /= count;
    }
    if !normalize_in_place(&mut sum, COLLAPSE_NORM) {
        return Err(FscilError::ClassCollapse(class_id));
    }
    let mut out = bank.clone();
    out.push(class_id, session, &sum, &q)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    Sppr,
    Orco,
    Concm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Baseline, Method::Sppr, Method::Orco, Method::Concm];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Sppr => "sppr",
            Method::Orco => "orco",
            Method::Concm => "concm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = FscilError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(Method::Baseline),
            "sppr" => Ok(Method::Sppr),
            "orco" => Ok(Method::Orco),
            "concm" => Ok(Method::Concm),
            other => Err(FscilError::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    #[serde(default)]
    pub sppr: SpprParams,
    #[serde(default)]
    pub orco: OrcoParams,
    #[serde(default)]
    pub concm: ConcmParams,
}

/// Accuracy and confusion over the classes seen so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub session_index: usize,
    /// Classes seen so far, ascending; indexes the confusion matrix.
    pub class_ids: Vec<i64>,
    /// Percentage of evaluated test rows predicted correctly.
    pub overall_accuracy: f64,
    /// Fraction of each class's test rows predicted correctly.
    pub per_class_recall: Vec<f64>,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
}

/// NCM evaluation on the test rows whose label is in `seen_classes`; other
/// rows are skipped. Every bank class must be in `seen_classes`.
pub fn evaluate(
    bank: &PrototypeBank,
    test_normalized: &Matrix,
    labels: &[i64],
    seen_classes: &[i64],
    session_index: usize,
) -> Result<SessionResult, FscilError> {
    let class_ids: Vec<i64> = seen_classes
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<i64, usize> = class_ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    if let Some(&c) = bank.class_ids.iter().find(|c| !index.contains_key(c)) {
        return Err(FscilError::InvalidConfig(format!(
            "bank class {c} is not among the seen classes"
        )));
    }
    let n = class_ids.len();
    let mut confusion = vec![vec![0usize; n]; n];
    let mut total = 0usize;
    for (row, label) in test_normalized.iter_rows().zip(labels) {
        let Some(&t) = index.get(label) else { continue };
        let pred = ncm_predict(bank, row)?;
        confusion[t][index[&pred]] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(FscilError::EmptyTest);
    }
    let correct: usize = (0..n).map(|i| confusion[i][i]).sum();
    let per_class_recall = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let s: usize = row.iter().sum();
            if s == 0 {
                0.0
            } else {
                row[i] as f64 / s as f64
            }
        })
        .collect();
    Ok(SessionResult {
        session_index,
        class_ids,
        overall_accuracy: 100.0 * correct as f64 / total as f64,
        per_class_recall,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// The first `base_class_count` training class ids (ascending) form the
    /// base session.
    pub base_class_count: usize,
    pub sessions: Vec<Vec<i64>>,
    pub shots: usize,
    pub method: Method,
    pub seed: u64,
    pub test_sample_count: usize,
    #[serde(default)]
    pub params: MethodParams,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            base_class_count: 7,
            sessions: vec![vec![7], vec![8], vec![9]],
            shots: 5,
            method: Method::Baseline,
            seed: 0,
            test_sample_count: 1000,
            params: MethodParams::default(),
        }
    }
}

/// Raw (un-normalized) training and test features.
#[derive(Debug, Clone, Copy)]
pub struct ProtocolData<'a> {
    pub train: &'a Matrix,
    pub train_labels: &'a [i64],
    pub test: &'a Matrix,
    pub test_labels: &'a [i64],
}

/// One row of the per-run summary: base-session and final accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub shots: usize,
    pub base_accuracy: f64,
    pub overall_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolOutcome {
    pub results: Vec<SessionResult>,
    pub summary: SummaryRow,
    /// Rows of the test matrix used for every session, ascending.
    pub test_indices: Vec<usize>,
    /// Training rows used as shots, per novel class.
    pub shot_indices: BTreeMap<i64, Vec<usize>>,
    pub final_bank: PrototypeBank,
    /// OrCo loss traces, one per novel class (empty for other methods).
    pub orco_traces: Vec<Vec<f64>>,
}

/// Base classes, novel classes in arrival order, and validation.
fn resolve_classes(
    config: &SessionConfig,
    train_labels: &[i64],
) -> Result<(Vec<i64>, Vec<i64>), FscilError> {
    if config.shots == 0 {
        return Err(FscilError::InvalidConfig("shots must be at least 1".into()));
    }
    let mut novel = Vec::new();
    let mut seen = BTreeSet::new();
    for s in &config.sessions {
        if s.is_empty() {
            return Err(FscilError::InvalidConfig("empty incremental session".into()));
        }
        for &c in s {
            if !seen.insert(c) {
                return Err(FscilError::InvalidConfig(format!(
                    "class {c} appears in more than one session"
                )));
            }
            novel.push(c);
        }
    }
    let present: BTreeSet<i64> = train_labels.iter().copied().filter(|&l| l >= 0).collect();
    let base: Vec<i64> = present.iter().copied().take(config.base_class_count).collect();
    if base.len() < config.base_class_count || base.is_empty() {
        return Err(FscilError::InvalidConfig(format!(
            "{} base classes requested, {} classes in the training data",
            config.base_class_count,
            base.len()
        )));
    }
    if let Some(c) = novel.iter().find(|c| base.contains(c)) {
        return Err(FscilError::InvalidConfig(format!(
            "session class {c} is also a base class"
        )));
    }
    Ok((base, novel))
}

fn seeded_subset(pool: Vec<usize>, take: usize, seed_value: u64, stage: &str) -> Vec<usize> {
    let mut pool = pool;
    pool.shuffle(&mut seed::rng(seed_value, stage));
    pool.truncate(take);
    pool.sort_unstable();
    pool
}

/// The fixed evaluation subset: a seeded draw of `test_sample_count` rows
/// among the test rows of all protocol classes. Independent of method and
/// shot count.
pub fn test_subset(config: &SessionConfig, test_labels: &[i64], classes: &BTreeSet<i64>) -> Vec<usize> {
    let pool: Vec<usize> = (0..test_labels.len())
        .filter(|&i| classes.contains(&test_labels[i]))
        .collect();
    seeded_subset(pool, config.test_sample_count, config.seed, "fscil/test-subset")
}

/// Shot rows for `class_id`: seeded shuffle of its training rows, first
/// `shots`, sorted. Smaller shot counts are prefixes of larger ones before
/// sorting.
pub fn shot_subset(
    config: &SessionConfig,
    train_labels: &[i64],
    class_id: i64,
) -> Result<Vec<usize>, FscilError> {
    let pool: Vec<usize> = (0..train_labels.len())
        .filter(|&i| train_labels[i] == class_id)
        .collect();
    if pool.len() < config.shots {
        return Err(FscilError::InsufficientShots {
            class: class_id,
            available: pool.len(),
            requested: config.shots,
        });
    }
    Ok(seeded_subset(
        pool,
        config.shots,
        config.seed,
        &format!("fscil/shots/{class_id}"),
    ))
}

/// Base session followed by each incremental session. Features are
/// centered on the base-class training mean and ℓ2-normalized.
pub fn run_protocol(
    config: &SessionConfig,
    data: ProtocolData<'_>,
) -> Result<ProtocolOutcome, FscilError> {
    if data.train.cols() != data.test.cols() {
        return Err(FscilError::DimensionMismatch {
            expected: data.train.cols(),
            found: data.test.cols(),
        });
    }
    let (base, novel) = resolve_classes(config, data.train_labels)?;
    let mut shot_indices = BTreeMap::new();
    for &c in &novel {
        shot_indices.insert(c, shot_subset(config, data.train_labels, c)?);
    }

    let base_rows: Vec<usize> = (0..data.train_labels.len())
        .filter(|&i| base.contains(&data.train_labels[i]))
        .collect();
    let base_raw = data.train.select_rows(&base_rows);
    let prep = Preprocessor::fit_center(&base_raw)?;
    let base_norm = prep.center_normalize(&base_raw)?;
    let base_labels: Vec<i64> = base_rows.iter().map(|&i| data.train_labels[i]).collect();

    let all_classes: BTreeSet<i64> = base.iter().chain(&novel).copied().collect();
    let test_indices = test_subset(config, data.test_labels, &all_classes);
    let test_norm = prep.center_normalize(&data.test.select_rows(&test_indices))?;
    let test_labels: Vec<i64> = test_indices.iter().map(|&i| data.test_labels[i]).collect();

    let mut bank = base_prototypes(&base_norm, &base_labels, &base)?;
    let mut seen: Vec<i64> = base.clone();
    let mut results = vec![evaluate(&bank, &test_norm, &test_labels, &seen, 0)?];
    let mut orco_traces = Vec::new();

    for (s, classes) in config.sessions.iter().enumerate() {
        let session = s + 1;
        for &c in classes {
            let shots = prep.center_normalize(&data.train.select_rows(&shot_indices[&c]))?;
            let stage = format!("fscil/{}/{c}", config.method);
            bank = match config.method {
                Method::Baseline => bank,
                Method::Sppr => sppr_refine(&bank, &shots, c, session, &config.params.sppr)?,
                Method::Orco => {
                    let mut rng = seed::rng(config.seed, &stage);
                    let (b, trace) =
                        orco_update(&bank, &shots, c, session, &config.params.orco, &mut rng)?;
                    orco_traces.push(trace);
                    b
                }
                Method::Concm => {
                    let mut rng = seed::rng(config.seed, &stage);
                    concm_calibrate(&bank, &shots, c, session, &config.params.concm, &mut rng)?
                }
            };
            seen.push(c);
        }
        results.push(evaluate(&bank, &test_norm, &test_labels, &seen, session)?);
    }

    let summary = SummaryRow {
        method: config.method,
        shots: config.shots,
        base_accuracy: results[0].overall_accuracy,
        overall_accuracy: results.last().expect("base session present").overall_accuracy,
    };
    Ok(ProtocolOutcome {
        results,
        summary,
        test_indices,
        shot_indices,
        final_bank: bank,
        orco_traces,
    })
}

/// Per-method row of the method × shots table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub base_accuracy: f64,
    /// Final-session accuracy keyed by shot count.
    pub overall_by_shots: BTreeMap<usize, f64>,
}

/// Groups run summaries by method (in [`Method`] order).
pub fn summary_table(rows: &[SummaryRow]) -> Vec<MethodSummary> {
    let mut by_method: BTreeMap<Method, MethodSummary> = BTreeMap::new();
    for r in rows {
        let entry = by_method.entry(r.method).or_insert_with(|| MethodSummary {
            method: r.method,
            base_accuracy: r.base_accuracy,
            overall_by_shots: BTreeMap::new(),
        });
        entry.overall_by_shots.insert(r.shots, r.overall_accuracy);
    }
    by_method.into_values().collect()
}
