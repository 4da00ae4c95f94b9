//! Linear probe on frozen features: `z(x) = W x + b`, trained with
//! mini-batch SGD + momentum on softmax cross-entropy.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::matrix::{dot, Matrix};
use crate::seed;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProbeError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("feature dimension mismatch: model expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{labels} labels for {rows} feature rows")]
    LabelCount { rows: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("a probe needs at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, ProbeError> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(ProbeError::NonFinite("logits"));
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// `log Σ exp(z_k)` with max subtraction.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    /// K×d
    pub weights: Matrix,
    /// length K
    pub bias: Vec<f64>,
}

impl ProbeModel {
    pub fn zeros(num_classes: usize, dim: usize) -> Result<Self, ProbeError> {
        Self::new(Matrix::zeros(num_classes, dim), vec![0.0; num_classes])
    }

    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self, ProbeError> {
        if weights.rows() < 2 {
            return Err(ProbeError::TooFewClasses(weights.rows()));
        }
        if weights.cols() == 0 {
            return Err(ProbeError::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        if bias.len() != weights.rows() {
            return Err(ProbeError::DimensionMismatch {
                expected: weights.rows(),
                found: bias.len(),
            });
        }
        if !weights.is_finite() || bias.iter().any(|v| !v.is_finite()) {
            return Err(ProbeError::NonFinite("probe parameters"));
        }
        Ok(Self { weights, bias })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = dot(self.weights.row(k), x) + self.bias[k];
        }
    }

    fn check_dim(&self, features: &Matrix) -> Result<(), ProbeError> {
        if features.cols() != self.dim() {
            return Err(ProbeError::DimensionMismatch {
                expected: self.dim(),
                found: features.cols(),
            });
        }
        Ok(())
    }
}

/// N×K logits.
pub fn forward(model: &ProbeModel, features: &Matrix) -> Result<Matrix, ProbeError> {
    model.check_dim(features)?;
    let k = model.num_classes();
    let mut out = Matrix::zeros(features.rows(), k);
    for (i, x) in features.iter_rows().enumerate() {
        model.logits_into(x, out.row_mut(i));
    }
    Ok(out)
}

/// Argmax class per row, lowest index on ties.
pub fn predict(model: &ProbeModel, features: &Matrix) -> Result<Vec<usize>, ProbeError> {
    let logits = forward(model, features)?;
    Ok(logits.iter_rows().map(argmax).collect())
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<(), ProbeError> {
    if labels.len() != rows {
        return Err(ProbeError::LabelCount {
            rows,
            labels: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(ProbeError::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Mean negative log-likelihood in nats, via log-sum-exp.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64, ProbeError> {
    check_labels(labels, logits.rows(), logits.cols())?;
    if !logits.is_finite() {
        return Err(ProbeError::NonFinite("logits"));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = logits
        .iter_rows()
        .zip(labels)
        .map(|(z, &y)| log_sum_exp(z) - z[y])
        .sum();
    Ok(total / labels.len() as f64)
}

/// Gradient of the mean cross-entropy with respect to `(W, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Batch loss and its exact gradient: `(softmax − onehot) xᵀ`, averaged
/// over the rows named by `batch`.
pub fn loss_and_gradient(
    model: &ProbeModel,
    features: &Matrix,
    labels: &[usize],
    batch: &[usize],
) -> Result<(f64, Gradient), ProbeError> {
    model.check_dim(features)?;
    check_labels(labels, features.rows(), model.num_classes())?;
    let k = model.num_classes();
    let mut grad = Gradient {
        weights: Matrix::zeros(k, model.dim()),
        bias: vec![0.0; k],
    };
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut logits = vec![0.0; k];
    let mut loss = 0.0;
    for &i in batch {
        let x = features.row(i);
        let y = labels[i];
        model.logits_into(x, &mut logits);
        loss += log_sum_exp(&logits) - logits[y];
        let mut p = softmax_unchecked(&logits);
        p[y] -= 1.0;
        for (c, &g) in p.iter().enumerate() {
            let g = g * scale;
            grad.bias[c] += g;
            for (w, &xj) in grad.weights.row_mut(c).iter_mut().zip(x) {
                *w += g * xj;
            }
        }
    }
    Ok((loss * scale, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 256,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.epochs == 0 {
            return Err(ProbeError::InvalidConfig("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(ProbeError::InvalidConfig("batch_size must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(ProbeError::InvalidConfig("learning_rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ProbeError::InvalidConfig("momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ProbeModel,
    /// Sample-weighted mean of the batch losses seen during each epoch
    /// (each batch loss is measured before that batch's update).
    pub loss_history: Vec<f64>,
    /// Classes in `0..K` with no training rows.
    pub missing_classes: Vec<usize>,
}

/// Trains a zero-initialised probe. Deterministic for a fixed config: the
/// shuffle order comes from `seed::rng(config.seed, "probe")`.
pub fn train_probe(
    features: &Matrix,
    labels: &[usize],
    num_classes: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome, ProbeError> {
    config.validate()?;
    if features.rows() == 0 {
        return Err(ProbeError::EmptyTrainingSet);
    }
    if !features.is_finite() {
        return Err(ProbeError::NonFinite("features"));
    }
    let mut model = ProbeModel::zeros(num_classes, features.cols())?;
    check_labels(labels, features.rows(), num_classes)?;

    let mut present = vec![false; num_classes];
    for &l in labels {
        present[l] = true;
    }
    let missing_classes = (0..num_classes).filter(|&c| !present[c]).collect();

    let mut rng = seed::rng(config.seed, "probe");
    let mut order: Vec<usize> = (0..features.rows()).collect();
    let mut vel_w = Matrix::zeros(num_classes, features.cols());
    let mut vel_b = vec![0.0; num_classes];
    let mut history = Vec::with_capacity(config.epochs);
    let (lr, mu) = (config.learning_rate, config.momentum);

    for _ in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grad) = loss_and_gradient(&model, features, labels, batch)?;
            epoch_loss += loss * batch.len() as f64;
            // v <- mu v + g ; p <- p - lr v
            for c in 0..num_classes {
                let gw = grad.weights.row(c);
                let vw = vel_w.row_mut(c);
                let w = model.weights.row_mut(c);
                for j in 0..gw.len() {
                    vw[j] = mu * vw[j] + gw[j];
                    w[j] -= lr * vw[j];
                }
                vel_b[c] = mu * vel_b[c] + grad.bias[c];
                model.bias[c] -= lr * vel_b[c];
            }
        }
        let epoch_loss = epoch_loss / features.rows() as f64;
        if !epoch_loss.is_finite() || !model.weights.is_finite() {
            return Err(ProbeError::NonFinite("training loss"));
        }
        history.push(epoch_loss);
    }
    Ok(TrainOutcome {
        model,
        loss_history: history,
        missing_classes,
    })
}

/// Fraction of rows whose prediction matches the label.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn softmax_uniform_and_shift() {
        let p = softmax(&[0.0; 6]).unwrap();
        for v in &p {
            assert!((v - 1.0 / 6.0).abs() < 1e-15);
        }
        let q = softmax(&[-123.5; 6]).unwrap();
        assert_eq!(p, q);
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn softmax_large_gap_no_overflow() {
        // exp(-1000) underflows to 0 in f64; true value ~ 5.1e-435
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(p[1] >= 0.0 && p[1] < 1e-300);
    }

    #[test]
    fn forward_zero_and_identity() {
        let model = ProbeModel::zeros(3, 3).unwrap();
        let x = Matrix::from_rows(3, &[[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(forward(&model, &x).unwrap().as_slice(), &[0.0; 3]);

        let model = ProbeModel::new(Matrix::identity(3), vec![0.0; 3]).unwrap();
        let e1 = Matrix::from_rows(3, &[[0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(forward(&model, &e1).unwrap().as_slice(), &[0.0, 1.0, 0.0]);
        assert!(matches!(
            forward(&model, &Matrix::zeros(1, 2)),
            Err(ProbeError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let zeros = Matrix::zeros(4, 6);
        let ce = cross_entropy(&zeros, &[0, 1, 2, 5]).unwrap();
        assert!((ce - 6f64.ln()).abs() < 1e-15);
        assert!((ce - 1.791759).abs() < 1e-6);

        let sharp = Matrix::from_rows(3, &[[800.0, 0.0, 0.0]]).unwrap();
        assert_eq!(cross_entropy(&sharp, &[0]).unwrap(), 0.0);

        assert!(matches!(
            cross_entropy(&zeros, &[0, 1, 2, 6]),
            Err(ProbeError::LabelOutOfRange { label: 6, .. })
        ));
    }

    #[test]
    fn predict_tie_break() {
        let model = ProbeModel::new(Matrix::identity(6), vec![0.0; 6]).unwrap();
        let x = Matrix::from_rows(6, &[[5.0, 1.0, 1.0, 1.0, 1.0, 1.0], [2.0; 6], [0.0, 0.0, 3.0, 3.0, 0.0, 0.0]])
            .unwrap();
        assert_eq!(predict(&model, &x).unwrap(), vec![0, 0, 2]);
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let data = synth::two_gaussians(8, 20, 3.0, 5);
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            batch_size: 7,
            ..TrainConfig::default()
        };
        let out = train_probe(&data.features, &data.labels, 2, &cfg).unwrap();
        assert_eq!(out.model, ProbeModel::zeros(2, 8).unwrap());
        assert_eq!(out.loss_history.len(), 1);
        assert!((out.loss_history[0] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn config_and_input_errors() {
        let data = synth::two_gaussians(4, 5, 3.0, 1);
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_probe(&data.features, &data.labels, 2, &bad),
            Err(ProbeError::InvalidConfig(_))
        ));
        assert_eq!(
            train_probe(&Matrix::zeros(0, 4), &[], 2, &TrainConfig::default()),
            Err(ProbeError::EmptyTrainingSet)
        );
    }

    #[test]
    fn absent_class_is_reported() {
        let data = synth::two_gaussians(4, 10, 3.0, 2);
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let out = train_probe(&data.features, &data.labels, 3, &cfg).unwrap();
        assert_eq!(out.missing_classes, vec![2]);
    }

    #[test]
    fn separable_set_is_learned() {
        let data = synth::two_gaussians(8, 500, 3.0, 11);
        let out = train_probe(&data.features, &data.labels, 2, &TrainConfig::default()).unwrap();
        let preds = predict(&out.model, &data.features).unwrap();
        assert!(accuracy(&preds, &data.labels) >= 0.99);
        assert_eq!(out.loss_history.len(), 50);
        assert!(out.loss_history[49] < out.loss_history[0]);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let data = synth::two_gaussians(8, 100, 1.0, 3);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 32,
            seed: 99,
            ..TrainConfig::default()
        };
        let a = train_probe(&data.features, &data.labels, 2, &cfg).unwrap();
        let b = train_probe(&data.features, &data.labels, 2, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
