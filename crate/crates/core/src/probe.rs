//! Linear difficulty probe over DSN activations.
//!
//! Problems at or below `theta_easy` are labeled 0, at or above
//! `theta_hard` labeled 1, everything in between is dropped. Features are
//! the DSN activations (in `union_set` order), z-scored with statistics
//! frozen from the training rows, and a logistic model is fit by
//! full-batch gradient descent on mean binary cross-entropy from zero
//! initialization.

use std::borrow::Borrow;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsn::DsnSelection;
use crate::numeric::{sigmoid, softplus, CompensatedSum};
use crate::store::ActivationRecord;

/// Floor applied to per-feature standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("need at least 2 labeled records after filtering, got {0}")]
    TooFewRecords(usize),
    #[error("training labels contain a single class ({0})")]
    SingleClass(u8),
    #[error("record `{0}` has no difficulty label")]
    Unlabeled(String),
    #[error("DSN index {index} out of range for activation vector of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite input activation at index {0}")]
    NonFinite(usize),
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input")]
    Empty,
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("probe file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Keeps easy (`d ≤ theta_easy` → 0) and hard (`d ≥ theta_hard` → 1) records in input order.
pub fn make_labels(
    records: &[ActivationRecord],
    theta_easy: u8,
    theta_hard: u8,
) -> Result<(Vec<&ActivationRecord>, Vec<u8>), ProbeError> {
    let mut kept = Vec::new();
    let mut labels = Vec::new();
    for r in records {
        let d = r.difficulty.ok_or_else(|| ProbeError::Unlabeled(r.problem_id.clone()))?;
        if d <= theta_easy {
            kept.push(r);
            labels.push(0);
        } else if d >= theta_hard {
            kept.push(r);
            labels.push(1);
        }
    }
    check_labels(&labels)?;
    Ok((kept, labels))
}

fn check_labels(labels: &[u8]) -> Result<(), ProbeError> {
    if labels.len() < 2 {
        return Err(ProbeError::TooFewRecords(labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(ProbeError::Shape(format!("label {bad} is not 0/1")));
    }
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(ProbeError::SingleClass(labels[0]));
    }
    Ok(())
}

fn gather(activations: &[f32], dsn: &DsnSelection) -> Result<Vec<f64>, ProbeError> {
    dsn.union_set
        .iter()
        .map(|&i| {
            activations.get(i).map(|&v| v as f64).ok_or(ProbeError::IndexOutOfRange {
                index: i,
                len: activations.len(),
            })
        })
        .collect()
}

/// One row per record: its activations at `dsn.union_set`, in that order.
pub fn extract_features<R: Borrow<ActivationRecord>>(records: &[R], dsn: &DsnSelection) -> Result<Vec<Vec<f64>>, ProbeError> {
    records.iter().map(|r| gather(&r.borrow().activations, dsn)).collect()
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Column means and population standard deviations (floored at [`STD_FLOOR`]).
    pub fn fit(features: &[Vec<f64>]) -> Result<Self, ProbeError> {
        let first = features.first().ok_or(ProbeError::Empty)?;
        let cols = first.len();
        if features.iter().any(|r| r.len() != cols) {
            return Err(ProbeError::Shape("ragged feature matrix".into()));
        }
        let n = features.len() as f64;
        let mut mean = Vec::with_capacity(cols);
        let mut std = Vec::with_capacity(cols);
        for j in 0..cols {
            let m = features.iter().map(|r| r[j]).collect::<CompensatedSum>().total() / n;
            let var = features.iter().map(|r| (r[j] - m).powi(2)).collect::<CompensatedSum>().total() / n;
            mean.push(m);
            std.push(var.sqrt().max(STD_FLOOR));
        }
        Ok(Self { mean, std })
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>, ProbeError> {
        if row.len() != self.mean.len() {
            return Err(ProbeError::Shape(format!(
                "row has {} features, normalizer expects {}",
                row.len(),
                self.mean.len()
            )));
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect())
    }

    pub fn apply(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ProbeError> {
        features.iter().map(|r| self.apply_row(r)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub convergence_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 500,
            l2: 0.0,
            convergence_tol: 1e-7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ProbeError::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(ProbeError::Config("epochs must be >= 1".into()));
        }
        if self.l2.is_nan() || self.l2 < 0.0 {
            return Err(ProbeError::Config(format!("l2 must be >= 0, got {}", self.l2)));
        }
        if self.convergence_tol.is_nan() || self.convergence_tol < 0.0 {
            return Err(ProbeError::Config("convergence_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Features, labels and the selection that produced them.
#[derive(Debug, Clone)]
pub struct ProbeTrainingSet {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub dsn: DsnSelection,
}

impl ProbeTrainingSet {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<u8>, dsn: DsnSelection) -> Result<Self, ProbeError> {
        if features.len() != labels.len() {
            return Err(ProbeError::Shape(format!(
                "{} feature rows vs {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(r) = features.iter().find(|r| r.len() != dsn.union_set.len()) {
            return Err(ProbeError::Shape(format!(
                "feature row of length {} for {} DSN neurons",
                r.len(),
                dsn.union_set.len()
            )));
        }
        check_labels(&labels)?;
        Ok(Self { features, labels, dsn })
    }

    /// Labels with [`make_labels`] at the selection's thresholds and extracts features.
    pub fn from_records(records: &[ActivationRecord], dsn: &DsnSelection) -> Result<Self, ProbeError> {
        let (kept, labels) = make_labels(records, dsn.config.theta_easy, dsn.config.theta_hard)?;
        let features = extract_features(&kept, dsn)?;
        Self::new(features, labels, dsn.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub final_loss: f64,
    pub epochs_run: usize,
}

/// Trained probe: normalizer, weights and bias, and the DSN indices it reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub normalizer: Normalizer,
    pub dsn: DsnSelection,
    pub train_meta: TrainMeta,
    pub config: TrainConfig,
}

fn logit(weights: &[f64], bias: f64, x: &[f64]) -> f64 {
    weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bias
}

fn bce_from_logit(z: f64, y: u8) -> f64 {
    if y == 1 {
        softplus(-z)
    } else {
        softplus(z)
    }
}

/// Mean BCE of a logistic model on already-normalized features, plus `l2/2 · ‖w‖²`.
pub fn bce_loss(weights: &[f64], bias: f64, features: &[Vec<f64>], labels: &[u8], l2: f64) -> f64 {
    let n = features.len() as f64;
    let data: f64 = features
        .iter()
        .zip(labels)
        .map(|(x, &y)| bce_from_logit(logit(weights, bias, x), y))
        .sum::<f64>()
        / n;
    data + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Analytic gradient of [`bce_loss`] with respect to `(weights, bias)`.
pub fn bce_gradient(weights: &[f64], bias: f64, features: &[Vec<f64>], labels: &[u8], l2: f64) -> (Vec<f64>, f64) {
    let n = features.len() as f64;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let r = sigmoid(logit(weights, bias, x)) - y as f64;
        for (g, v) in gw.iter_mut().zip(x) {
            *g += r * v;
        }
        gb += r;
    }
    for (g, w) in gw.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    (gw, gb / n)
}

/// Output of [`fit_logistic`].
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Loss before each update, followed by the loss of the returned parameters.
    pub loss_history: Vec<f64>,
}

/// Full-batch gradient descent from zero on normalized features.
pub fn fit_logistic(features: &[Vec<f64>], labels: &[u8], config: &TrainConfig) -> Result<LogisticFit, ProbeError> {
    config.validate()?;
    let dim = features.first().map(Vec::len).ok_or(ProbeError::Empty)?;
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let mut history = Vec::with_capacity(config.epochs + 1);
    let mut loss = bce_loss(&weights, bias, features, labels, config.l2);
    history.push(loss);
    for epoch in 1..=config.epochs {
        let (gw, gb) = bce_gradient(&weights, bias, features, labels, config.l2);
        for (w, g) in weights.iter_mut().zip(&gw) {
            *w -= config.learning_rate * g;
        }
        bias -= config.learning_rate * gb;
        let next = bce_loss(&weights, bias, features, labels, config.l2);
        if !next.is_finite() {
            return Err(ProbeError::Divergence { epoch });
        }
        history.push(next);
        let delta = (loss - next).abs();
        loss = next;
        if delta < config.convergence_tol {
            break;
        }
    }
    Ok(LogisticFit {
        weights,
        bias,
        loss_history: history,
    })
}

/// Fits the normalizer on the training rows and trains the probe.
pub fn train_probe(set: &ProbeTrainingSet, config: &TrainConfig) -> Result<ProbeModel, ProbeError> {
    config.validate()?;
    check_labels(&set.labels)?;
    let normalizer = Normalizer::fit(&set.features)?;
    let x = normalizer.apply(&set.features)?;
    let fit = fit_logistic(&x, &set.labels, config)?;
    let final_loss = *fit.loss_history.last().expect("history holds the initial loss");
    Ok(ProbeModel {
        weights: fit.weights,
        bias: fit.bias,
        normalizer,
        dsn: set.dsn.clone(),
        train_meta: TrainMeta {
            final_loss,
            epochs_run: fit.loss_history.len() - 1,
        },
        config: *config,
    })
}

/// P(Hard) strictly inside (0, 1).
pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

impl ProbeModel {
    /// A model that always predicts 0.5.
    pub fn zero(dsn: DsnSelection) -> Self {
        let k = dsn.union_set.len();
        Self {
            weights: vec![0.0; k],
            bias: 0.0,
            normalizer: Normalizer {
                mean: vec![0.0; k],
                std: vec![1.0; k],
            },
            dsn,
            train_meta: TrainMeta {
                final_loss: std::f64::consts::LN_2,
                epochs_run: 0,
            },
            config: TrainConfig::default(),
        }
    }

    /// Pre-sigmoid score for a full activation vector.
    pub fn logit(&self, activations: &[f32]) -> Result<f64, ProbeError> {
        if let Some(i) = activations.iter().position(|v| !v.is_finite()) {
            return Err(ProbeError::NonFinite(i));
        }
        let h = self.normalizer.apply_row(&gather(activations, &self.dsn)?)?;
        Ok(logit(&self.weights, self.bias, &h))
    }

    pub fn predict_p_hard(&self, activations: &[f32]) -> Result<f64, ProbeError> {
        Ok(clamp_probability(sigmoid(self.logit(activations)?)))
    }

    pub fn save(&self, path: &Path) -> Result<(), ProbeError> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ProbeError> {
        let m: ProbeModel = serde_json::from_slice(&std::fs::read(path)?)?;
        let k = m.dsn.union_set.len();
        if m.weights.len() != k || m.normalizer.mean.len() != k || m.normalizer.std.len() != k {
            return Err(ProbeError::Shape(format!(
                "probe has {} weights for {} DSN neurons",
                m.weights.len(),
                k
            )));
        }
        if !m.bias.is_finite() || m.weights.iter().any(|w| !w.is_finite()) {
            return Err(ProbeError::Shape("non-finite probe parameters".into()));
        }
        if m.normalizer.std.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(ProbeError::Shape("normalizer std must be positive".into()));
        }
        Ok(m)
    }
}

/// Free-function form of [`ProbeModel::predict_p_hard`].
pub fn predict_p_hard(model: &ProbeModel, activations: &[f32]) -> Result<f64, ProbeError> {
    model.predict_p_hard(activations)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeEvaluation {
    /// Fraction correct with predicted-hard iff `P ≥ 0.5`.
    pub accuracy: f64,
    pub mean_bce: f64,
    pub logits: Vec<f64>,
}

/// Accuracy, mean BCE and per-record logits against explicit 0/1 labels.
pub fn evaluate_probe<R: Borrow<ActivationRecord>>(
    model: &ProbeModel,
    records: &[R],
    labels: &[u8],
) -> Result<ProbeEvaluation, ProbeError> {
    if records.is_empty() {
        return Err(ProbeError::Empty);
    }
    if records.len() != labels.len() {
        return Err(ProbeError::Shape(format!("{} records vs {} labels", records.len(), labels.len())));
    }
    let logits = records
        .iter()
        .map(|r| model.logit(&r.borrow().activations))
        .collect::<Result<Vec<_>, _>>()?;
    let n = logits.len() as f64;
    let correct = logits
        .iter()
        .zip(labels)
        .filter(|(&z, &y)| u8::from(sigmoid(z) >= 0.5) == y)
        .count();
    let mean_bce = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| bce_from_logit(z, y))
        .collect::<CompensatedSum>()
        .total()
        / n;
    Ok(ProbeEvaluation {
        accuracy: correct as f64 / n,
        mean_bce,
        logits,
    })
}

/// [`evaluate_probe`] on the easy/hard subset of difficulty-labeled records.
pub fn evaluate_labeled(model: &ProbeModel, records: &[ActivationRecord]) -> Result<ProbeEvaluation, ProbeError> {
    let (kept, labels) = make_labels(records, model.dsn.config.theta_easy, model.dsn.config.theta_hard)?;
    evaluate_probe(model, &kept, &labels)
}
