//! Mini-batch Adam training with a session-level validation split and early
//! stopping on validation loss.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Matrix;
use super::network::{init_weights, TcnConfig, TcnWeights};
use super::{argmax, batch_loss_and_grad, cross_entropy, TcnModel, TrainingMeta};
use crate::error::{Error, Result};
use crate::preprocess::{fit_normalizer_rows, PreprocessConfig};
use crate::types::{GaitPhase, WindowConfig, WindowTensor, NUM_PHASES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 8.9e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("train.learning_rate must be > 0".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("train.validation_fraction must lie in (0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::Config("train: Adam betas must lie in [0, 1) and epsilon > 0".into()));
        }
        Ok(())
    }
}

/// Labeled windows from one recording session.
#[derive(Debug, Clone)]
pub struct SessionWindows {
    pub session_id: String,
    pub windows: Vec<WindowTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub train_sessions: Vec<String>,
    pub val_sessions: Vec<String>,
    pub best_epoch: Option<usize>,
}

impl TrainingHistory {
    pub fn write_csv_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy"])
            .map_err(crate::types::csv_err)?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.train_accuracy.to_string(),
                e.val_loss.to_string(),
                e.val_accuracy.to_string(),
            ])
            .map_err(crate::types::csv_err)?;
        }
        w.flush().map_err(Error::Net)?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(std::io::BufWriter::new(f))
    }
}

struct Adam {
    m: TcnWeights<f64>,
    v: TcnWeights<f64>,
    t: i32,
}

impl Adam {
    fn new(cfg: &TcnConfig) -> Self {
        Self {
            m: TcnWeights::zeros(cfg),
            v: TcnWeights::zeros(cfg),
            t: 0,
        }
    }

    fn step(&mut self, weights: &mut TcnWeights<f64>, grads: &mut TcnWeights<f64>, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = cfg.learning_rate;
        let layers = weights
            .params_mut()
            .into_iter()
            .zip(grads.params_mut())
            .zip(self.m.params_mut())
            .zip(self.v.params_mut());
        for (((w, g), m), v) in layers {
            for i in 0..w.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
                g[i] = 0.0;
            }
        }
    }
}

/// Splits session indices into (train, validation), shuffled by `seed`.
fn split_sessions(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5a17));
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

fn class_set<'a>(windows: impl Iterator<Item = &'a WindowTensor>) -> [bool; NUM_PHASES] {
    let mut seen = [false; NUM_PHASES];
    for w in windows {
        if let Some(l) = w.label {
            seen[l.index()] = true;
        }
    }
    seen
}

fn evaluate(weights: &TcnWeights<f64>, data: &[(Matrix<f64>, GaitPhase)]) -> (f64, f64) {
    if data.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, label) in data {
        let probs = super::layers::softmax(&weights.logits(x));
        loss += cross_entropy(&probs, *label);
        if argmax(&probs) == label.index() {
            correct += 1;
        }
    }
    let n = data.len() as f64;
    (loss / n, correct as f64 / n)
}

/// Trains a model on labeled windows grouped by session.
///
/// Normalization statistics are fitted on the training split only. The
/// returned weights are those with the lowest validation loss.
pub fn train(
    dataset: &[SessionWindows],
    cfg: &TrainConfig,
    arch: &TcnConfig,
    window: &WindowConfig,
    preprocess: &PreprocessConfig,
) -> Result<(TcnModel, TrainingHistory)> {
    cfg.validate()?;
    arch.validate()?;
    window.validate()?;
    if dataset.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 sessions for a session-level split, got {}",
            dataset.len()
        )));
    }
    for s in dataset {
        if let Some(w) = s.windows.iter().find(|w| w.label.is_none()) {
            return Err(Error::InsufficientData(format!(
                "session {} has an unlabeled window ending at {}",
                s.session_id, w.end_timestamp
            )));
        }
        if let Some(w) = s.windows.iter().find(|w| w.data.len() != window.h) {
            return Err(Error::Shape(format!(
                "session {} has a window of {} rows, expected {}",
                s.session_id,
                w.data.len(),
                window.h
            )));
        }
    }

    let (train_idx, val_idx) = split_sessions(dataset.len(), cfg.validation_fraction, cfg.seed);
    let train_windows = || train_idx.iter().flat_map(|&i| dataset[i].windows.iter());
    let present = class_set(dataset.iter().flat_map(|s| s.windows.iter()));
    let in_train = class_set(train_windows());
    let missing: Vec<&str> = GaitPhase::ALL
        .iter()
        .filter(|p| present[p.index()] && !in_train[p.index()])
        .map(|p| p.name())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingClass(missing.join(", ")));
    }
    if train_windows().next().is_none() {
        return Err(Error::InsufficientData("training split has no windows".into()));
    }

    let norm = fit_normalizer_rows(train_windows().flat_map(|w| w.data.iter()))?;
    let mut model = TcnModel::new(
        arch.clone(),
        init_weights(arch, cfg.seed),
        norm,
        *window,
        *preprocess,
    )?;
    let encode = |idx: &[usize]| -> Vec<(Matrix<f64>, GaitPhase)> {
        idx.iter()
            .flat_map(|&i| dataset[i].windows.iter())
            .map(|w| (model.normalized_matrix(&w.data), w.label.expect("checked above")))
            .collect()
    };
    let train_set = encode(&train_idx);
    let val_set = encode(&val_idx);
    log::info!(
        "training on {} windows ({} sessions), validating on {} windows ({} sessions)",
        train_set.len(),
        train_idx.len(),
        val_set.len(),
        val_idx.len()
    );

    let mut history = TrainingHistory {
        train_sessions: train_idx.iter().map(|&i| dataset[i].session_id.clone()).collect(),
        val_sessions: val_idx.iter().map(|&i| dataset[i].session_id.clone()).collect(),
        ..Default::default()
    };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut adam = Adam::new(arch);
    let mut grads = TcnWeights::zeros(arch);
    let mut best: Option<(f64, usize, TcnWeights<f64>)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Matrix<f64>, GaitPhase)> =
                chunk.iter().map(|&i| (&train_set[i].0, train_set[i].1)).collect();
            let dropout = (arch.spatial_dropout > 0.0).then_some(&mut dropout_rng);
            let (loss, c) = batch_loss_and_grad(&model.weights, arch.spatial_dropout, &batch, dropout, &mut grads);
            loss_sum += loss * chunk.len() as f64;
            correct += c;
            adam.step(&mut model.weights, &mut grads, cfg);
        }
        let n = train_set.len() as f64;
        let (val_loss, val_accuracy) = evaluate(&model.weights, &val_set);
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_accuracy,
        };
        log::info!(
            "epoch {epoch}: train_loss={:.4} train_acc={:.4} val_loss={:.4} val_acc={:.4}",
            record.train_loss,
            record.train_accuracy,
            val_loss,
            val_accuracy
        );
        history.epochs.push(record);
        if !model.weights.is_finite() {
            return Err(Error::InsufficientData(format!("training diverged at epoch {epoch}")));
        }
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, model.weights.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }

    let epochs_run = history.epochs.len();
    let (final_val_loss, best_epoch) = match best {
        Some((loss, epoch, weights)) => {
            model.weights = weights;
            (Some(loss), epoch)
        }
        None => (None, 0),
    };
    history.best_epoch = (best_epoch > 0).then_some(best_epoch);
    model.meta = TrainingMeta {
        seed: cfg.seed,
        epochs_run,
        best_epoch,
        final_val_loss,
    };
    Ok((model, history))
}
