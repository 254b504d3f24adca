//! The gait-phase classifier: a causal dilated temporal convolutional network
//! with its training loop, session-level inference and model file format.

mod io;
pub mod layers;
mod network;
mod train;

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use io::{load_model, save_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use layers::{dilated_causal_conv, softmax, Conv1d, Dense, Matrix};
pub use network::{
    init_weights, param_count, spatial_dropout_mask, ForwardCache, ParamView, ResidualBlock, TcnConfig,
    TcnWeights,
};
pub use train::{train, EpochRecord, SessionWindows, TrainConfig, TrainingHistory};

use crate::error::{Error, Result};
use crate::preprocess::{preprocess_session, NormStats, PreprocessConfig};
use crate::types::{GaitPhase, MeasurementVector, SessionRecording, WindowConfig, WindowTensor, NUM_PHASES};

/// Probabilities are clipped to this floor before taking the log.
pub const LOSS_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub final_val_loss: Option<f64>,
}

/// Architecture, weights, input statistics and the preprocessing and window
/// settings the weights were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct TcnModel {
    pub config: TcnConfig,
    pub weights: TcnWeights<f64>,
    pub norm: NormStats,
    pub window: WindowConfig,
    pub preprocess: PreprocessConfig,
    pub meta: TrainingMeta,
}

/// Whether dropout is active in a forward pass.
pub enum Mode<'a, R: Rng + ?Sized> {
    Infer,
    Train(&'a mut R),
}

impl TcnModel {
    pub fn new(
        config: TcnConfig,
        weights: TcnWeights<f64>,
        norm: NormStats,
        window: WindowConfig,
        preprocess: PreprocessConfig,
    ) -> Result<Self> {
        config.validate()?;
        window.validate()?;
        if window.h < config.receptive_field() {
            return Err(Error::Config(format!(
                "window h={} is shorter than the receptive field {}",
                window.h,
                config.receptive_field()
            )));
        }
        Ok(Self {
            config,
            weights,
            norm,
            window,
            preprocess,
            meta: TrainingMeta {
                seed: 0,
                epochs_run: 0,
                best_epoch: 0,
                final_val_loss: None,
            },
        })
    }

    pub fn normalized_matrix(&self, rows: &[MeasurementVector]) -> Matrix<f64> {
        let normed: Vec<[f64; 9]> = rows.iter().map(|r| self.norm.apply_row(r).0).collect();
        Matrix::from_rows(&normed)
    }

    fn check_window(&self, window: &WindowTensor) -> Result<()> {
        if window.data.len() != self.window.h {
            return Err(Error::Shape(format!(
                "window has {} rows, model expects {}",
                window.data.len(),
                self.window.h
            )));
        }
        Ok(())
    }

    /// Class probabilities for one raw (unnormalized) window.
    pub fn forward<R: Rng + ?Sized>(&self, window: &WindowTensor, mode: Mode<'_, R>) -> Result<[f64; NUM_PHASES]> {
        self.check_window(window)?;
        let x = self.normalized_matrix(&window.data);
        let probs = match mode {
            Mode::Infer => self.weights.forward_cached::<R>(&x, None).probs,
            Mode::Train(rng) => {
                self.weights
                    .forward_cached(&x, Some((rng, self.config.spatial_dropout)))
                    .probs
            }
        };
        Ok(to_array(&probs))
    }

    pub fn predict(&self, window: &WindowTensor) -> Result<[f64; NUM_PHASES]> {
        self.forward::<rand_chacha::ChaCha8Rng>(window, Mode::Infer)
    }

    /// Inference on `rows` (raw measurement vectors) in single precision.
    pub fn predict_f32(&self, rows: &[MeasurementVector]) -> [f32; NUM_PHASES] {
        let w32: TcnWeights<f32> = self.weights.cast();
        let normed: Vec<[f32; 9]> = rows
            .iter()
            .map(|r| self.norm.apply_row(r).0.map(|v| v as f32))
            .collect();
        let x = Matrix::from_rows(&normed);
        let p = softmax(&w32.logits(&x));
        let mut out = [0.0; NUM_PHASES];
        out.copy_from_slice(&p);
        out
    }
}

fn to_array<T: Float>(v: &[T]) -> [T; NUM_PHASES] {
    let mut out = [T::zero(); NUM_PHASES];
    out.copy_from_slice(&v[..NUM_PHASES]);
    out
}

pub fn argmax(probs: &[f64]) -> usize {
    probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

pub fn cross_entropy(probs: &[f64], label: GaitPhase) -> f64 {
    -probs[label.index()].max(LOSS_CLAMP).ln()
}

/// Mean cross-entropy over `batch` (already-normalized inputs) and its
/// gradient. Dropout is active iff `dropout_rng` is given.
pub(crate) fn batch_loss_and_grad<R: Rng + ?Sized>(
    weights: &TcnWeights<f64>,
    dropout_p: f64,
    batch: &[(&Matrix<f64>, GaitPhase)],
    mut dropout_rng: Option<&mut R>,
    grads: &mut TcnWeights<f64>,
) -> (f64, usize) {
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    for &(x, label) in batch {
        let cache = match dropout_rng.as_deref_mut() {
            Some(rng) => weights.forward_cached(x, Some((rng, dropout_p))),
            None => weights.forward_cached::<R>(x, None),
        };
        loss += cross_entropy(&cache.probs, label);
        if argmax(&cache.probs) == label.index() {
            correct += 1;
        }
        let mut dlogits: Vec<f64> = cache.probs.iter().map(|p| p * scale).collect();
        dlogits[label.index()] -= scale;
        weights.backward(&cache, &dlogits, grads);
    }
    (loss * scale, correct)
}

/// Mean categorical cross-entropy of `batch` and `∂loss/∂weights`.
pub fn loss_and_grad<R: Rng + ?Sized>(
    model: &TcnModel,
    batch: &[WindowTensor],
    dropout_rng: Option<&mut R>,
) -> Result<(f64, TcnWeights<f64>)> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    let mut inputs = Vec::with_capacity(batch.len());
    for w in batch {
        model.check_window(w)?;
        let label = w
            .label
            .ok_or_else(|| Error::InsufficientData("unlabeled window in batch".into()))?;
        inputs.push((model.normalized_matrix(&w.data), label));
    }
    let refs: Vec<(&Matrix<f64>, GaitPhase)> = inputs.iter().map(|(m, l)| (m, *l)).collect();
    let mut grads = TcnWeights::zeros(&model.config);
    let (loss, _) = batch_loss_and_grad(
        &model.weights,
        model.config.spatial_dropout,
        &refs,
        dropout_rng,
        &mut grads,
    );
    Ok((loss, grads))
}

/// One per-frame classifier output.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePrediction {
    pub t_us: u64,
    pub probs: [f64; NUM_PHASES],
    pub phase: GaitPhase,
    /// Fewer than `h` frames were available; phase is Stance by convention.
    pub warmup: bool,
}

impl FramePrediction {
    pub fn warmup(t_us: u64) -> Self {
        Self {
            t_us,
            probs: [1.0 / NUM_PHASES as f64; NUM_PHASES],
            phase: GaitPhase::Stance,
            warmup: true,
        }
    }

    pub fn from_probs(t_us: u64, probs: [f64; NUM_PHASES]) -> Self {
        Self {
            t_us,
            probs,
            phase: GaitPhase::ALL[argmax(&probs)],
            warmup: false,
        }
    }
}

/// Frame-dense predictions: stride-1 windows ending at every frame from
/// `h−1` on; earlier frames are warm-up.
pub fn predict_session(model: &TcnModel, session: &SessionRecording) -> Result<Vec<FramePrediction>> {
    let h = model.window.h;
    if session.len() < h {
        return Err(Error::SessionTooShort {
            len: session.len(),
            needed: h,
        });
    }
    let vectors = preprocess_session(session, &model.preprocess, model.window.sample_rate_hz)?;
    let normed: Vec<[f64; 9]> = vectors.iter().map(|r| model.norm.apply_row(r).0).collect();
    let mut out = Vec::with_capacity(session.len());
    for (i, s) in session.samples.iter().enumerate() {
        if i + 1 < h {
            out.push(FramePrediction::warmup(s.t_us));
            continue;
        }
        let x = Matrix::from_rows(&normed[i + 1 - h..=i]);
        let probs = softmax(&model.weights.logits(&x));
        out.push(FramePrediction::from_probs(s.t_us, to_array(&probs)));
    }
    Ok(out)
}
