//! TCN architecture: residual blocks of two causal dilated convolutions,
//! a last-time-step read-out, a hidden dense layer and a softmax head.
//!
//! ```text
//! x ─► conv(d) ─► ReLU ─► dropout ─► conv(d) ─► ReLU ─► dropout ─► (+) ─► y
//! └──────────────── 1×1 projection when channels differ ───────────┘
//! ```

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{axpy, dot, softmax, Conv1d, Dense, Matrix};
use crate::error::{Error, Result};
use crate::types::{NUM_CHANNELS, NUM_PHASES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TcnConfig {
    pub input_channels: usize,
    pub num_blocks: usize,
    pub channels_per_block: usize,
    pub kernel_size: usize,
    /// One dilation per block, shared by both convolutions of the block.
    pub dilations: Vec<usize>,
    pub spatial_dropout: f64,
    pub dense_units: usize,
    pub num_classes: usize,
}

impl Default for TcnConfig {
    fn default() -> Self {
        Self {
            input_channels: NUM_CHANNELS,
            num_blocks: 2,
            channels_per_block: 96,
            kernel_size: 2,
            dilations: vec![1, 2],
            spatial_dropout: 0.255,
            dense_units: 96,
            num_classes: NUM_PHASES,
        }
    }
}

impl TcnConfig {
    /// `1 + Σ (k−1)·d` over every convolution.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .dilations
            .iter()
            .map(|d| 2 * (self.kernel_size.saturating_sub(1)) * d)
            .sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_channels", self.input_channels),
            ("num_blocks", self.num_blocks),
            ("channels_per_block", self.channels_per_block),
            ("kernel_size", self.kernel_size),
            ("dense_units", self.dense_units),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("tcn.{name} must be >= 1")));
        }
        if self.dilations.len() != self.num_blocks || self.dilations.contains(&0) {
            return Err(Error::Config(format!(
                "tcn.dilations needs {} entries, all >= 1",
                self.num_blocks
            )));
        }
        if !(0.0..1.0).contains(&self.spatial_dropout) {
            return Err(Error::Config("tcn.spatial_dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Trainable parameter count implied by `cfg`, from layer shapes alone.
pub fn param_count(cfg: &TcnConfig) -> usize {
    let c = cfg.channels_per_block;
    let k = cfg.kernel_size;
    let mut total = 0;
    let mut in_ch = cfg.input_channels;
    for _ in 0..cfg.num_blocks {
        total += in_ch * c * k + c; // conv1
        total += c * c * k + c; // conv2
        if in_ch != c {
            total += in_ch * c + c; // 1×1 projection
        }
        in_ch = c;
    }
    total += c * cfg.dense_units + cfg.dense_units;
    total += cfg.dense_units * cfg.num_classes + cfg.num_classes;
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<T> {
    pub conv1: Conv1d<T>,
    pub conv2: Conv1d<T>,
    pub projection: Option<Dense<T>>,
}

/// All trainable parameters. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct TcnWeights<T = f64> {
    pub blocks: Vec<ResidualBlock<T>>,
    pub dense: Dense<T>,
    pub output: Dense<T>,
}

/// Named, shaped view of one parameter array.
pub struct ParamView<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: &'a [T],
}

impl<T: Float> TcnWeights<T> {
    pub fn zeros(cfg: &TcnConfig) -> Self {
        let c = cfg.channels_per_block;
        let mut in_ch = cfg.input_channels;
        let blocks = cfg
            .dilations
            .iter()
            .map(|&d| {
                let block = ResidualBlock {
                    conv1: Conv1d::zeros(in_ch, c, cfg.kernel_size, d),
                    conv2: Conv1d::zeros(c, c, cfg.kernel_size, d),
                    projection: (in_ch != c).then(|| Dense::zeros(in_ch, c)),
                };
                in_ch = c;
                block
            })
            .collect();
        Self {
            blocks,
            dense: Dense::zeros(c, cfg.dense_units),
            output: Dense::zeros(cfg.dense_units, cfg.num_classes),
        }
    }

    /// Parameter arrays in canonical order. Conv weights are `[tap, in, out]`,
    /// dense weights `[in, out]`.
    pub fn params(&self) -> Vec<ParamView<'_, T>> {
        let mut v = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            for (tag, conv) in [("conv1", &block.conv1), ("conv2", &block.conv2)] {
                v.push(ParamView {
                    name: format!("block{b}.{tag}.weight"),
                    shape: vec![conv.kernel_size, conv.in_channels, conv.out_channels],
                    values: &conv.weight,
                });
                v.push(ParamView {
                    name: format!("block{b}.{tag}.bias"),
                    shape: vec![conv.out_channels],
                    values: &conv.bias,
                });
            }
            if let Some(p) = &block.projection {
                push_dense(&mut v, format!("block{b}.projection"), p);
            }
        }
        push_dense(&mut v, "dense".into(), &self.dense);
        push_dense(&mut v, "output".into(), &self.output);
        v
    }

    /// Mutable parameter slices in the same order as [`params`](Self::params).
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut v: Vec<&mut [T]> = Vec::new();
        for block in &mut self.blocks {
            v.push(&mut block.conv1.weight);
            v.push(&mut block.conv1.bias);
            v.push(&mut block.conv2.weight);
            v.push(&mut block.conv2.bias);
            if let Some(p) = &mut block.projection {
                v.push(&mut p.weight);
                v.push(&mut p.bias);
            }
        }
        v.push(&mut self.dense.weight);
        v.push(&mut self.dense.bias);
        v.push(&mut self.output.weight);
        v.push(&mut self.output.bias);
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.values.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.values.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Float>(&self) -> TcnWeights<U> {
        let conv = |c: &Conv1d<T>| Conv1d {
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            kernel_size: c.kernel_size,
            dilation: c.dilation,
            weight: c.weight.iter().map(|&v| U::from(v).unwrap()).collect(),
            bias: c.bias.iter().map(|&v| U::from(v).unwrap()).collect(),
        };
        let dense = |d: &Dense<T>| Dense {
            in_features: d.in_features,
            out_features: d.out_features,
            weight: d.weight.iter().map(|&v| U::from(v).unwrap()).collect(),
            bias: d.bias.iter().map(|&v| U::from(v).unwrap()).collect(),
        };
        TcnWeights {
            blocks: self
                .blocks
                .iter()
                .map(|b| ResidualBlock {
                    conv1: conv(&b.conv1),
                    conv2: conv(&b.conv2),
                    projection: b.projection.as_ref().map(dense),
                })
                .collect(),
            dense: dense(&self.dense),
            output: dense(&self.output),
        }
    }
}

fn push_dense<'a, T>(v: &mut Vec<ParamView<'a, T>>, prefix: String, d: &'a Dense<T>) {
    v.push(ParamView {
        name: format!("{prefix}.weight"),
        shape: vec![d.in_features, d.out_features],
        values: &d.weight,
    });
    v.push(ParamView {
        name: format!("{prefix}.bias"),
        shape: vec![d.out_features],
        values: &d.bias,
    });
}

/// He-uniform weights (bound `√(6/fan_in)`), zero biases; deterministic in `seed`.
pub fn init_weights(cfg: &TcnConfig, seed: u64) -> TcnWeights<f64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut w = TcnWeights::<f64>::zeros(cfg);
    let mut fill = |values: &mut [f64], fan_in: usize| {
        let bound = (6.0 / fan_in as f64).sqrt();
        for v in values {
            *v = rng.random_range(-bound..bound);
        }
    };
    for block in &mut w.blocks {
        for conv in [&mut block.conv1, &mut block.conv2] {
            let fan_in = conv.in_channels * conv.kernel_size;
            fill(&mut conv.weight, fan_in);
        }
        if let Some(p) = &mut block.projection {
            let fan_in = p.in_features;
            fill(&mut p.weight, fan_in);
        }
    }
    let fan_in = w.dense.in_features;
    fill(&mut w.dense.weight, fan_in);
    let fan_in = w.output.in_features;
    fill(&mut w.output.weight, fan_in);
    w
}

/// Which time steps each layer must produce for a given set of final outputs.
#[derive(Debug, Clone)]
pub(crate) struct BlockRows {
    /// Rows of conv1's output.
    pub mid: Vec<bool>,
    /// Rows of conv2's output and of the block output.
    pub out: Vec<bool>,
}

fn dilate(rows: &[bool], kernel_size: usize, dilation: usize) -> Vec<bool> {
    let mut need = vec![false; rows.len()];
    for (t, _) in rows.iter().enumerate().filter(|(_, r)| **r) {
        for tap in 0..kernel_size {
            if let Some(src) = t.checked_sub(tap * dilation) {
                need[src] = true;
            }
        }
    }
    need
}

pub(crate) fn needed_rows(cfg_blocks: &[(usize, usize)], len: usize, last_only: bool) -> Vec<BlockRows> {
    let mut out_rows = vec![!last_only; len];
    if last_only && len > 0 {
        out_rows[len - 1] = true;
    }
    let mut plan = Vec::with_capacity(cfg_blocks.len());
    for &(k, d) in cfg_blocks.iter().rev() {
        let mid = dilate(&out_rows, k, d);
        let input = dilate(&mid, k, d);
        plan.push(BlockRows { mid, out: out_rows });
        out_rows = input;
    }
    plan.reverse();
    plan
}

/// Spatial dropout: whole channels zeroed with probability `p`, survivors
/// scaled by `1/(1−p)`.
pub fn spatial_dropout_mask<R: Rng + ?Sized>(channels: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..channels)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

#[derive(Debug, Clone)]
pub(crate) struct BlockCache<T> {
    pub input: Matrix<T>,
    pub pre1: Matrix<T>,
    pub mask1: Option<Vec<T>>,
    pub act1: Matrix<T>,
    pub pre2: Matrix<T>,
    pub mask2: Option<Vec<T>>,
}

/// Activations retained for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub(crate) blocks: Vec<BlockCache<T>>,
    pub(crate) rows: Vec<BlockRows>,
    pub(crate) features: Vec<T>,
    pub(crate) hidden_pre: Vec<T>,
    pub(crate) hidden: Vec<T>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

fn relu_masked<T: Float>(pre: &Matrix<T>, rows: &[bool], mask: Option<&[T]>) -> Matrix<T> {
    let mut act = Matrix::zeros(pre.rows, pre.cols);
    for t in (0..pre.rows).filter(|&t| rows[t]) {
        let src = pre.row(t);
        let dst = act.row_mut(t);
        for c in 0..pre.cols {
            let v = src[c].max(T::zero());
            dst[c] = match mask {
                Some(m) => v * m[c],
                None => v,
            };
        }
    }
    act
}

impl<T: Float> TcnWeights<T> {
    fn block_dims(&self) -> Vec<(usize, usize)> {
        self.blocks
            .iter()
            .map(|b| (b.conv1.kernel_size, b.conv1.dilation))
            .collect()
    }

    fn run_blocks<R: Rng + ?Sized>(
        &self,
        input: &Matrix<T>,
        rows: &[BlockRows],
        mut dropout: Option<(&mut R, f64)>,
    ) -> (Vec<BlockCache<T>>, Matrix<T>) {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut x = input.clone();
        for (block, r) in self.blocks.iter().zip(rows) {
            let c = block.conv1.out_channels;
            let mut draw = || -> Option<Vec<T>> {
                dropout.as_mut().map(|(rng, p)| {
                    spatial_dropout_mask(c, *p, &mut **rng)
                        .into_iter()
                        .map(|v| T::from(v).unwrap())
                        .collect()
                })
            };
            let mask1 = draw();
            let mask2 = draw();
            let pre1 = block.conv1.forward_rows(&x, Some(&r.mid));
            let act1 = relu_masked(&pre1, &r.mid, mask1.as_deref());
            let pre2 = block.conv2.forward_rows(&act1, Some(&r.out));
            let mut y = relu_masked(&pre2, &r.out, mask2.as_deref());
            for t in (0..x.rows).filter(|&t| r.out[t]) {
                match &block.projection {
                    Some(p) => {
                        let res = p.forward(x.row(t));
                        for (yv, rv) in y.row_mut(t).iter_mut().zip(res) {
                            *yv = *yv + rv;
                        }
                    }
                    None => {
                        for (yv, &xv) in y.row_mut(t).iter_mut().zip(x.row(t)) {
                            *yv = *yv + xv;
                        }
                    }
                }
            }
            caches.push(BlockCache {
                input: x,
                pre1,
                mask1,
                act1,
                pre2,
                mask2,
            });
            x = y;
        }
        (caches, x)
    }

    fn head(&self, features: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let hidden_pre = self.dense.forward(features);
        let hidden: Vec<T> = hidden_pre.iter().map(|v| v.max(T::zero())).collect();
        let logits = self.output.forward(&hidden);
        (hidden_pre, hidden, logits)
    }

    /// Forward pass on one (already normalized) window, reading out the last
    /// time step. Dropout is applied only when `dropout` is given.
    pub fn forward_cached<R: Rng + ?Sized>(
        &self,
        input: &Matrix<T>,
        dropout: Option<(&mut R, f64)>,
    ) -> ForwardCache<T> {
        let rows = needed_rows(&self.block_dims(), input.rows, true);
        let (blocks, y) = self.run_blocks(input, &rows, dropout);
        let features = y.row(y.rows - 1).to_vec();
        let (hidden_pre, hidden, logits) = self.head(&features);
        let probs = softmax(&logits);
        ForwardCache {
            blocks,
            rows,
            features,
            hidden_pre,
            hidden,
            logits,
            probs,
        }
    }

    /// Inference-mode logits for the last time step.
    pub fn logits(&self, input: &Matrix<T>) -> Vec<T> {
        self.forward_cached::<rand_chacha::ChaCha8Rng>(input, None).logits
    }

    /// Inference-mode logits for every time step (full causal sequence).
    pub fn sequence_logits(&self, input: &Matrix<T>) -> Matrix<T> {
        let rows = needed_rows(&self.block_dims(), input.rows, false);
        let (_, y) = self.run_blocks::<rand_chacha::ChaCha8Rng>(input, &rows, None);
        let mut out = Matrix::zeros(input.rows, self.output.out_features);
        for t in 0..y.rows {
            let (_, _, logits) = self.head(y.row(t));
            out.row_mut(t).copy_from_slice(&logits);
        }
        out
    }
}

impl TcnWeights<f64> {
    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂logits`.
    pub fn backward(&self, cache: &ForwardCache<f64>, dlogits: &[f64], grads: &mut TcnWeights<f64>) {
        // output layer
        let mut dhidden = vec![0.0; self.output.in_features];
        for (i, &h) in cache.hidden.iter().enumerate() {
            if h != 0.0 {
                let g = &mut grads.output.weight[i * self.output.out_features..(i + 1) * self.output.out_features];
                axpy(h, dlogits, g);
            }
            dhidden[i] = dot(self.output.input_row(i), dlogits);
        }
        axpy(1.0, dlogits, &mut grads.output.bias);

        // hidden dense + ReLU
        let dpre: Vec<f64> = dhidden
            .iter()
            .zip(&cache.hidden_pre)
            .map(|(&d, &p)| if p > 0.0 { d } else { 0.0 })
            .collect();
        let mut dfeat = vec![0.0; self.dense.in_features];
        for (i, &f) in cache.features.iter().enumerate() {
            if f != 0.0 {
                let g = &mut grads.dense.weight[i * self.dense.out_features..(i + 1) * self.dense.out_features];
                axpy(f, &dpre, g);
            }
            dfeat[i] = dot(self.dense.input_row(i), &dpre);
        }
        axpy(1.0, &dpre, &mut grads.dense.bias);

        let last = cache.blocks[0].input.rows - 1;
        let width = self.dense.in_features;
        let mut dy = Matrix::zeros(last + 1, width);
        dy.row_mut(last).copy_from_slice(&dfeat);

        for ((block, bc), (gblock, rows)) in self
            .blocks
            .iter()
            .zip(&cache.blocks)
            .zip(grads.blocks.iter_mut().zip(&cache.rows))
            .rev()
        {
            let mut dx = Matrix::zeros(bc.input.rows, bc.input.cols);
            // residual path
            for t in (0..dy.rows).filter(|&t| rows.out[t]) {
                let g = dy.row(t);
                match (&block.projection, &mut gblock.projection) {
                    (Some(p), Some(gp)) => {
                        let x = bc.input.row(t);
                        for (i, &xi) in x.iter().enumerate() {
                            if xi != 0.0 {
                                axpy(xi, g, &mut gp.weight[i * p.out_features..(i + 1) * p.out_features]);
                            }
                        }
                        axpy(1.0, g, &mut gp.bias);
                        let dxr = dx.row_mut(t);
                        for (i, d) in dxr.iter_mut().enumerate() {
                            *d += dot(p.input_row(i), g);
                        }
                    }
                    _ => axpy(1.0, g, dx.row_mut(t)),
                }
            }
            // conv2 ← ReLU/dropout
            let dpre2 = relu_dropout_grad(&dy, &bc.pre2, bc.mask2.as_deref(), &rows.out);
            let dact1 = conv_backward(&block.conv2, &mut gblock.conv2, &bc.act1, &dpre2, &rows.out);
            let dpre1 = relu_dropout_grad(&dact1, &bc.pre1, bc.mask1.as_deref(), &rows.mid);
            let dxin = conv_backward(&block.conv1, &mut gblock.conv1, &bc.input, &dpre1, &rows.mid);
            for (a, b) in dx.data.iter_mut().zip(&dxin.data) {
                *a += b;
            }
            dy = dx;
        }
    }
}

fn relu_dropout_grad(dact: &Matrix<f64>, pre: &Matrix<f64>, mask: Option<&[f64]>, rows: &[bool]) -> Matrix<f64> {
    let mut d = Matrix::zeros(pre.rows, pre.cols);
    for t in (0..pre.rows).filter(|&t| rows[t]) {
        let (g, p, out) = (dact.row(t), pre.row(t), &mut d.data[t * pre.cols..(t + 1) * pre.cols]);
        for c in 0..pre.cols {
            if p[c] > 0.0 {
                out[c] = match mask {
                    Some(m) => g[c] * m[c],
                    None => g[c],
                };
            }
        }
    }
    d
}

/// Backward through a causal conv: accumulates weight/bias gradients and
/// returns the gradient with respect to its input.
fn conv_backward(
    conv: &Conv1d<f64>,
    grad: &mut Conv1d<f64>,
    input: &Matrix<f64>,
    dout: &Matrix<f64>,
    rows: &[bool],
) -> Matrix<f64> {
    let mut dx = Matrix::zeros(input.rows, input.cols);
    let oc = conv.out_channels;
    for t in (0..dout.rows).filter(|&t| rows[t]) {
        let g = dout.row(t);
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        axpy(1.0, g, &mut grad.bias);
        for tap in 0..conv.kernel_size {
            let lag = tap * conv.dilation;
            if lag > t {
                break;
            }
            let src = t - lag;
            let x = input.row(src);
            for (i, &xi) in x.iter().enumerate() {
                let start = (tap * conv.in_channels + i) * oc;
                if xi != 0.0 {
                    axpy(xi, g, &mut grad.weight[start..start + oc]);
                }
                dx.data[src * input.cols + i] += dot(&conv.weight[start..start + oc], g);
            }
        }
    }
    dx
}
