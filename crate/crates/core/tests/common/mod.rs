//! Independent reference implementations shared by the integration tests and
//! the acceptance runner.
#![allow(dead_code, clippy::needless_range_loop)]

use gaitctl::fsm::FsmConfig;
use gaitctl::tcn::{Matrix, TcnWeights};
use gaitctl::GaitPhase;

/// Canonical order used by the reference scorer; Stance closes a step.
pub fn rank(p: GaitPhase) -> Option<usize> {
    match p {
        GaitPhase::TakeOff => Some(0),
        GaitPhase::Swing => Some(1),
        GaitPhase::Strike => Some(2),
        GaitPhase::Stance => Some(3),
        GaitPhase::Auxiliary => None,
    }
}

/// Longest strictly rank-increasing subsequence by enumerating every subset.
/// Only for short inputs.
pub fn brute_force_score(phases: &[GaitPhase]) -> usize {
    assert!(phases.len() <= 20, "exponential reference");
    let ranks: Vec<usize> = phases.iter().map(|p| rank(*p).expect("no auxiliary")).collect();
    let mut best = 0;
    for mask in 0u32..(1 << ranks.len()) {
        let picked: Vec<usize> = (0..ranks.len()).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).collect();
        if picked.windows(2).all(|w| w[0] < w[1]) {
            best = best.max(picked.len());
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefStep {
    pub start_us: u64,
    pub end_us: u64,
    pub raw: usize,
}

/// Straight-line restatement of the decoder contract, written without the
/// library's state types. Returns the emitted steps in order.
pub fn reference_decode(labels: &[GaitPhase], t: &[u64], cfg: &FsmConfig) -> Vec<RefStep> {
    struct Open {
        frame: usize,
        start_us: u64,
        phases: Vec<GaitPhase>,
        strike: bool,
    }
    let close = |open: Open, end_us: u64, out: &mut Vec<RefStep>| {
        let raw = brute_force_score(&open.phases);
        if raw as f64 / 4.0 >= cfg.alpha && end_us > open.start_us {
            out.push(RefStep {
                start_us: open.start_us,
                end_us,
                raw,
            });
        }
    };
    let mut out = Vec::new();
    let mut confirmed = GaitPhase::Stance;
    let mut run: Option<(GaitPhase, usize, usize)> = None; // phase, length, first frame
    let mut aux = 0usize;
    let mut open: Option<Open> = None;
    for i in 0..labels.len() {
        let p = labels[i];
        run = match run {
            Some((q, n, f)) if q == p => Some((q, n + 1, f)),
            _ => Some((p, 1, i)),
        };
        aux = if p == GaitPhase::Auxiliary { aux + 1 } else { 0 };
        let (rp, rn, rf) = run.unwrap();
        if rn == cfg.debounce_k && rp != confirmed {
            confirmed = rp;
            match rp {
                GaitPhase::TakeOff => {
                    if let Some(o) = open.take() {
                        close(o, t[i], &mut out);
                    }
                    open = Some(Open {
                        frame: rf,
                        start_us: t[rf],
                        phases: vec![GaitPhase::TakeOff],
                        strike: false,
                    });
                }
                GaitPhase::Auxiliary => {}
                other => {
                    if let Some(o) = open.as_mut() {
                        o.phases.push(other);
                        if other == GaitPhase::Strike {
                            o.strike = true;
                        }
                        if other == GaitPhase::Stance && o.strike {
                            close(open.take().unwrap(), t[i], &mut out);
                        }
                    }
                }
            }
        }
        if aux >= cfg.aux_reset_frames {
            open = None;
        }
        if open.as_ref().is_some_and(|o| i - o.frame > cfg.attempt_timeout_frames) {
            close(open.take().unwrap(), t[i], &mut out);
        }
    }
    if let (Some(o), Some(&last)) = (open, t.last()) {
        close(o, last, &mut out);
    }
    out
}

pub fn phase_of(i: usize) -> GaitPhase {
    GaitPhase::from_index(i).unwrap()
}

/// Decodes `index` into a base-5 phase sequence of length `len`.
pub fn sequence_from_index(mut index: usize, len: usize) -> Vec<GaitPhase> {
    (0..len)
        .map(|_| {
            let p = phase_of(index % 5);
            index /= 5;
            p
        })
        .collect()
}

/// Direct, loop-per-definition forward pass of the network for the last
/// frame of `x`, reading parameters through their public layouts.
pub fn naive_logits(w: &TcnWeights<f64>, x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let relu = |v: f64| v.max(0.0);
    let mut seq: Vec<Vec<f64>> = x.to_vec();
    for b in &w.blocks {
        let conv = |input: &Vec<Vec<f64>>, c: &gaitctl::tcn::Conv1d<f64>| -> Vec<Vec<f64>> {
            (0..n)
                .map(|t| {
                    (0..c.out_channels)
                        .map(|o| {
                            let mut s = c.bias[o];
                            for tap in 0..c.kernel_size {
                                let lag = tap * c.dilation;
                                if lag > t {
                                    continue;
                                }
                                for i in 0..c.in_channels {
                                    s += c.weight[(tap * c.in_channels + i) * c.out_channels + o] * input[t - lag][i];
                                }
                            }
                            s
                        })
                        .collect()
                })
                .collect()
        };
        let h1: Vec<Vec<f64>> = conv(&seq, &b.conv1).into_iter().map(|r| r.into_iter().map(relu).collect()).collect();
        let h2: Vec<Vec<f64>> = conv(&h1, &b.conv2).into_iter().map(|r| r.into_iter().map(relu).collect()).collect();
        seq = (0..n)
            .map(|t| {
                let res = match &b.projection {
                    Some(p) => dense(p, &seq[t]),
                    None => seq[t].clone(),
                };
                h2[t].iter().zip(res).map(|(a, r)| a + r).collect()
            })
            .collect();
    }
    let hidden: Vec<f64> = dense(&w.dense, &seq[n - 1]).into_iter().map(relu).collect();
    dense(&w.output, &hidden)
}

pub fn dense(d: &gaitctl::tcn::Dense<f64>, x: &[f64]) -> Vec<f64> {
    (0..d.out_features)
        .map(|o| d.bias[o] + (0..d.in_features).map(|i| d.weight[i * d.out_features + o] * x[i]).sum::<f64>())
        .collect()
}

pub fn matrix(rows: &[Vec<f64>]) -> Matrix<f64> {
    Matrix::from_rows(rows)
}

/// Layer family of a canonical parameter name, for per-type sampling.
pub fn layer_type(name: &str) -> &'static str {
    if name.contains("conv") {
        "conv"
    } else if name.contains("projection") {
        "projection"
    } else {
        "dense"
    }
}

/// Relative error used by the gradient checks; the floor keeps tiny
/// gradients from inflating the ratio.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub struct GradCheck {
    /// (layer type, parameters checked, worst relative error)
    pub per_type: Vec<(&'static str, usize, f64)>,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.per_type.iter().map(|t| t.2).fold(0.0, f64::max)
    }

    pub fn min_checked(&self) -> usize {
        self.per_type.iter().map(|t| t.1).min().unwrap_or(0)
    }
}

/// A labeled batch of random windows for `cfg`.
pub fn random_batch(h: usize, n: usize, seed: u64) -> Vec<gaitctl::types::WindowTensor> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| gaitctl::types::WindowTensor {
            data: (0..h)
                .map(|_| gaitctl::MeasurementVector(std::array::from_fn(|_| rng.random_range(-2.0..2.0))))
                .collect(),
            end_timestamp: i as u64,
            label: Some(phase_of(i % 5)),
        })
        .collect()
}

/// Central finite differences of the mean batch loss against the analytic
/// gradient, dropout off. `per_type = None` checks every parameter.
pub fn gradient_check(cfg: &gaitctl::TcnConfig, seed: u64, per_type: Option<usize>) -> GradCheck {
    use gaitctl::preprocess::{NormStats, PreprocessConfig};
    use gaitctl::tcn::{init_weights, loss_and_grad, TcnModel};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let h = 8;
    let window = gaitctl::WindowConfig {
        h,
        ..Default::default()
    };
    let mut model = TcnModel::new(
        cfg.clone(),
        init_weights(cfg, seed),
        NormStats::identity(),
        window,
        PreprocessConfig::default(),
    )
    .unwrap();
    // non-zero biases so every bias path is exercised
    {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
        let names: Vec<String> = model.weights.params().iter().map(|p| p.name.clone()).collect();
        for (name, slot) in names.iter().zip(model.weights.params_mut()) {
            if name.ends_with("bias") {
                for v in slot.iter_mut() {
                    *v = rng.random_range(-0.1..0.1);
                }
            }
        }
    }
    let batch = random_batch(h, 6, seed + 1);
    let loss = |m: &TcnModel| loss_and_grad::<rand_chacha::ChaCha8Rng>(m, &batch, None).unwrap().0;
    let (_, grads) = loss_and_grad::<rand_chacha::ChaCha8Rng>(&model, &batch, None).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.values.to_vec()))
        .collect();

    let mut coords: Vec<(&'static str, usize, usize)> = Vec::new();
    for (a, (name, vals)) in analytic.iter().enumerate() {
        for i in 0..vals.len() {
            coords.push((layer_type(name), a, i));
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9ad);
    let mut per: Vec<(&'static str, usize, f64)> = Vec::new();
    for ty in ["conv", "projection", "dense"] {
        let mut of_type: Vec<_> = coords.iter().filter(|c| c.0 == ty).copied().collect();
        if of_type.is_empty() {
            continue;
        }
        if let Some(n) = per_type {
            of_type.shuffle(&mut rng);
            of_type.truncate(n);
        }
        let eps = 1e-5;
        let mut worst = 0.0f64;
        for &(_, a, i) in &of_type {
            let orig = model.weights.params_mut()[a][i];
            model.weights.params_mut()[a][i] = orig + eps;
            let up = loss(&model);
            model.weights.params_mut()[a][i] = orig - eps;
            let down = loss(&model);
            model.weights.params_mut()[a][i] = orig;
            let fd = (up - down) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[a].1[i], fd));
        }
        per.push((ty, of_type.len(), worst));
    }
    GradCheck { per_type: per }
}
