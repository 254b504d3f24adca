//! Causal conversion of raw IMU samples into nine-channel measurement vectors,
//! plus windowing and per-channel standardization.
//!
//! Per frame: the orientation quaternion is normalized, body acceleration is
//! rotated into the global frame with gravity subtracted, angular velocity is
//! passed through a Butterworth low-pass, and Euler angles are read from the
//! orientation. Every stage depends only on the current and past frames.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quat::Quaternion;
use crate::types::{
    GaitPhase, MeasurementVector, RawImuSample, SessionRecording, WindowConfig, WindowTensor,
    NUM_CHANNELS,
};

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.80665;

/// Euler-angle extraction order. Both are intrinsic; the output triple is
/// always (rotation about z, about y, about x).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EulerConvention {
    /// `R = Rz(ψ)·Ry(θ)·Rx(φ)` (yaw-pitch-roll).
    #[default]
    Zyx,
    /// `R = Rx(φ)·Ry(θ)·Rz(ψ)`.
    Xyz,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub cutoff_hz: f64,
    pub filter_order: usize,
    pub euler: EulerConvention,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            cutoff_hz: 5.0,
            filter_order: 2,
            euler: EulerConvention::Zyx,
        }
    }
}

pub fn quat_normalize(q: Quaternion) -> Result<Quaternion> {
    let norm = q.norm();
    if !norm.is_finite() || norm <= 1e-9 {
        return Err(Error::DegenerateOrientation { norm });
    }
    Ok(q.scale(1.0 / norm))
}

// (−π, π]
fn wrap_angle(a: f64) -> f64 {
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

/// Returns `[ψ, θ, φ]` for a unit quaternion using the ZYX convention.
pub fn quat_to_euler(q: Quaternion) -> [f64; 3] {
    quat_to_euler_with(q, EulerConvention::Zyx)
}

/// At gimbal lock (`cos θ` below 1e-9) roll is set to 0 and the remaining
/// rotation about the vertical is assigned to ψ.
pub fn quat_to_euler_with(q: Quaternion, convention: EulerConvention) -> [f64; 3] {
    let m = q.to_matrix();
    match convention {
        EulerConvention::Zyx => {
            let cos_pitch = m[0][0].hypot(m[1][0]);
            let pitch = (-m[2][0]).atan2(cos_pitch);
            if cos_pitch < 1e-9 {
                let yaw = (-m[0][1]).atan2(m[1][1]);
                [wrap_angle(yaw), pitch, 0.0]
            } else {
                let yaw = m[1][0].atan2(m[0][0]);
                let roll = m[2][1].atan2(m[2][2]);
                [wrap_angle(yaw), pitch, wrap_angle(roll)]
            }
        }
        EulerConvention::Xyz => {
            let cos_y = m[0][0].hypot(m[0][1]);
            let about_y = m[0][2].atan2(cos_y);
            if cos_y < 1e-9 {
                let about_z = m[1][0].atan2(m[1][1]);
                [wrap_angle(about_z), about_y, 0.0]
            } else {
                let about_z = (-m[0][1]).atan2(m[0][0]);
                let about_x = (-m[1][2]).atan2(m[2][2]);
                [wrap_angle(about_z), about_y, wrap_angle(about_x)]
            }
        }
    }
}

/// `R(q)·a_body − (0, 0, g)`.
pub fn remove_gravity(a_body: [f64; 3], q: Quaternion) -> [f64; 3] {
    let a = q.rotate(a_body);
    [a[0], a[1], a[2] - GRAVITY]
}

/// Second- or first-order filter section, DF-I.
/// Transfer function `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn is_stable(&self) -> bool {
        let [a1, a2] = self.a;
        a2.abs() < 1.0 && a1.abs() < 1.0 + a2
    }

    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }
}

/// Butterworth low-pass coefficients by bilinear transform with pre-warping,
/// realized as a cascade of sections.
pub fn butterworth_lowpass(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<Vec<Biquad>> {
    if order == 0 {
        return Err(Error::Config("filter order must be >= 1".into()));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < 0.5 * sample_rate_hz) {
        return Err(Error::Config(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, {}) Hz",
            0.5 * sample_rate_hz
        )));
    }
    let k = (PI * cutoff_hz / sample_rate_hz).tan();
    let k2 = k * k;
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for i in 0..order / 2 {
        // pole pair angle measured from the negative real axis; odd orders
        // also have a real pole, which shifts the pairs by half a step
        let theta = (2 * i + 1 + order % 2) as f64 * PI / (2 * order) as f64;
        let inv_q = 2.0 * theta.cos();
        let norm = 1.0 / (1.0 + k * inv_q + k2);
        let b0 = k2 * norm;
        sections.push(Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k2 - 1.0) * norm, (1.0 - k * inv_q + k2) * norm],
        });
    }
    if order % 2 == 1 {
        let norm = 1.0 / (1.0 + k);
        sections.push(Biquad {
            b: [k * norm, k * norm, 0.0],
            a: [(k - 1.0) * norm, 0.0],
        });
    }
    if let Some(bad) = sections.iter().find(|s| !s.is_stable()) {
        return Err(Error::Config(format!("unstable filter section {bad:?}")));
    }
    Ok(sections)
}

// x1, x2, y1, y2
type SectionMemory = [f64; 4];

/// Filter memory for the three gyro channels.
#[derive(Debug, Clone, PartialEq)]
pub struct LowPassState {
    sections: Vec<Biquad>,
    memory: [Vec<SectionMemory>; 3],
    initialized: bool,
}

impl LowPassState {
    pub fn new(sections: Vec<Biquad>) -> Self {
        let n = sections.len();
        Self {
            sections,
            memory: [vec![[0.0; 4]; n], vec![[0.0; 4]; n], vec![[0.0; 4]; n]],
            initialized: false,
        }
    }

    pub fn butterworth(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        Ok(Self::new(butterworth_lowpass(order, cutoff_hz, sample_rate_hz)?))
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Filter one sample. The first call primes the memory as if the input
    /// had been constant forever, so the first output equals the first input.
    pub fn step(&mut self, omega: [f64; 3]) -> [f64; 3] {
        if !self.initialized {
            for (ch, mem) in self.memory.iter_mut().enumerate() {
                let mut level = omega[ch];
                for (m, s) in mem.iter_mut().zip(&self.sections) {
                    let out = level * s.dc_gain();
                    *m = [level, level, out, out];
                    level = out;
                }
            }
            self.initialized = true;
        }
        let mut out = [0.0; 3];
        for (ch, mem) in self.memory.iter_mut().enumerate() {
            let mut x = omega[ch];
            for (m, s) in mem.iter_mut().zip(&self.sections) {
                let y = s.b[0] * x + s.b[1] * m[0] + s.b[2] * m[1] - s.a[0] * m[2] - s.a[1] * m[3];
                *m = [x, m[0], y, m[2]];
                x = y;
            }
            out[ch] = x;
        }
        out
    }
}

/// Functional form of [`LowPassState::step`].
pub fn lowpass_step(mut state: LowPassState, omega: [f64; 3]) -> (LowPassState, [f64; 3]) {
    let out = state.step(omega);
    (state, out)
}

/// Builds one measurement vector; advances the gyro filter.
pub fn assemble_measurement(
    raw: &RawImuSample,
    state: &mut LowPassState,
    euler: EulerConvention,
) -> Result<MeasurementVector> {
    let q = quat_normalize(raw.orientation)?;
    let accel = remove_gravity(raw.a_body, q);
    let gyro = state.step(raw.omega_body);
    let angles = quat_to_euler_with(q, euler);
    Ok(MeasurementVector::new(accel, gyro, angles))
}

/// Stateful per-stream preprocessor.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    filter: LowPassState,
    euler: EulerConvention,
}

impl Preprocessor {
    pub fn new(cfg: &PreprocessConfig, sample_rate_hz: f64) -> Result<Self> {
        Ok(Self {
            filter: LowPassState::butterworth(cfg.filter_order, cfg.cutoff_hz, sample_rate_hz)?,
            euler: cfg.euler,
        })
    }

    pub fn process(&mut self, raw: &RawImuSample) -> Result<MeasurementVector> {
        assemble_measurement(raw, &mut self.filter, self.euler)
    }
}

pub fn preprocess_session(
    session: &SessionRecording,
    cfg: &PreprocessConfig,
    sample_rate_hz: f64,
) -> Result<Vec<MeasurementVector>> {
    let mut pre = Preprocessor::new(cfg, sample_rate_hz)?;
    session.samples.iter().map(|s| pre.process(s)).collect()
}

/// Number of windows `segment_windows` produces for a sequence of `len` frames.
pub fn window_count(len: usize, cfg: &WindowConfig) -> usize {
    if len < cfg.h || cfg.h == 0 || cfg.stride == 0 {
        0
    } else {
        (len - cfg.h) / cfg.stride + 1
    }
}

/// Windows start at 0, stride, 2·stride, …; a window takes the label of its
/// last frame.
pub fn segment_windows(
    vectors: &[MeasurementVector],
    timestamps: &[u64],
    labels: Option<&[GaitPhase]>,
    cfg: &WindowConfig,
) -> Vec<WindowTensor> {
    let n = window_count(vectors.len(), cfg);
    (0..n)
        .map(|w| {
            let start = w * cfg.stride;
            let last = start + cfg.h - 1;
            WindowTensor {
                data: vectors[start..=last].to_vec(),
                end_timestamp: timestamps[last],
                label: labels.map(|l| l[last]),
            }
        })
        .collect()
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; NUM_CHANNELS],
    pub std: [f64; NUM_CHANNELS],
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; NUM_CHANNELS],
            std: [1.0; NUM_CHANNELS],
        }
    }

    pub fn apply_row(&self, row: &MeasurementVector) -> MeasurementVector {
        MeasurementVector(std::array::from_fn(|c| (row.0[c] - self.mean[c]) / self.std[c]))
    }

    pub fn apply(&self, window: &WindowTensor) -> WindowTensor {
        WindowTensor {
            data: window.data.iter().map(|r| self.apply_row(r)).collect(),
            end_timestamp: window.end_timestamp,
            label: window.label,
        }
    }
}

/// Fits population mean/std over every row of every window.
pub fn fit_normalizer(windows: &[WindowTensor]) -> Result<NormStats> {
    fit_normalizer_rows(windows.iter().flat_map(|w| w.data.iter()))
}

pub fn fit_normalizer_rows<'a>(rows: impl IntoIterator<Item = &'a MeasurementVector>) -> Result<NormStats> {
    // Welford
    let mut n = 0usize;
    let mut mean = [0.0; NUM_CHANNELS];
    let mut m2 = [0.0; NUM_CHANNELS];
    for row in rows {
        n += 1;
        for c in 0..NUM_CHANNELS {
            let delta = row.0[c] - mean[c];
            mean[c] += delta / n as f64;
            m2[c] += delta * (row.0[c] - mean[c]);
        }
    }
    if n == 0 {
        return Err(Error::InsufficientData("normalizer needs at least one frame".into()));
    }
    let mut std = [0.0; NUM_CHANNELS];
    for c in 0..NUM_CHANNELS {
        std[c] = (m2[c] / n as f64).sqrt();
        if std[c].is_nan() || std[c] <= 1e-12 * mean[c].abs().max(1.0) {
            return Err(Error::DegenerateChannel { channel: c });
        }
    }
    Ok(NormStats { mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn normalize_scales_to_unit() {
        let q = quat_normalize(Quaternion::new(2.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(q, Quaternion::IDENTITY);
        assert!(matches!(
            quat_normalize(Quaternion::new(0.0, 0.0, 0.0, 0.0)),
            Err(Error::DegenerateOrientation { .. })
        ));
    }

    #[test]
    fn euler_axis_aligned() {
        assert_eq!(quat_to_euler(Quaternion::IDENTITY), [0.0, 0.0, 0.0]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let e = quat_to_euler(Quaternion::new(h, 0.0, 0.0, h));
        assert!((e[0] - FRAC_PI_2).abs() < 1e-12);
        assert!(e[1].abs() < 1e-12 && e[2].abs() < 1e-12);
    }

    #[test]
    fn euler_half_turn_is_plus_pi() {
        // yaw of exactly π must come out as +π, never −π
        let e = quat_to_euler(Quaternion::new(0.0, 0.0, 0.0, 1.0));
        assert_eq!(e[0], PI);
    }

    #[test]
    fn gimbal_lock_assigns_yaw() {
        let q = Quaternion::from_euler_zyx(0.7, FRAC_PI_2, 0.0);
        let e = quat_to_euler(q);
        assert_eq!(e[2], 0.0);
        assert!((e[1] - FRAC_PI_2).abs() < 1e-7);
        assert!((e[0] - 0.7).abs() < 1e-7, "{e:?}");
    }

    #[test]
    fn gravity_removed_for_static_sensor() {
        let r = remove_gravity([0.0, 0.0, GRAVITY], Quaternion::IDENTITY);
        assert_eq!(r, [0.0, 0.0, 0.0]);
        let flip = Quaternion::from_axis_angle([1.0, 0.0, 0.0], PI);
        let r = remove_gravity([0.0, 0.0, -GRAVITY], flip);
        assert!(r.iter().all(|v| v.abs() < 1e-12), "{r:?}");
    }

    #[test]
    fn butterworth_dc_gain_and_stability() {
        for order in 1..=6 {
            let s = butterworth_lowpass(order, 5.0, 100.0).unwrap();
            let gain: f64 = s.iter().map(Biquad::dc_gain).product();
            assert!((gain - 1.0).abs() < 1e-12, "order {order}: {gain}");
        }
        assert!(butterworth_lowpass(2, 60.0, 100.0).is_err());
        assert!(butterworth_lowpass(0, 5.0, 100.0).is_err());
    }

    #[test]
    fn constant_input_passes_through() {
        let mut f = LowPassState::butterworth(2, 5.0, 100.0).unwrap();
        let mut out = [0.0; 3];
        for _ in 0..200 {
            out = f.step([5.0, 5.0, 5.0]);
        }
        assert!(out.iter().all(|v| (v - 5.0).abs() < 1e-6));
    }

    #[test]
    fn first_output_equals_first_input() {
        let mut f = LowPassState::butterworth(4, 5.0, 100.0).unwrap();
        let out = f.step([1.5, -2.0, 0.25]);
        for (o, i) in out.iter().zip([1.5, -2.0, 0.25]) {
            assert!((o - i).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let (mut f, out) = lowpass_step(LowPassState::butterworth(2, 5.0, 100.0).unwrap(), [0.0; 3]);
        assert_eq!(out, [0.0; 3]);
        for _ in 0..50 {
            assert_eq!(f.step([0.0; 3]), [0.0; 3]);
        }
    }

    #[test]
    fn stationary_measurement_is_zero() {
        let mut f = LowPassState::butterworth(2, 5.0, 100.0).unwrap();
        let raw = RawImuSample {
            t_us: 0,
            a_body: [0.0, 0.0, GRAVITY],
            omega_body: [0.0; 3],
            orientation: Quaternion::IDENTITY,
            mag: None,
        };
        let mut v = MeasurementVector::default();
        for _ in 0..100 {
            v = assemble_measurement(&raw, &mut f, EulerConvention::Zyx).unwrap();
        }
        assert!(v.0.iter().all(|x| x.abs() < 1e-12), "{v:?}");
    }

    #[test]
    fn window_counts() {
        let cfg = WindowConfig::default();
        assert_eq!(window_count(100, &cfg), 47);
        assert_eq!(window_count(7, &cfg), 0);
        assert_eq!(window_count(8, &cfg), 1);
    }

    #[test]
    fn constant_channel_is_degenerate() {
        let rows: Vec<MeasurementVector> = (0..10)
            .map(|i| {
                let mut v = [i as f64; NUM_CHANNELS];
                v[4] = 3.0;
                MeasurementVector(v)
            })
            .collect();
        assert!(matches!(
            fit_normalizer_rows(&rows),
            Err(Error::DegenerateChannel { channel: 4 })
        ));
        assert!(fit_normalizer(&[]).is_err());
    }
}
