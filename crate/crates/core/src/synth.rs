//! Parametric crutch-gait simulator.
//!
//! Each step is TakeOff → Swing → Strike → Stance, built from analytic
//! orientation and global-acceleration templates. The body rate for every
//! sample interval is derived from consecutive target orientations and the
//! stored quaternion stream is integrated from those rates, so on noise-free
//! data the sensor model `a_body = Rᵀ(a_global + g·ẑ)` is inverted exactly
//! by gravity removal.
//!
//! Auxiliary segments (grounded-crutch wander with occasional fidget bursts)
//! are inserted inside stance periods.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsm::write_step_log;
use crate::preprocess::GRAVITY;
use crate::quat::Quaternion;
use crate::types::{GaitPhase, RawImuSample, SessionMetadata, SessionRecording, StepInterval, NUM_PHASES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GaitStrategy {
    TwoPoint,
    SwingTo,
    SwingThrough,
}

impl GaitStrategy {
    pub const ALL: [GaitStrategy; 3] = [GaitStrategy::TwoPoint, GaitStrategy::SwingTo, GaitStrategy::SwingThrough];

    pub fn swing_duration_multiplier(self) -> f64 {
        match self {
            GaitStrategy::TwoPoint => 1.0,
            GaitStrategy::SwingTo => 1.1,
            GaitStrategy::SwingThrough => 1.25,
        }
    }

    pub fn swing_amplitude_multiplier(self) -> f64 {
        match self {
            GaitStrategy::TwoPoint => 1.0,
            GaitStrategy::SwingTo => 1.15,
            GaitStrategy::SwingThrough => 1.3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GaitStrategy::TwoPoint => "TwoPoint",
            GaitStrategy::SwingTo => "SwingTo",
            GaitStrategy::SwingThrough => "SwingThrough",
        }
    }
}

/// Mean phase durations, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseDurations {
    pub stance_ms: f64,
    pub takeoff_ms: f64,
    pub swing_ms: f64,
    pub strike_ms: f64,
}

impl PhaseDurations {
    pub fn period_ms(&self) -> f64 {
        self.stance_ms + self.takeoff_ms + self.swing_ms + self.strike_ms
    }
}

/// Per-channel noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseStd {
    /// m/s².
    pub accel: f64,
    /// rad/s.
    pub gyro: f64,
    /// rad, applied as a random rotation of the reported orientation.
    pub orientation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub seed: u64,
    pub gait_strategy: GaitStrategy,
    /// Steps per second.
    pub cadence_hz: f64,
    /// Peak swing pitch rate, rad/s (strategy multiplier applied).
    pub swing_amplitude: f64,
    /// Peak strike deceleration, m/s².
    pub strike_spike: f64,
    /// Peak take-off lift, m/s².
    pub takeoff_lift: f64,
    /// Peak forward acceleration during swing, m/s².
    pub forward_accel: f64,
    /// Peak lateral sway during swing, rad.
    pub sway: f64,
    /// Physiological phase durations (strategy multiplier applied to swing).
    pub durations: PhaseDurations,
    /// Relative uniform jitter applied to every phase duration.
    pub duration_jitter: f64,
    pub noise_std: NoiseStd,
}

/// Samples a subject deterministically from `seed`.
pub fn make_profile(seed: u64, strategy: GaitStrategy) -> SubjectProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cadence_hz: f64 = rng.random_range(0.8..1.2);
    let period_ms = 1000.0 / cadence_hz;
    let takeoff_ms = (0.10 * period_ms).clamp(80.0, 150.0);
    let strike_ms = (0.06 * period_ms).clamp(40.0, 80.0);
    let swing_ms = 0.40 * period_ms * strategy.swing_duration_multiplier();
    let stance_ms = (period_ms - takeoff_ms - swing_ms - strike_ms).max(100.0);
    SubjectProfile {
        seed,
        gait_strategy: strategy,
        cadence_hz,
        swing_amplitude: rng.random_range(1.5..2.5) * strategy.swing_amplitude_multiplier(),
        strike_spike: rng.random_range(15.0..30.0),
        takeoff_lift: rng.random_range(2.0..4.0),
        forward_accel: rng.random_range(1.5..3.0),
        sway: rng.random_range(0.02..0.06),
        durations: PhaseDurations {
            stance_ms,
            takeoff_ms,
            swing_ms,
            strike_ms,
        },
        duration_jitter: 0.1,
        noise_std: NoiseStd {
            accel: rng.random_range(0.05..0.15),
            gyro: rng.random_range(0.02..0.05),
            orientation: rng.random_range(0.002..0.006),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SwingAxis {
    /// Lateral axis: swing shows up as pitch.
    #[default]
    Y,
    /// Forward axis: swing shows up as roll.
    X,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_steps: usize,
    pub laps: usize,
    /// Trailing steps of each lap (except the last) that carry a yaw ramp
    /// totalling a half turn.
    pub turn_steps: usize,
    pub aux_insert_probability: f64,
    /// Auxiliary segment duration range, seconds.
    pub aux_duration_s: [f64; 2],
    /// Stretch phases toward equal shares and keep Auxiliary near a fifth of
    /// all frames.
    pub balance: bool,
    /// Multiplies every profile noise level; 0 gives noise-free data.
    pub noise_scale: f64,
    pub swing_axis: SwingAxis,
    pub sessions_per_subject: usize,
    pub sample_rate_hz: f64,
    /// Quiet stance before the first and after the last step, seconds.
    pub lead_s: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_steps: 12,
            laps: 2,
            turn_steps: 2,
            aux_insert_probability: 0.15,
            aux_duration_s: [1.0, 2.0],
            balance: true,
            noise_scale: 1.0,
            swing_axis: SwingAxis::Y,
            sessions_per_subject: 2,
            sample_rate_hz: 100.0,
            lead_s: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.aux_insert_probability) {
            return Err(Error::Config("synth.aux_insert_probability must lie in [0, 1]".into()));
        }
        let [lo, hi] = self.aux_duration_s;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config("synth.aux_duration_s must be 0 < min <= max".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config("synth.noise_scale must be >= 0".into()));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::Config("synth.sample_rate_hz must be > 0".into()));
        }
        if self.lead_s < 0.0 || self.sessions_per_subject == 0 {
            return Err(Error::Config("synth.lead_s must be >= 0 and sessions_per_subject >= 1".into()));
        }
        Ok(())
    }

    pub fn steps_per_session(&self) -> usize {
        self.laps * self.n_steps
    }
}

/// A generated session and the true interval of every step in it, from
/// take-off onset to the onset of the stance that follows the strike.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSession {
    pub recording: SessionRecording,
    pub steps: Vec<StepInterval>,
}

/// Derives an independent seed for stream `stream` of `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(base);
    r.set_stream(stream);
    r.next_u64()
}

/// Per-frame targets before the sensor model is applied.
#[derive(Default)]
struct Track {
    labels: Vec<GaitPhase>,
    yaw: Vec<f64>,
    /// Rotation about the swing axis.
    swing: Vec<f64>,
    /// Rotation about the other horizontal axis.
    sway: Vec<f64>,
    accel: Vec<[f64; 3]>,
    heading: f64,
}

impl Track {
    fn push(&mut self, label: GaitPhase, yaw: f64, swing: f64, sway: f64, accel: [f64; 3]) {
        self.labels.push(label);
        self.yaw.push(yaw);
        self.swing.push(swing);
        self.sway.push(sway);
        self.accel.push(accel);
    }

    fn stance(&mut self, n: usize) {
        for _ in 0..n {
            self.push(GaitPhase::Stance, self.heading, 0.0, 0.0, [0.0; 3]);
        }
    }

    fn count(&self, phase: GaitPhase) -> usize {
        self.labels.iter().filter(|&&l| l == phase).count()
    }
}

struct StepShape {
    takeoff: usize,
    swing: usize,
    strike: usize,
    stance: usize,
    /// Swing half-angle, rad.
    theta: f64,
    turn: f64,
}

fn ease(tau: f64) -> f64 {
    0.5 * (1.0 - (PI * tau).cos())
}

fn push_step(track: &mut Track, p: &SubjectProfile, s: &StepShape) {
    let theta = s.theta;
    let (lift, fwd, spike) = (p.takeoff_lift, p.forward_accel, p.strike_spike);
    for j in 0..s.takeoff {
        let tau = j as f64 / s.takeoff as f64;
        let accel = [0.3 * fwd * tau, 0.0, lift * (1.0 - tau)];
        track.push(GaitPhase::TakeOff, track.heading, -theta * ease(tau), 0.0, accel);
    }
    let heading0 = track.heading;
    for j in 0..s.swing {
        let tau = j as f64 / s.swing as f64;
        let w = 2.0 * PI * tau;
        let accel = [fwd * w.sin(), 0.5 * p.sway * GRAVITY * w.sin(), -0.3 * lift * w.sin()];
        let yaw = heading0 + s.turn * ease(tau);
        track.push(GaitPhase::Swing, yaw, -theta * (PI * tau).cos(), p.sway * w.sin(), accel);
    }
    track.heading = heading0 + s.turn;
    for j in 0..s.strike {
        let tau = j as f64 / s.strike as f64;
        let ring = spike * (1.0 - 0.7 * tau) * if j % 2 == 0 { 1.0 } else { -1.0 };
        let accel = [-0.4 * ring, 0.1 * ring, ring];
        track.push(GaitPhase::Strike, track.heading, theta * (1.0 - ease(tau)), 0.0, accel);
    }
}

/// Grounded crutch: slow correlated tilt and acceleration wander, eased in
/// and out, plus short fidget bursts.
fn push_aux(track: &mut Track, n: usize, dt: f64, rng: &mut ChaCha8Rng) {
    let unit = Normal::new(0.0, 1.0).unwrap();
    let lean = rng.random_range(0.05..0.15) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let mut ar = [0.0f64; 6];
    let ar_std = [0.01, 0.01, 0.005, 0.05, 0.05, 0.05];
    let bursts: Vec<(usize, usize, f64, f64)> = (0..rng.random_range(0..=2))
        .map(|_| {
            let len = rng.random_range(15..=30).min(n);
            let start = rng.random_range(0..=n - len);
            let freq = rng.random_range(3.0..5.0);
            let amp = rng.random_range(0.05..0.1);
            (start, len, freq, amp)
        })
        .collect();
    for j in 0..n {
        let w = (PI * j as f64 / n as f64).sin();
        for (a, s) in ar.iter_mut().zip(ar_std) {
            *a = 0.97 * *a + s * unit.sample(rng);
        }
        let mut swing = w * (lean + ar[0]);
        let mut sway = w * ar[1];
        let yaw = track.heading + w * ar[2];
        let mut accel = [w * ar[3], w * ar[4], w * ar[5]];
        for &(start, len, freq, amp) in &bursts {
            if (start..start + len).contains(&j) {
                let phase = 2.0 * PI * freq * (j - start) as f64 * dt;
                sway += amp * phase.sin();
                swing += 0.5 * amp * phase.cos();
                accel[0] += 20.0 * amp * phase.cos();
                accel[1] += 20.0 * amp * phase.sin();
            }
        }
        track.push(GaitPhase::Auxiliary, yaw, swing, sway, accel);
    }
}

fn frames(ms: f64, rate: f64, jitter: f64, rng: &mut ChaCha8Rng) -> usize {
    let j = if jitter > 0.0 { rng.random_range(1.0 - jitter..=1.0 + jitter) } else { 1.0 };
    ((ms * j * rate / 1000.0).round() as usize).max(4)
}

fn durations_for(p: &SubjectProfile, cfg: &SynthConfig) -> PhaseDurations {
    if !cfg.balance {
        return p.durations;
    }
    let quarter = 250.0 / p.cadence_hz;
    PhaseDurations {
        stance_ms: quarter,
        takeoff_ms: quarter,
        swing_ms: quarter * p.gait_strategy.swing_duration_multiplier(),
        strike_ms: quarter,
    }
}

/// Applies the sensor model to a track: integrates body rates, rotates the
/// specific force into the body frame and adds noise.
fn render(track: &Track, p: &SubjectProfile, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<RawImuSample> {
    let n = track.labels.len();
    let dt = 1.0 / cfg.sample_rate_hz;
    let dt_us = 1e6 / cfg.sample_rate_hz;
    let target: Vec<Quaternion> = (0..n)
        .map(|i| {
            let (pitch, roll) = match cfg.swing_axis {
                SwingAxis::Y => (track.swing[i], track.sway[i]),
                SwingAxis::X => (track.sway[i], track.swing[i]),
            };
            Quaternion::from_euler_zyx(track.yaw[i], pitch, roll)
        })
        .collect();
    let scale = cfg.noise_scale;
    let noise = |std: f64| Normal::new(0.0, std * scale).unwrap();
    let (na, ng, no) = (
        noise(p.noise_std.accel),
        noise(p.noise_std.gyro),
        noise(p.noise_std.orientation),
    );
    let mut q = target.first().copied().unwrap_or(Quaternion::IDENTITY);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let omega = match target.get(i + 1) {
            Some(next) if *next != target[i] => {
                let d = q.conj().mul(next).log_rotation_vector();
                [d[0] / dt, d[1] / dt, d[2] / dt]
            }
            _ => [0.0; 3],
        };
        let g = track.accel[i];
        let mut a_body = q.rotate_inverse([g[0], g[1], g[2] + GRAVITY]);
        let mut gyro = omega;
        let mut reported = q;
        if scale > 0.0 {
            for v in a_body.iter_mut() {
                *v += na.sample(rng);
            }
            for v in gyro.iter_mut() {
                *v += ng.sample(rng);
            }
            let e = [no.sample(rng), no.sample(rng), no.sample(rng)];
            reported = q.mul(&Quaternion::exp_rotation_vector(e));
        }
        out.push(RawImuSample {
            t_us: (i as f64 * dt_us).round() as u64,
            a_body,
            omega_body: gyro,
            orientation: reported,
            mag: None,
        });
        if omega != [0.0; 3] {
            let next = q.mul(&Quaternion::exp_rotation_vector([omega[0] * dt, omega[1] * dt, omega[2] * dt]));
            q = next.scale(1.0 / next.norm());
        }
    }
    out
}

/// Generates session `session_index` of a subject.
pub fn generate_session(profile: &SubjectProfile, cfg: &SynthConfig, session_index: usize) -> Result<SyntheticSession> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(profile.seed, 1 + session_index as u64));
    let rate = cfg.sample_rate_hz;
    let d = durations_for(profile, cfg);
    let jitter = profile.duration_jitter;
    let lead = ((cfg.lead_s * rate).round() as usize).max(4);
    let mut track = Track::default();
    let mut starts = Vec::new();
    track.stance(lead);

    let total = cfg.steps_per_session();
    for step in 0..total {
        let lap = step / cfg.n_steps.max(1);
        let in_lap = step % cfg.n_steps.max(1);
        let turning = lap + 1 < cfg.laps && in_lap + cfg.turn_steps >= cfg.n_steps;
        let swing_frames = frames(d.swing_ms, rate, jitter, &mut rng);
        let shape = StepShape {
            takeoff: frames(d.takeoff_ms, rate, jitter, &mut rng),
            swing: swing_frames,
            strike: frames(d.strike_ms, rate, jitter, &mut rng),
            stance: frames(d.stance_ms, rate, jitter, &mut rng),
            // peak pitch rate θ·π/T equals the profile amplitude
            theta: profile.swing_amplitude * (swing_frames as f64 / rate) / PI,
            turn: if turning { PI / cfg.turn_steps as f64 } else { 0.0 },
        };
        let t0 = track.labels.len();
        push_step(&mut track, profile, &shape);
        let stance_onset = track.labels.len();
        starts.push((t0, stance_onset));

        let aux_len = (rng.random_range(cfg.aux_duration_s[0]..=cfg.aux_duration_s[1]) * rate).round() as usize;
        let insert = if cfg.balance {
            // insert when that brings the running auxiliary share closer to a fifth
            let n = (track.labels.len() + shape.stance) as f64;
            let aux = track.count(GaitPhase::Auxiliary) as f64;
            let without = (aux / n - 0.2).abs();
            let with = ((aux + aux_len as f64) / (n + aux_len as f64) - 0.2).abs();
            with < without
        } else {
            rng.random_bool(cfg.aux_insert_probability)
        };
        if insert && aux_len > 0 {
            let before = (shape.stance / 2).max(4);
            track.stance(before);
            push_aux(&mut track, aux_len, 1.0 / rate, &mut rng);
            track.stance(shape.stance.saturating_sub(before).max(4));
        } else {
            track.stance(shape.stance);
        }
    }
    track.stance(lead);

    let samples = render(&track, profile, cfg, &mut rng);
    let steps = starts
        .iter()
        .map(|&(s, e)| StepInterval {
            start_us: samples[s].t_us,
            end_us: samples[e].t_us,
            raw_score: 4.0,
            norm_score: 1.0,
            phases_seen: vec![GaitPhase::TakeOff, GaitPhase::Swing, GaitPhase::Strike, GaitPhase::Stance],
        })
        .collect();
    Ok(SyntheticSession {
        recording: SessionRecording {
            metadata: SessionMetadata {
                subject_id: format!("seed{}", profile.seed),
                gait_strategy: Some(profile.gait_strategy.name().to_string()),
                seed: Some(profile.seed),
            },
            samples,
            labels: Some(track.labels),
        },
        steps,
    })
}

/// Frames per class, indexed by `GaitPhase::index`.
pub fn class_counts(labels: &[GaitPhase]) -> [usize; NUM_PHASES] {
    let mut c = [0; NUM_PHASES];
    for l in labels {
        c[l.index()] += 1;
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSession {
    /// Relative to the dataset root.
    pub path: String,
    pub steps_path: String,
    pub subject: String,
    pub session_index: usize,
    pub seed: u64,
    pub frames: usize,
    /// Stance, TakeOff, Swing, Strike, Auxiliary.
    pub class_counts: [usize; NUM_PHASES],
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSubject {
    pub id: String,
    pub profile: SubjectProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: SynthConfig,
    pub note: String,
    pub subjects: Vec<ManifestSubject>,
    pub sessions: Vec<ManifestSession>,
    /// Stance, TakeOff, Swing, Strike, Auxiliary.
    pub class_totals: [usize; NUM_PHASES],
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn class_shares(&self) -> [f64; NUM_PHASES] {
        let total: usize = self.class_totals.iter().sum();
        self.class_totals.map(|c| c as f64 / total.max(1) as f64)
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
    }
}

pub fn subject_id(index: usize) -> String {
    format!("subject_{index:02}")
}

/// Profiles for `n_subjects` subjects; strategies cycle through the three gaits.
pub fn subject_profiles(n_subjects: usize, seed: u64) -> Vec<SubjectProfile> {
    (0..n_subjects)
        .map(|i| make_profile(derive_seed(seed, i as u64), GaitStrategy::ALL[i % 3]))
        .collect()
}

/// Generates every session of every subject in memory.
pub fn generate_subjects(n_subjects: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<Vec<SyntheticSession>>> {
    subject_profiles(n_subjects, seed)
        .iter()
        .enumerate()
        .map(|(i, p)| {
            (0..cfg.sessions_per_subject)
                .map(|s| {
                    let mut session = generate_session(p, cfg, s)?;
                    session.recording.metadata.subject_id = subject_id(i);
                    Ok(session)
                })
                .collect()
        })
        .collect()
}

/// Writes `n_subjects` subject directories of session CSVs, true step logs
/// and a manifest under `out_dir`.
pub fn generate_dataset(n_subjects: usize, seed: u64, cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    if n_subjects == 0 {
        return Err(Error::Config("n_subjects must be >= 1".into()));
    }
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let profiles = subject_profiles(n_subjects, seed);
    let mut sessions = Vec::new();
    let mut totals = [0; NUM_PHASES];
    for (i, profile) in profiles.iter().enumerate() {
        let id = subject_id(i);
        let dir = out_dir.join(&id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for s in 0..cfg.sessions_per_subject {
            let mut session = generate_session(profile, cfg, s)?;
            session.recording.metadata.subject_id = id.clone();
            let rel = format!("{id}/session_{s:02}.csv");
            let steps_rel = format!("{id}/session_{s:02}.steps.csv");
            session.recording.write_csv(out_dir.join(&rel))?;
            write_step_log(out_dir.join(&steps_rel), &session.steps)?;
            let counts = class_counts(session.recording.labels.as_deref().unwrap_or_default());
            for (t, c) in totals.iter_mut().zip(counts) {
                *t += c;
            }
            sessions.push(ManifestSession {
                path: rel,
                steps_path: steps_rel,
                subject: id.clone(),
                session_index: s,
                seed: profile.seed,
                frames: session.recording.len(),
                class_counts: counts,
                steps: session.steps.len(),
            });
        }
    }
    let manifest = Manifest {
        seed,
        config: cfg.clone(),
        note: "synthetic subjects; profile parameter ranges are engineering choices, not measured data".into(),
        subjects: profiles
            .into_iter()
            .enumerate()
            .map(|(i, profile)| ManifestSubject { id: subject_id(i), profile })
            .collect(),
        sessions,
        class_totals: totals,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::parse("manifest", e))?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A session loaded back from a generated dataset.
#[derive(Debug, Clone)]
pub struct DatasetSession {
    pub subject: String,
    pub path: PathBuf,
    pub recording: SessionRecording,
}

/// Reads every session listed in a dataset manifest, optionally restricted
/// to `subjects`.
pub fn load_dataset(dir: impl AsRef<Path>, subjects: Option<&[String]>) -> Result<(Manifest, Vec<DatasetSession>)> {
    let dir = dir.as_ref();
    let manifest = Manifest::read(dir)?;
    let mut out = Vec::new();
    for s in &manifest.sessions {
        if subjects.is_some_and(|keep| !keep.contains(&s.subject)) {
            continue;
        }
        let path = dir.join(&s.path);
        let mut recording = SessionRecording::read_csv(&path)?;
        recording.metadata.subject_id = s.subject.clone();
        recording.metadata.seed = Some(s.seed);
        if let Some(sub) = manifest.subjects.iter().find(|x| x.id == s.subject) {
            recording.metadata.gait_strategy = Some(sub.profile.gait_strategy.name().to_string());
        }
        out.push(DatasetSession {
            subject: s.subject.clone(),
            path,
            recording,
        });
    }
    Ok((manifest, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::remove_gravity;

    fn quiet() -> SynthConfig {
        SynthConfig {
            noise_scale: 0.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn profile_is_deterministic() {
        assert_eq!(make_profile(7, GaitStrategy::SwingTo), make_profile(7, GaitStrategy::SwingTo));
        assert_ne!(make_profile(7, GaitStrategy::SwingTo), make_profile(8, GaitStrategy::SwingTo));
    }

    #[test]
    fn swing_through_swings_longer() {
        let a = GaitStrategy::SwingThrough.swing_duration_multiplier();
        let b = GaitStrategy::TwoPoint.swing_duration_multiplier();
        assert!(a > b);
        let p = make_profile(3, GaitStrategy::SwingThrough);
        let q = make_profile(3, GaitStrategy::TwoPoint);
        assert!(p.durations.swing_ms > q.durations.swing_ms);
    }

    #[test]
    fn cadence_in_physiological_range() {
        for seed in 0..1000 {
            let c = make_profile(seed, GaitStrategy::TwoPoint).cadence_hz;
            assert!((0.6..=1.5).contains(&c), "seed {seed}: {c}");
        }
    }

    #[test]
    fn session_step_count_and_labels() {
        let p = make_profile(1, GaitStrategy::TwoPoint);
        let cfg = quiet();
        let s = generate_session(&p, &cfg, 0).unwrap();
        assert_eq!(s.steps.len(), cfg.steps_per_session());
        let labels = s.recording.labels.as_ref().unwrap();
        assert_eq!(labels.len(), s.recording.len());
        assert!(crate::types::validate_session(&s.recording).is_empty());
    }

    #[test]
    fn noise_free_stance_is_pure_gravity() {
        let p = make_profile(2, GaitStrategy::SwingThrough);
        let s = generate_session(&p, &quiet(), 0).unwrap();
        let labels = s.recording.labels.unwrap();
        for (x, l) in s.recording.samples.iter().zip(&labels) {
            if *l == GaitPhase::Stance {
                let a = remove_gravity(x.a_body, x.orientation);
                assert!(a.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6);
                assert_eq!(x.omega_body, [0.0; 3]);
            }
        }
    }

    #[test]
    fn same_seed_same_session() {
        let p = make_profile(5, GaitStrategy::SwingTo);
        let cfg = SynthConfig::default();
        assert_eq!(generate_session(&p, &cfg, 1).unwrap(), generate_session(&p, &cfg, 1).unwrap());
        assert_ne!(
            generate_session(&p, &cfg, 0).unwrap().recording,
            generate_session(&p, &cfg, 1).unwrap().recording
        );
    }

    #[test]
    fn invalid_probability_rejected() {
        let cfg = SynthConfig {
            aux_insert_probability: 1.5,
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
