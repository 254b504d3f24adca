//! Causal step decoder.
//!
//! Consumes one hard phase label per frame. A label must repeat for
//! `debounce_k` consecutive frames before it is *confirmed*; confirmations
//! drive the attempt lifecycle:
//!
//! ```text
//!            confirm TakeOff                 confirm Stance after Strike
//!   Idle ─────────────────────► InAttempt ───────────────────────────────► Idle (+ maybe emit)
//!                                 │  ▲   confirm TakeOff: finalize, reopen
//!                                 │  └──────────────────────────────────┘
//!                                 ├── timeout: finalize ─────────────────► Idle (+ maybe emit)
//!                                 └── Auxiliary run ≥ aux_reset: abort ──► Idle
//! ```
//!
//! An attempt's raw score is the length of the longest subsequence of its
//! confirmations that follows TakeOff → Swing → Strike → Stance strictly in
//! order; a step is emitted when `raw / 4 ≥ alpha`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{csv_err, phase_from_code, GaitPhase, SessionRecording, StepInterval};

pub const MAX_RAW_SCORE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FsmConfig {
    pub alpha: f64,
    pub debounce_k: usize,
    pub aux_reset_frames: usize,
    pub attempt_timeout_frames: usize,
}

impl Default for FsmConfig {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            debounce_k: 3,
            aux_reset_frames: 100,
            attempt_timeout_frames: 500,
        }
    }
}

impl FsmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config("fsm.alpha must lie in (0, 1]".into()));
        }
        if self.debounce_k == 0 {
            return Err(Error::Config("fsm.debounce_k must be >= 1".into()));
        }
        if self.aux_reset_frames < self.debounce_k || self.attempt_timeout_frames < self.debounce_k {
            return Err(Error::Config(
                "fsm.aux_reset_frames and fsm.attempt_timeout_frames must be >= debounce_k".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsmMode {
    Idle,
    InAttempt,
}

/// A confirmed phase and where its confirming run began.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseOnset {
    pub phase: GaitPhase,
    pub frame: usize,
    pub t_us: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct Attempt {
    contributing: Vec<PhaseOnset>,
    seen_strike: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct PendingRun {
    phase: GaitPhase,
    len: usize,
    frame: usize,
    t_us: u64,
}

/// Decoder state; thread one value through successive [`fsm_step`] calls.
#[derive(Debug, Clone, PartialEq)]
pub struct FsmState {
    frame: usize,
    last_t_us: Option<u64>,
    pending: Option<PendingRun>,
    confirmed: GaitPhase,
    aux_run: usize,
    attempt: Option<Attempt>,
}

impl Default for FsmState {
    fn default() -> Self {
        Self::new()
    }
}

/// An emitted step with the onset frame of every confirmation that
/// contributed to its attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub interval: StepInterval,
    pub onsets: Vec<PhaseOnset>,
    /// Frame index at which the attempt was finalized.
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttemptScore {
    pub raw: f64,
    pub norm: f64,
    /// One longest in-order subsequence.
    pub phases: Vec<GaitPhase>,
}

/// Scores an attempt's confirmations (Auxiliary excluded).
pub fn score_attempt(contributing: &[GaitPhase]) -> Result<AttemptScore> {
    match contributing.first() {
        Some(GaitPhase::TakeOff) => {}
        Some(p) => return Err(Error::InvalidAttempt(format!("attempt starts with {p}, not TakeOff"))),
        None => return Err(Error::InvalidAttempt("empty attempt".into())),
    }
    let ranks: Vec<usize> = contributing
        .iter()
        .map(|p| {
            p.canonical_rank()
                .ok_or_else(|| Error::InvalidAttempt(format!("{p} cannot contribute to a step")))
        })
        .collect::<Result<_>>()?;

    // longest strictly increasing subsequence, O(n·4)
    let n = ranks.len();
    let mut len = vec![1usize; n];
    let mut prev = vec![usize::MAX; n];
    for i in 0..n {
        for j in 0..i {
            if ranks[j] < ranks[i] && len[j] + 1 > len[i] {
                len[i] = len[j] + 1;
                prev[i] = j;
            }
        }
    }
    let (mut end, best) = len
        .iter()
        .enumerate()
        .fold((0, 0), |(bi, bl), (i, &l)| if l > bl { (i, l) } else { (bi, bl) });
    let mut phases = Vec::with_capacity(best);
    loop {
        phases.push(contributing[end]);
        if prev[end] == usize::MAX {
            break;
        }
        end = prev[end];
    }
    phases.reverse();
    let raw = best as f64;
    Ok(AttemptScore {
        raw,
        norm: raw / MAX_RAW_SCORE,
        phases,
    })
}

/// Phases that may directly follow `phase` in a well-formed stream.
/// Auxiliary activity can interrupt any phase but only returns to Stance.
pub fn plausible_successors(phase: GaitPhase) -> &'static [GaitPhase] {
    use GaitPhase::*;
    match phase {
        Stance => &[TakeOff, Auxiliary],
        TakeOff => &[Swing, Auxiliary],
        Swing => &[Strike, Auxiliary],
        Strike => &[Stance, Auxiliary],
        Auxiliary => &[Stance],
    }
}

impl FsmState {
    pub fn new() -> Self {
        Self {
            frame: 0,
            last_t_us: None,
            pending: None,
            confirmed: GaitPhase::Stance,
            aux_run: 0,
            attempt: None,
        }
    }

    pub fn mode(&self) -> FsmMode {
        if self.attempt.is_some() {
            FsmMode::InAttempt
        } else {
            FsmMode::Idle
        }
    }

    pub fn confirmed(&self) -> GaitPhase {
        self.confirmed
    }

    pub fn frames_seen(&self) -> usize {
        self.frame
    }

    fn finalize(&mut self, end_frame: usize, end_us: u64, cfg: &FsmConfig) -> Option<StepEvent> {
        let attempt = self.attempt.take()?;
        let phases: Vec<GaitPhase> = attempt.contributing.iter().map(|o| o.phase).collect();
        let score = score_attempt(&phases).expect("attempts open on TakeOff and exclude Auxiliary");
        let start_us = attempt.contributing[0].t_us;
        if score.norm >= cfg.alpha && end_us > start_us {
            Some(StepEvent {
                interval: StepInterval {
                    start_us,
                    end_us,
                    raw_score: score.raw,
                    norm_score: score.norm,
                    phases_seen: score.phases,
                },
                onsets: attempt.contributing,
                end_frame,
            })
        } else {
            None
        }
    }

    fn on_confirm(&mut self, onset: PhaseOnset, frame: usize, t_us: u64, cfg: &FsmConfig) -> Option<StepEvent> {
        self.confirmed = onset.phase;
        match onset.phase {
            GaitPhase::TakeOff => {
                let emitted = self.finalize(frame, t_us, cfg);
                self.attempt = Some(Attempt {
                    contributing: vec![onset],
                    seen_strike: false,
                });
                emitted
            }
            GaitPhase::Auxiliary => None,
            phase => {
                let attempt = self.attempt.as_mut()?;
                attempt.contributing.push(onset);
                match phase {
                    GaitPhase::Strike => {
                        attempt.seen_strike = true;
                        None
                    }
                    GaitPhase::Stance if attempt.seen_strike => self.finalize(frame, t_us, cfg),
                    _ => None,
                }
            }
        }
    }

    /// Finalizes a trailing open attempt at the last frame seen.
    pub fn finish(&mut self, cfg: &FsmConfig) -> Option<StepEvent> {
        let t = self.last_t_us?;
        self.finalize(self.frame.saturating_sub(1), t, cfg)
    }
}

/// Advances the decoder by one frame. Returns the refined phase and any step
/// finalized at this frame.
///
/// The refined phase is the raw prediction when it equals the confirmed phase
/// or is one of its [`plausible_successors`], and the confirmed phase
/// otherwise. Confirmation and scoring still use the full debounce.
pub fn fsm_step(state: &mut FsmState, predicted: GaitPhase, t_us: u64, cfg: &FsmConfig) -> (GaitPhase, Option<StepEvent>) {
    let frame = state.frame;
    state.frame += 1;
    state.last_t_us = Some(t_us);

    match &mut state.pending {
        Some(run) if run.phase == predicted => run.len += 1,
        _ => {
            state.pending = Some(PendingRun {
                phase: predicted,
                len: 1,
                frame,
                t_us,
            })
        }
    }
    if predicted == GaitPhase::Auxiliary {
        state.aux_run += 1;
    } else {
        state.aux_run = 0;
    }

    let mut emitted = None;
    let run = state.pending.as_ref().expect("set above");
    if run.len == cfg.debounce_k && run.phase != state.confirmed {
        let onset = PhaseOnset {
            phase: run.phase,
            frame: run.frame,
            t_us: run.t_us,
        };
        emitted = state.on_confirm(onset, frame, t_us, cfg);
    }
    if state.aux_run >= cfg.aux_reset_frames && state.attempt.is_some() {
        log::debug!("attempt aborted by auxiliary activity at frame {frame}");
        state.attempt = None;
    }
    let timed_out = state
        .attempt
        .as_ref()
        .is_some_and(|a| frame - a.contributing[0].frame > cfg.attempt_timeout_frames);
    if timed_out {
        emitted = emitted.or(state.finalize(frame, t_us, cfg));
    }

    let confirmed = state.confirmed;
    let refined = if predicted == confirmed || plausible_successors(confirmed).contains(&predicted) {
        predicted
    } else {
        confirmed
    };
    (refined, emitted)
}

/// Folds [`fsm_step`] over a whole label sequence, then finalizes any open
/// attempt at the last frame.
pub fn decode_sequence(
    labels: &[GaitPhase],
    timestamps: &[u64],
    cfg: &FsmConfig,
) -> Result<(Vec<GaitPhase>, Vec<StepEvent>)> {
    if labels.len() != timestamps.len() {
        return Err(Error::Length {
            left: labels.len(),
            right: timestamps.len(),
        });
    }
    let mut state = FsmState::new();
    let mut refined = Vec::with_capacity(labels.len());
    let mut events = Vec::new();
    for (&p, &t) in labels.iter().zip(timestamps) {
        let (r, e) = fsm_step(&mut state, p, t, cfg);
        refined.push(r);
        events.extend(e);
    }
    events.extend(state.finish(cfg));
    Ok((refined, events))
}

/// Timestamps `0, 1/rate, 2/rate, …` in microseconds.
pub fn uniform_timestamps(n: usize, sample_rate_hz: f64) -> Vec<u64> {
    (0..n).map(|i| (i as f64 * 1e6 / sample_rate_hz).round() as u64).collect()
}

/// Reference step timeline from a session's own labels.
pub fn ground_truth_steps(session: &SessionRecording, cfg: &FsmConfig) -> Result<Vec<StepEvent>> {
    let labels = session
        .labels
        .as_ref()
        .ok_or_else(|| Error::InsufficientData("session has no labels".into()))?;
    Ok(decode_sequence(labels, &session.timestamps(), cfg)?.1)
}

pub const STEP_LOG_HEADER: [&str; 5] = ["start_us", "end_us", "raw_score", "norm_score", "phases"];

fn phases_field(phases: &[GaitPhase]) -> String {
    phases
        .iter()
        .map(|p| p.code().to_string())
        .collect::<Vec<_>>()
        .join("-")
}

/// Streaming step-log writer; one row per step, flushed per row.
pub struct StepLogWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> StepLogWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(STEP_LOG_HEADER).map_err(csv_err)?;
        inner.flush().map_err(Error::Net)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, step: &StepInterval) -> Result<()> {
        self.inner
            .write_record([
                step.start_us.to_string(),
                step.end_us.to_string(),
                step.raw_score.to_string(),
                step.norm_score.to_string(),
                phases_field(&step.phases_seen),
            ])
            .map_err(csv_err)?;
        self.inner.flush().map_err(Error::Net)
    }
}

pub fn write_step_log_to<'a, W: Write>(out: W, steps: impl IntoIterator<Item = &'a StepInterval>) -> Result<()> {
    let mut w = StepLogWriter::new(out)?;
    for s in steps {
        w.write(s)?;
    }
    Ok(())
}

pub fn write_step_log<'a>(path: impl AsRef<Path>, steps: impl IntoIterator<Item = &'a StepInterval>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_step_log_to(std::io::BufWriter::new(f), steps)
}

pub fn read_step_log_from<R: Read>(input: R) -> Result<Vec<StepInterval>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(STEP_LOG_HEADER) {
        return Err(Error::parse("step log", format!("unexpected header {:?}", header)));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let ctx = || format!("step log row {}", i + 1);
        let num = |j: usize| -> Result<&str> { rec.get(j).ok_or_else(|| Error::parse(ctx(), "missing field")) };
        let phases = if num(4)?.is_empty() {
            Vec::new()
        } else {
            num(4)?
                .split('-')
                .map(|c| {
                    c.parse::<i64>()
                        .map_err(|e| Error::parse(ctx(), e))
                        .and_then(phase_from_code)
                })
                .collect::<Result<_>>()?
        };
        out.push(StepInterval {
            start_us: num(0)?.parse().map_err(|e| Error::parse(ctx(), e))?,
            end_us: num(1)?.parse().map_err(|e| Error::parse(ctx(), e))?,
            raw_score: num(2)?.parse().map_err(|e| Error::parse(ctx(), e))?,
            norm_score: num(3)?.parse().map_err(|e| Error::parse(ctx(), e))?,
            phases_seen: phases,
        });
    }
    Ok(out)
}

pub fn read_step_log(path: impl AsRef<Path>) -> Result<Vec<StepInterval>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_step_log_from(std::io::BufReader::new(f))
}
