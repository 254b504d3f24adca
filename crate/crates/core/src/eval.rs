//! Frame and step metrics, the with/without-decoder comparison, the
//! training-subject sweep and the latency benchmark.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsm::{decode_sequence, ground_truth_steps, FsmConfig};
use crate::preprocess::{preprocess_session, segment_windows};
use crate::tcn::{predict_session, train, SessionWindows, TcnConfig, TcnModel, TrainConfig};
use crate::stream::OnlinePipeline;
use crate::types::{GaitPhase, SessionRecording, StepInterval, NUM_PHASES};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Mean and population standard deviation of a sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// Welford's single-pass update; an empty sample gives zeros.
    pub fn of(values: &[f64]) -> Self {
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for (i, &v) in values.iter().enumerate() {
            let d = v - mean;
            mean += d / (i + 1) as f64;
            m2 += d * (v - mean);
        }
        let n = values.len();
        let std = if n > 0 { (m2 / n as f64).sqrt() } else { 0.0 };
        Self { mean, std, n }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = f.precision().unwrap_or(3);
        write!(f, "{:.p$} ± {:.p$}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frames: usize,
    pub overall_accuracy: f64,
    /// Recall per true class; `None` when the class never occurs.
    pub per_class_recall: [Option<f64>; NUM_PHASES],
    /// `confusion[i][j] = P(pred = j | truth = i)`; rows of absent classes are zero.
    pub confusion: [[f64; NUM_PHASES]; NUM_PHASES],
    /// Raw counts, truth-major.
    pub counts: [[usize; NUM_PHASES]; NUM_PHASES],
}

impl FrameMetrics {
    pub fn from_counts(counts: [[usize; NUM_PHASES]; NUM_PHASES]) -> Self {
        let frames: usize = counts.iter().flatten().sum();
        let correct: usize = (0..NUM_PHASES).map(|i| counts[i][i]).sum();
        let mut confusion = [[0.0; NUM_PHASES]; NUM_PHASES];
        let mut per_class_recall = [None; NUM_PHASES];
        for i in 0..NUM_PHASES {
            let row: usize = counts[i].iter().sum();
            if row > 0 {
                for j in 0..NUM_PHASES {
                    confusion[i][j] = counts[i][j] as f64 / row as f64;
                }
                per_class_recall[i] = Some(confusion[i][i]);
            }
        }
        Self {
            frames,
            overall_accuracy: if frames > 0 { correct as f64 / frames as f64 } else { 0.0 },
            per_class_recall,
            confusion,
            counts,
        }
    }

    pub fn write_confusion_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["truth\\pred".to_string()];
        header.extend(GaitPhase::ALL.iter().map(|p| p.name().to_string()));
        w.write_record(&header).map_err(crate::types::csv_err)?;
        for (i, row) in self.confusion.iter().enumerate() {
            let mut rec = vec![GaitPhase::ALL[i].name().to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(crate::types::csv_err)?;
        }
        w.flush().map_err(Error::Net)
    }
}

pub fn confusion_counts(pred: &[GaitPhase], truth: &[GaitPhase]) -> Result<[[usize; NUM_PHASES]; NUM_PHASES]> {
    if pred.len() != truth.len() {
        return Err(Error::Length {
            left: pred.len(),
            right: truth.len(),
        });
    }
    let mut counts = [[0usize; NUM_PHASES]; NUM_PHASES];
    for (p, t) in pred.iter().zip(truth) {
        counts[t.index()][p.index()] += 1;
    }
    Ok(counts)
}

pub fn frame_metrics(pred: &[GaitPhase], truth: &[GaitPhase]) -> Result<FrameMetrics> {
    Ok(FrameMetrics::from_counts(confusion_counts(pred, truth)?))
}

/// `|a ∩ b| / (max end − min start)`.
pub fn temporal_iou(a: &StepInterval, b: &StepInterval) -> f64 {
    let inter = a.end_us.min(b.end_us).saturating_sub(a.start_us.max(b.start_us));
    let span = a.end_us.max(b.end_us).saturating_sub(a.start_us.min(b.start_us));
    if span == 0 {
        return if a.start_us == b.start_us { 1.0 } else { 0.0 };
    }
    inter as f64 / span as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMatch {
    pub pred: usize,
    pub truth: usize,
    pub iou: f64,
    pub start_error_ms: f64,
    pub end_error_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMatching {
    pub pairs: Vec<StepMatch>,
    pub n_true: usize,
    pub n_pred: usize,
}

impl StepMatching {
    pub fn matched(&self) -> usize {
        self.pairs.len()
    }

    /// `matched / n_true`; 1 when there are no true steps.
    pub fn recall(&self) -> f64 {
        ratio(self.matched(), self.n_true)
    }

    /// `matched / n_pred`; 1 when nothing was predicted.
    pub fn precision(&self) -> f64 {
        ratio(self.matched(), self.n_pred)
    }

    pub fn start_errors_ms(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.start_error_ms).collect()
    }

    pub fn end_errors_ms(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.end_error_ms).collect()
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Greedy one-to-one matching by descending IoU over pairs with
/// `IoU ≥ iou_threshold`. Ties are broken on interval bounds in a way that
/// does not depend on which list is called `pred`.
pub fn match_steps(pred: &[StepInterval], truth: &[StepInterval], iou_threshold: f64) -> StepMatching {
    let mut cands = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let iou = temporal_iou(p, t);
            if iou >= iou_threshold && iou > 0.0 {
                cands.push((iou, i, j));
            }
        }
    }
    let key = |&(_, i, j): &(f64, usize, usize)| {
        let (p, t) = (&pred[i], &truth[j]);
        (
            p.start_us.min(t.start_us),
            p.start_us.max(t.start_us),
            p.end_us.min(t.end_us),
            p.end_us.max(t.end_us),
        )
    };
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| key(a).cmp(&key(b))));
    let mut used_p = vec![false; pred.len()];
    let mut used_t = vec![false; truth.len()];
    let mut pairs = Vec::new();
    for (iou, i, j) in cands {
        if used_p[i] || used_t[j] {
            continue;
        }
        used_p[i] = true;
        used_t[j] = true;
        let (p, t) = (&pred[i], &truth[j]);
        pairs.push(StepMatch {
            pred: i,
            truth: j,
            iou,
            start_error_ms: p.start_us.abs_diff(t.start_us) as f64 / 1000.0,
            end_error_ms: p.end_us.abs_diff(t.end_us) as f64 / 1000.0,
        });
    }
    pairs.sort_by_key(|p| p.truth);
    StepMatching {
        pairs,
        n_true: truth.len(),
        n_pred: pred.len(),
    }
}

/// Summary for one label stream against the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: FrameMetrics,
    pub step_recall: f64,
    pub step_precision: f64,
    pub start_error_ms: MeanStd,
    pub end_error_ms: MeanStd,
    pub true_steps: usize,
    pub predicted_steps: usize,
    pub matched_steps: usize,
}

/// Accumulates counts and matched-step errors over sessions.
#[derive(Debug, Clone, Default)]
pub struct EvalAccumulator {
    counts: [[usize; NUM_PHASES]; NUM_PHASES],
    start_errors: Vec<f64>,
    end_errors: Vec<f64>,
    n_true: usize,
    n_pred: usize,
    matched: usize,
}

impl EvalAccumulator {
    pub fn add(&mut self, counts: &[[usize; NUM_PHASES]; NUM_PHASES], steps: &StepMatching) {
        for (a, b) in self.counts.iter_mut().flatten().zip(counts.iter().flatten()) {
            *a += b;
        }
        self.start_errors.extend(steps.start_errors_ms());
        self.end_errors.extend(steps.end_errors_ms());
        self.n_true += steps.n_true;
        self.n_pred += steps.n_pred;
        self.matched += steps.matched();
    }

    pub fn merge(&mut self, other: &EvalAccumulator) {
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
        self.start_errors.extend(&other.start_errors);
        self.end_errors.extend(&other.end_errors);
        self.n_true += other.n_true;
        self.n_pred += other.n_pred;
        self.matched += other.matched;
    }

    pub fn report(&self) -> EvalReport {
        EvalReport {
            frames: FrameMetrics::from_counts(self.counts),
            step_recall: ratio(self.matched, self.n_true),
            step_precision: ratio(self.matched, self.n_pred),
            start_error_ms: MeanStd::of(&self.start_errors),
            end_error_ms: MeanStd::of(&self.end_errors),
            true_steps: self.n_true,
            predicted_steps: self.n_pred,
            matched_steps: self.matched,
        }
    }
}

/// Decoder settings for the "without FSM" baseline: no debounce and any
/// attempt that starts with a take-off counts as a step.
pub fn passthrough_fsm(cfg: &FsmConfig) -> FsmConfig {
    FsmConfig {
        alpha: 0.25,
        debounce_k: 1,
        ..*cfg
    }
}

/// Per-session with/without-decoder accumulators.
#[derive(Debug, Clone, Default)]
pub struct SessionEval {
    pub with_fsm: EvalAccumulator,
    pub without_fsm: EvalAccumulator,
    /// Decoded steps from the predictions (with the decoder).
    pub predicted_steps: Vec<StepInterval>,
    pub refined: Vec<GaitPhase>,
}

/// Scores a per-frame prediction stream against a labeled session. The
/// first `warmup` frames are fed to the decoder but excluded from frame
/// metrics.
pub fn evaluate_predictions(
    predicted: &[GaitPhase],
    warmup: usize,
    session: &SessionRecording,
    fsm_cfg: &FsmConfig,
) -> Result<SessionEval> {
    let truth = session
        .labels
        .as_ref()
        .ok_or_else(|| Error::InsufficientData("evaluation needs a labeled session".into()))?;
    if predicted.len() != truth.len() {
        return Err(Error::Length {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    let ts = session.timestamps();
    let reference: Vec<StepInterval> = ground_truth_steps(session, fsm_cfg)?
        .into_iter()
        .map(|e| e.interval)
        .collect();
    let (refined, fsm_events) = decode_sequence(predicted, &ts, fsm_cfg)?;
    let (_, raw_events) = decode_sequence(predicted, &ts, &passthrough_fsm(fsm_cfg))?;
    let fsm_steps: Vec<StepInterval> = fsm_events.into_iter().map(|e| e.interval).collect();
    let raw_steps: Vec<StepInterval> = raw_events.into_iter().map(|e| e.interval).collect();

    let skip = warmup.min(truth.len());
    let mut out = SessionEval::default();
    out.with_fsm.add(
        &confusion_counts(&refined[skip..], &truth[skip..])?,
        &match_steps(&fsm_steps, &reference, DEFAULT_IOU_THRESHOLD),
    );
    out.without_fsm.add(
        &confusion_counts(&predicted[skip..], &truth[skip..])?,
        &match_steps(&raw_steps, &reference, DEFAULT_IOU_THRESHOLD),
    );
    out.predicted_steps = fsm_steps;
    out.refined = refined;
    Ok(out)
}

/// Runs the classifier over a labeled session and scores it both ways.
pub fn evaluate_session(model: &TcnModel, fsm_cfg: &FsmConfig, session: &SessionRecording) -> Result<SessionEval> {
    let preds = predict_session(model, session)?;
    let phases: Vec<GaitPhase> = preds.iter().map(|p| p.phase).collect();
    evaluate_predictions(&phases, model.window.h - 1, session, fsm_cfg)
}

/// Combined with/without-decoder reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub format_version: u32,
    pub sessions: usize,
    pub iou_threshold: f64,
    pub with_fsm: EvalReport,
    pub without_fsm: EvalReport,
    pub note: String,
}

pub const STEP_METRIC_NOTE: &str =
    "step success = recall at temporal IoU >= 0.5 with greedy one-to-one matching; precision reported alongside";

/// Evaluates a model over several sessions.
pub fn evaluate_sessions(model: &TcnModel, fsm_cfg: &FsmConfig, sessions: &[SessionRecording]) -> Result<ComparisonReport> {
    let mut with_fsm = EvalAccumulator::default();
    let mut without_fsm = EvalAccumulator::default();
    for s in sessions {
        let e = evaluate_session(model, fsm_cfg, s)?;
        with_fsm.merge(&e.with_fsm);
        without_fsm.merge(&e.without_fsm);
    }
    Ok(ComparisonReport {
        format_version: REPORT_FORMAT_VERSION,
        sessions: sessions.len(),
        iou_threshold: DEFAULT_IOU_THRESHOLD,
        with_fsm: with_fsm.report(),
        without_fsm: without_fsm.report(),
        note: STEP_METRIC_NOTE.into(),
    })
}

fn fmt_recall(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |r| format!("{:.4}", r))
}

impl ComparisonReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("sessions: {}\n", self.sessions));
        s.push_str(&format!("{:<26}{:>14}{:>14}\n", "metric", "w/o FSM", "w/ FSM"));
        let (a, b) = (&self.without_fsm, &self.with_fsm);
        let row = |s: &mut String, name: &str, x: String, y: String| {
            s.push_str(&format!("{name:<26}{x:>14}{y:>14}\n"));
        };
        row(
            &mut s,
            "frame accuracy",
            format!("{:.4}", a.frames.overall_accuracy),
            format!("{:.4}", b.frames.overall_accuracy),
        );
        for (i, p) in GaitPhase::ALL.iter().enumerate() {
            row(
                &mut s,
                &format!("  recall {}", p.name()),
                fmt_recall(a.frames.per_class_recall[i]),
                fmt_recall(b.frames.per_class_recall[i]),
            );
        }
        row(&mut s, "step recall", format!("{:.4}", a.step_recall), format!("{:.4}", b.step_recall));
        row(
            &mut s,
            "step precision",
            format!("{:.4}", a.step_precision),
            format!("{:.4}", b.step_precision),
        );
        row(&mut s, "true steps", a.true_steps.to_string(), b.true_steps.to_string());
        row(&mut s, "predicted steps", a.predicted_steps.to_string(), b.predicted_steps.to_string());
        row(&mut s, "matched steps", a.matched_steps.to_string(), b.matched_steps.to_string());
        row(
            &mut s,
            "|start error| ms",
            format!("{:.1}", a.start_error_ms),
            format!("{:.1}", b.start_error_ms),
        );
        row(
            &mut s,
            "|end error| ms",
            format!("{:.1}", a.end_error_ms),
            format!("{:.1}", b.end_error_ms),
        );
        s.push_str(&format!("note: {}\n", self.note));
        s
    }

    /// Writes `report.json`, `report.txt`, both confusion matrices and the
    /// effective configuration into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>, config_toml: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| -> Result<()> {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
        };
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::parse("report", e))?;
        write("report.json", (json + "\n").as_bytes())?;
        write("report.txt", self.to_text().as_bytes())?;
        for (name, m) in [
            ("confusion_with_fsm.csv", &self.with_fsm.frames),
            ("confusion_without_fsm.csv", &self.without_fsm.frames),
        ] {
            let mut buf = Vec::new();
            m.write_confusion_csv(&mut buf)?;
            write(name, &buf)?;
        }
        write("config.toml", config_toml.as_bytes())
    }
}

/// Training windows (stride from `model`-independent settings) for each session.
pub fn training_windows(
    sessions: &[&SessionRecording],
    preprocess: &crate::preprocess::PreprocessConfig,
    window: &crate::types::WindowConfig,
) -> Result<Vec<SessionWindows>> {
    sessions
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let vectors = preprocess_session(s, preprocess, window.sample_rate_hz)?;
            let labels = s
                .labels
                .as_deref()
                .ok_or_else(|| Error::InsufficientData(format!("session {} is unlabeled", s.metadata.subject_id)))?;
            Ok(SessionWindows {
                session_id: format!("{}#{i}", s.metadata.subject_id),
                windows: segment_windows(&vectors, &s.timestamps(), Some(labels), window),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub k_max: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Parallel training jobs; results do not depend on it.
    pub threads: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            k_max: 4,
            repeats: 4,
            seed: 0,
            threads: threads_from_env(),
        }
    }
}

/// `GAITCTL_THREADS`, default 1.
pub fn threads_from_env() -> usize {
    std::env::var("GAITCTL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub k: usize,
    pub repeat: usize,
    pub subjects: Vec<String>,
    pub train_seed: u64,
    pub accuracy_with_fsm: f64,
    pub accuracy_without_fsm: f64,
    pub step_recall_with_fsm: f64,
    pub step_recall_without_fsm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub runs: usize,
    pub mean_accuracy_with_fsm: f64,
    pub mean_accuracy_without_fsm: f64,
    pub mean_step_recall_with_fsm: f64,
    pub mean_step_recall_without_fsm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub test_subjects: Vec<String>,
    pub rows: Vec<SweepRow>,
    pub runs: Vec<SweepRun>,
}

impl SweepTable {
    pub fn write_csv_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "k",
            "runs",
            "accuracy_without_fsm",
            "accuracy_with_fsm",
            "step_recall_without_fsm",
            "step_recall_with_fsm",
        ])
        .map_err(crate::types::csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.k.to_string(),
                r.runs.to_string(),
                r.mean_accuracy_without_fsm.to_string(),
                r.mean_accuracy_with_fsm.to_string(),
                r.mean_step_recall_without_fsm.to_string(),
                r.mean_step_recall_with_fsm.to_string(),
            ])
            .map_err(crate::types::csv_err)?;
        }
        w.flush().map_err(Error::Net)
    }
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// One subject and its labeled sessions.
#[derive(Debug, Clone)]
pub struct SubjectData {
    pub id: String,
    pub sessions: Vec<SessionRecording>,
}

pub struct SweepSetup<'a> {
    pub pool: &'a [SubjectData],
    pub test: &'a [SubjectData],
    pub train: &'a TrainConfig,
    pub arch: &'a TcnConfig,
    pub window: &'a crate::types::WindowConfig,
    pub preprocess: &'a crate::preprocess::PreprocessConfig,
    pub fsm: &'a FsmConfig,
}

fn sweep_plan(pool: usize, cfg: &SweepConfig) -> Vec<(usize, usize, Vec<usize>, u64)> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut plan = Vec::new();
    for k in 1..=cfg.k_max {
        let mut combos = combinations(pool, k);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(crate::synth::derive_seed(cfg.seed, k as u64));
        combos.shuffle(&mut rng);
        for r in 0..cfg.repeats {
            // fewer distinct combinations than repeats: reuse them with fresh seeds
            let combo = combos[r % combos.len()].clone();
            let seed = crate::synth::derive_seed(cfg.seed, (1000 * k + r) as u64);
            plan.push((k, r, combo, seed));
        }
    }
    plan
}

fn sweep_run(setup: &SweepSetup<'_>, k: usize, repeat: usize, combo: &[usize], seed: u64) -> Result<SweepRun> {
    let sessions: Vec<&SessionRecording> = combo.iter().flat_map(|&i| setup.pool[i].sessions.iter()).collect();
    let data = training_windows(&sessions, setup.preprocess, setup.window)?;
    let tcfg = TrainConfig {
        seed,
        ..setup.train.clone()
    };
    let (model, _) = train(&data, &tcfg, setup.arch, setup.window, setup.preprocess)?;
    let test: Vec<SessionRecording> = setup.test.iter().flat_map(|s| s.sessions.iter().cloned()).collect();
    let report = evaluate_sessions(&model, setup.fsm, &test)?;
    log::info!(
        "sweep k={k} repeat={repeat}: acc {:.4}/{:.4} recall {:.4}/{:.4}",
        report.without_fsm.frames.overall_accuracy,
        report.with_fsm.frames.overall_accuracy,
        report.without_fsm.step_recall,
        report.with_fsm.step_recall
    );
    Ok(SweepRun {
        k,
        repeat,
        subjects: combo.iter().map(|&i| setup.pool[i].id.clone()).collect(),
        train_seed: seed,
        accuracy_with_fsm: report.with_fsm.frames.overall_accuracy,
        accuracy_without_fsm: report.without_fsm.frames.overall_accuracy,
        step_recall_with_fsm: report.with_fsm.step_recall,
        step_recall_without_fsm: report.without_fsm.step_recall,
    })
}

/// Retrains on `repeats` different `k`-subject subsets of the pool for each
/// `k` in `1..=k_max` and scores every model on the fixed test subjects.
pub fn subject_sweep(setup: &SweepSetup<'_>, cfg: &SweepConfig) -> Result<SweepTable> {
    if cfg.k_max == 0 || cfg.repeats == 0 {
        return Err(Error::Config("sweep k_max and repeats must be >= 1".into()));
    }
    if setup.pool.len() < cfg.k_max {
        return Err(Error::InsufficientData(format!(
            "training pool has {} subjects, k_max is {}",
            setup.pool.len(),
            cfg.k_max
        )));
    }
    if setup.test.is_empty() {
        return Err(Error::InsufficientData("no test subjects".into()));
    }
    let plan = sweep_plan(setup.pool.len(), cfg);
    let threads = cfg.threads.max(1).min(plan.len());
    let mut results: Vec<Option<Result<SweepRun>>> = (0..plan.len()).map(|_| None).collect();
    if threads == 1 {
        for (slot, (k, r, combo, seed)) in results.iter_mut().zip(&plan) {
            *slot = Some(sweep_run(setup, *k, *r, combo, *seed));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let done = std::sync::Mutex::new(&mut results);
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    let Some((k, r, combo, seed)) = plan.get(i) else { break };
                    let res = sweep_run(setup, *k, *r, combo, *seed);
                    done.lock().unwrap()[i] = Some(res);
                });
            }
        });
    }
    let runs: Vec<SweepRun> = results
        .into_iter()
        .map(|r| r.expect("every planned run executed"))
        .collect::<Result<_>>()?;
    let rows = (1..=cfg.k_max)
        .map(|k| {
            let rs: Vec<&SweepRun> = runs.iter().filter(|r| r.k == k).collect();
            let mean = |f: fn(&SweepRun) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64;
            SweepRow {
                k,
                runs: rs.len(),
                mean_accuracy_with_fsm: mean(|r| r.accuracy_with_fsm),
                mean_accuracy_without_fsm: mean(|r| r.accuracy_without_fsm),
                mean_step_recall_with_fsm: mean(|r| r.step_recall_with_fsm),
                mean_step_recall_without_fsm: mean(|r| r.step_recall_without_fsm),
            }
        })
        .collect();
    Ok(SweepTable {
        test_subjects: setup.test.iter().map(|s| s.id.clone()).collect(),
        rows,
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub windows: usize,
    pub warmup: usize,
    pub total_ms: MeanStd,
    pub p99_ms: f64,
    pub preprocess_ms: MeanStd,
    pub forward_ms: MeanStd,
    pub fsm_ms: MeanStd,
    /// Per-window end-to-end latencies in measurement order.
    pub samples_ms: Vec<f64>,
}

impl LatencyReport {
    pub fn summary(&self) -> String {
        format!(
            "latency per window: {:.3} ms (p99 {:.3} ms, n={}); preprocess {:.4} ms, forward {:.3} ms, fsm {:.4} ms",
            self.total_ms, self.p99_ms, self.windows, self.preprocess_ms, self.forward_ms, self.fsm_ms
        )
    }
}

/// Nearest-rank percentile, `q` in (0, 1].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Times the single-threaded online path (preprocess one sample, classify
/// the latest window, advance the decoder) over `n_windows` windows after
/// `warmup` untimed ones. Samples are taken cyclically from `session`.
pub fn bench_latency(
    model: &TcnModel,
    fsm_cfg: &FsmConfig,
    session: &SessionRecording,
    n_windows: usize,
    warmup: usize,
) -> Result<LatencyReport> {
    if n_windows < 100 || warmup < 50 {
        return Err(Error::Config("latency benchmark needs n_windows >= 100 and warmup >= 50".into()));
    }
    if session.is_empty() {
        return Err(Error::InsufficientData("empty session".into()));
    }
    let mut pipeline = OnlinePipeline::new(model, fsm_cfg)?;
    let h = model.window.h;
    let (mut total, mut t_pre, mut t_fwd, mut t_fsm) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let step_us = (1e6 / model.window.sample_rate_hz) as u64;
    let mut produced = 0usize;
    for i in 0.. {
        if produced >= warmup + n_windows {
            break;
        }
        let mut raw = session.samples[i % session.len()];
        raw.t_us = (i as u64 + 1) * step_us;
        let (_, _, st) = std::hint::black_box(pipeline.push(&raw)?);
        if i + 1 < h {
            continue;
        }
        if produced >= warmup {
            t_pre.push(st.preprocess_ms);
            t_fwd.push(st.forward_ms);
            t_fsm.push(st.fsm_ms);
            total.push(st.preprocess_ms + st.forward_ms + st.fsm_ms);
        }
        produced += 1;
    }
    Ok(LatencyReport {
        windows: n_windows,
        warmup,
        total_ms: MeanStd::of(&total),
        p99_ms: percentile(&total, 0.99),
        preprocess_ms: MeanStd::of(&t_pre),
        forward_ms: MeanStd::of(&t_fwd),
        fsm_ms: MeanStd::of(&t_fsm),
        samples_ms: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use GaitPhase::*;

    fn iv(a: u64, b: u64) -> StepInterval {
        StepInterval {
            start_us: a,
            end_us: b,
            raw_score: 4.0,
            norm_score: 1.0,
            phases_seen: vec![],
        }
    }

    #[test]
    fn perfect_prediction() {
        let t = vec![Stance, TakeOff, Swing, Strike, Auxiliary, Stance];
        let m = frame_metrics(&t, &t).unwrap();
        assert_eq!(m.overall_accuracy, 1.0);
        for i in 0..NUM_PHASES {
            for j in 0..NUM_PHASES {
                assert_eq!(m.confusion[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn half_flipped() {
        let truth = vec![Stance, Strike, Stance, Strike];
        let pred = vec![Strike, Strike, Stance, Stance];
        assert_eq!(frame_metrics(&pred, &truth).unwrap().overall_accuracy, 0.5);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            frame_metrics(&[Stance], &[]),
            Err(Error::Length { left: 1, right: 0 })
        ));
    }

    #[test]
    fn absent_class_row_is_zero() {
        let m = frame_metrics(&[Stance, Swing], &[Stance, Stance]).unwrap();
        assert_eq!(m.per_class_recall[Swing.index()], None);
        assert_eq!(m.confusion[Swing.index()], [0.0; 5]);
        assert_eq!(m.confusion[0][0], 0.5);
    }

    #[test]
    fn iou_anchor() {
        let a = iv(0, 100_000);
        let b = iv(60_000, 160_000);
        assert!((temporal_iou(&a, &b) - 0.25).abs() < 1e-15);
        assert_eq!(match_steps(&[a], &[b], 0.5).matched(), 0);
    }

    #[test]
    fn identical_lists() {
        let s = vec![iv(0, 10), iv(20, 30)];
        let m = match_steps(&s, &s, 0.5);
        assert_eq!((m.recall(), m.precision()), (1.0, 1.0));
        assert!(m.pairs.iter().all(|p| p.start_error_ms == 0.0 && p.end_error_ms == 0.0));
    }

    #[test]
    fn partial_match() {
        let truth = vec![iv(0, 100), iv(200, 300), iv(400, 500)];
        let pred = vec![iv(0, 100), iv(210, 300)];
        let m = match_steps(&pred, &truth, 0.5);
        assert!((m.recall() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.precision(), 1.0);
        assert_eq!(m.pairs[1].start_error_ms, 0.01);
    }

    #[test]
    fn mean_std_display() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
        assert_eq!(format!("{m:.2}"), "2.00 ± 1.00");
        assert_eq!(MeanStd::of(&[]), MeanStd::default());
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.99), 99.0);
        assert_eq!(percentile(&v, 1.0), 100.0);
        assert_eq!(percentile(&[5.0], 0.99), 5.0);
    }

    #[test]
    fn combinations_count() {
        assert_eq!(combinations(4, 2).len(), 6);
        assert_eq!(combinations(4, 4), vec![vec![0, 1, 2, 3]]);
        assert_eq!(combinations(3, 1), vec![vec![0], vec![1], vec![2]]);
        assert!(combinations(2, 3).is_empty());
    }

    #[test]
    fn sweep_plan_reuses_combinations_with_new_seeds() {
        let cfg = SweepConfig {
            k_max: 4,
            repeats: 4,
            seed: 1,
            threads: 1,
        };
        let plan = sweep_plan(4, &cfg);
        assert_eq!(plan.len(), 16);
        let k4: Vec<_> = plan.iter().filter(|p| p.0 == 4).collect();
        assert!(k4.iter().all(|p| p.2 == vec![0, 1, 2, 3]));
        let mut seeds: Vec<u64> = k4.iter().map(|p| p.3).collect();
        seeds.dedup();
        assert_eq!(seeds.len(), 4);
        let k2: Vec<_> = plan.iter().filter(|p| p.0 == 2).map(|p| p.2.clone()).collect();
        let mut uniq = k2.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 4);
    }
}
