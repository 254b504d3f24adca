//! Acceptance runner. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset: `cargo test --test acceptance -- 4 9`.

#[path = "common/mod.rs"]
mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use gaitctl::eval::{bench_latency, evaluate_sessions, match_steps, subject_sweep, training_windows, SubjectData, SweepConfig, SweepSetup, SweepTable};
use gaitctl::fsm::{decode_sequence, fsm_step, score_attempt, ground_truth_steps, uniform_timestamps, FsmConfig, FsmState};
use gaitctl::synth::{generate_session, generate_subjects, make_profile, subject_id, GaitStrategy, SynthConfig};
use gaitctl::tcn::{dilated_causal_conv, init_weights, param_count, train, Conv1d, TcnModel, TrainConfig};
use gaitctl::GaitPhase::{self, *};
use gaitctl::{PreprocessConfig, SessionRecording, TcnConfig, WindowConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;
const GRAD_SAMPLES_PER_TYPE: usize = 200;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const STEP_TIMING_TOL_MS: f64 = 50.0;
const MIN_ACCURACY_WITH_FSM: f64 = 0.90;
const MIN_RECALL_WITH_FSM: f64 = 0.90;
const TRAIN_BUDGET: Duration = Duration::from_secs(10 * 60);
const MIN_RECALL_K1: f64 = 0.75;
const MIN_SPEARMAN: f64 = 0.0;
const SWEEP_BUDGET: Duration = Duration::from_secs(40 * 60);
const MAX_MEAN_LATENCY_MS: f64 = 5.0;
const MAX_P99_LATENCY_MS: f64 = 10.0;
const REFERENCE_PARAMS: f64 = 67_398.0;
const PARAM_TOL: f64 = 0.02;

const DATA_SEED: u64 = 0;
const N_SUBJECTS: usize = 6;
const N_TEST: usize = 2;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Data and model shared by the training, sweep and latency criteria.
#[derive(Default)]
struct Shared {
    subjects: Option<Vec<SubjectData>>,
    model: Option<(TcnModel, Duration)>,
}

impl Shared {
    fn subjects(&mut self) -> &[SubjectData] {
        self.subjects.get_or_insert_with(|| {
            generate_subjects(N_SUBJECTS, DATA_SEED, &SynthConfig::default())
                .unwrap()
                .into_iter()
                .enumerate()
                .map(|(i, sessions)| SubjectData {
                    id: subject_id(i),
                    sessions: sessions.into_iter().map(|s| s.recording).collect(),
                })
                .collect()
        })
    }

    fn split(&mut self) -> (Vec<SubjectData>, Vec<SubjectData>) {
        let all = self.subjects().to_vec();
        let (pool, test) = all.split_at(all.len() - N_TEST);
        (pool.to_vec(), test.to_vec())
    }

    fn model(&mut self) -> &(TcnModel, Duration) {
        if self.model.is_none() {
            let (pool, _) = self.split();
            let start = Instant::now();
            let sessions: Vec<&SessionRecording> = pool.iter().flat_map(|s| &s.sessions).collect();
            let data = training_windows(&sessions, &PreprocessConfig::default(), &WindowConfig::default()).unwrap();
            let (model, _) = train(
                &data,
                &TrainConfig::default(),
                &TcnConfig::default(),
                &WindowConfig::default(),
                &PreprocessConfig::default(),
            )
            .unwrap();
            self.model = Some((model, start.elapsed()));
        }
        self.model.as_ref().unwrap()
    }
}

fn gradients(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let mini = TcnConfig {
        channels_per_block: 4,
        dense_units: 6,
        spatial_dropout: 0.0,
        ..TcnConfig::default()
    };
    let medium = TcnConfig {
        channels_per_block: 24,
        dense_units: 16,
        spatial_dropout: 0.0,
        ..TcnConfig::default()
    };
    let full = gradient_check(&mini, 11, None);
    let sampled = gradient_check(&medium, 12, Some(GRAD_SAMPLES_PER_TYPE));
    let took = start.elapsed();
    let worst = full.worst().max(sampled.worst());
    let types_ok = full.per_type.len() == 3 && sampled.per_type.len() == 3;
    let pass = types_ok && worst < GRAD_TOL && sampled.min_checked() >= GRAD_SAMPLES_PER_TYPE && took < GRAD_BUDGET;
    let per: Vec<String> = sampled.per_type.iter().map(|(t, n, w)| format!("{t} {n} ({w:.1e})")).collect();
    outcome(
        pass,
        format!(
            "worst rel err {worst:.2e} (tol {GRAD_TOL:.0e}); all {} mini params; sampled {}; {:.1} s",
            full.per_type.iter().map(|t| t.1).sum::<usize>(),
            per.join(", "),
            took.as_secs_f64()
        ),
    )
}

fn causality(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rows = |n: usize, c: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..c).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
    };
    let mut failures = Vec::new();

    // a single dilated convolution
    let mut conv = Conv1d::<f64>::zeros(3, 4, 2, 2);
    for v in conv.weight.iter_mut().chain(conv.bias.iter_mut()) {
        *v = rng.random_range(-1.0..1.0);
    }
    let base = rows(20, 3, &mut rng);
    let y0 = dilated_causal_conv(&matrix(&base), &conv);
    for t in 0..20 {
        let mut x = base.clone();
        x[t][0] += 7.0;
        let y = dilated_causal_conv(&matrix(&x), &conv);
        if (0..t).any(|s| y.row(s) != y0.row(s)) {
            failures.push(format!("conv output before {t} changed"));
        }
    }

    // whole network: only the last receptive-field frames matter
    let cfg = TcnConfig::default();
    let rf = cfg.receptive_field();
    let w = init_weights(&cfg, 3);
    let base = rows(16, 9, &mut rng);
    let y0 = w.logits(&matrix(&base));
    for t in 0..16 {
        let mut x = base.clone();
        x[t].iter_mut().for_each(|v| *v += 100.0);
        let changed = w.logits(&matrix(&x)) != y0;
        if changed != (t >= 16 - rf) {
            failures.push(format!("network frame {t}: changed={changed}"));
        }
    }
    let seq = w.sequence_logits(&matrix(&base));
    let mut x = base.clone();
    x[10].iter_mut().for_each(|v| *v -= 50.0);
    let seq2 = w.sequence_logits(&matrix(&x));
    if (0..10).any(|s| seq.row(s) != seq2.row(s)) {
        failures.push("sequence output saw a future frame".into());
    }

    // decoder: outputs up to frame i depend only on frames up to i
    let fsm = FsmConfig::default();
    for trial in 0..200 {
        let n = 120;
        let a: Vec<GaitPhase> = (0..n).map(|_| phase_of(rng.random_range(0..5))).collect();
        let cut = rng.random_range(0..n);
        let mut b = a.clone();
        for p in b.iter_mut().skip(cut) {
            *p = phase_of(rng.random_range(0..5));
        }
        let t = uniform_timestamps(n, 100.0);
        let (mut sa, mut sb) = (FsmState::new(), FsmState::new());
        for i in 0..cut {
            if fsm_step(&mut sa, a[i], t[i], &fsm) != fsm_step(&mut sb, b[i], t[i], &fsm) {
                failures.push(format!("decoder trial {trial} frame {i}"));
                break;
            }
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("conv, network (receptive field {rf}) and decoder ignore future frames")
        } else {
            format!("{} violations, first: {}", failures.len(), failures[0])
        },
    )
}

fn exhaustive(_: &mut Shared) -> Outcome {
    let cfg = FsmConfig {
        debounce_k: 1,
        ..FsmConfig::default()
    };
    let t = uniform_timestamps(6, 100.0);
    let total = 5usize.pow(6);
    let mut bad = 0;
    let mut emitted = 0;
    for i in 0..total {
        let seq = sequence_from_index(i, 6);
        let (_, events) = decode_sequence(&seq, &t, &cfg).unwrap();
        let got: Vec<RefStep> = events
            .iter()
            .map(|e| RefStep {
                start_us: e.interval.start_us,
                end_us: e.interval.end_us,
                raw: e.interval.raw_score as usize,
            })
            .collect();
        emitted += got.len();
        if got != reference_decode(&seq, &t, &cfg) {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{total} sequences, {bad} mismatches, {emitted} steps emitted"))
}

fn expand(segs: &[(GaitPhase, usize)]) -> Vec<GaitPhase> {
    segs.iter().flat_map(|&(p, n)| std::iter::repeat_n(p, n)).collect()
}

fn scoring(_: &mut Shared) -> Outcome {
    let cfg = FsmConfig::default();
    let decode = |segs: &[(GaitPhase, usize)]| {
        let labels = expand(segs);
        decode_sequence(&labels, &uniform_timestamps(labels.len(), 100.0), &cfg).unwrap().1
    };
    let full = decode(&[(Stance, 20), (TakeOff, 10), (Swing, 10), (Strike, 10), (Stance, 20)]);
    let three = decode(&[(Stance, 20), (TakeOff, 10), (Strike, 10), (Stance, 20)]);
    // TakeOff then Stance only: closed by the next TakeOff with two phases seen
    let two = decode(&[(Stance, 20), (TakeOff, 10), (Stance, 20), (TakeOff, 10), (Swing, 10), (Strike, 10), (Stance, 20)]);
    let scores = |e: &[gaitctl::StepEvent]| e.iter().map(|s| (s.interval.raw_score, s.interval.norm_score)).collect::<Vec<_>>();
    let lone = score_attempt(&[TakeOff, Stance]).unwrap();
    let pass = scores(&full) == [(4.0, 1.0)]
        && scores(&three) == [(3.0, 0.75)]
        && (lone.raw, lone.norm) == (2.0, 0.5)
        && scores(&two) == [(4.0, 1.0)];
    outcome(
        pass,
        format!(
            "full cycle {:?}; missing swing {:?}; two-phase attempt scores {}/{} and is suppressed at alpha {} (emitted {:?})",
            scores(&full),
            scores(&three),
            lone.raw,
            lone.norm,
            cfg.alpha,
            scores(&two)
        ),
    )
}

fn ground_truth(_: &mut Shared) -> Outcome {
    let fsm = FsmConfig::default();
    let quiet = SynthConfig {
        noise_scale: 0.0,
        ..SynthConfig::default()
    };
    let (mut sessions, mut steps, mut worst) = (0, 0, 0.0f64);
    let mut failures = Vec::new();
    for (seed, strategy) in (1..=6u64).zip(GaitStrategy::ALL.iter().cycle()) {
        for idx in 0..2 {
            let syn = generate_session(&make_profile(seed, *strategy), &quiet, idx).unwrap();
            let gt = ground_truth_steps(&syn.recording, &fsm).unwrap();
            let pred: Vec<_> = gt.iter().map(|e| e.interval.clone()).collect();
            let m = match_steps(&pred, &syn.steps, 0.5);
            sessions += 1;
            steps += syn.steps.len();
            if gt.len() != syn.steps.len() || m.matched() != syn.steps.len() {
                failures.push(format!("seed {seed} session {idx}: {} decoded, {} true", gt.len(), syn.steps.len()));
            }
            for p in &m.pairs {
                worst = worst.max(p.start_error_ms.abs()).max(p.end_error_ms.abs());
            }
        }
    }
    let pass = failures.is_empty() && worst <= STEP_TIMING_TOL_MS;
    outcome(
        pass,
        format!(
            "{sessions} sessions, {steps} steps, worst boundary error {worst:.1} ms (tol {STEP_TIMING_TOL_MS} ms){}",
            failures.first().map(|f| format!("; {f}")).unwrap_or_default()
        ),
    )
}

fn training(shared: &mut Shared) -> Outcome {
    let (_, test) = shared.split();
    let (model, took) = shared.model();
    let took = *took;
    let sessions: Vec<SessionRecording> = test.iter().flat_map(|s| s.sessions.iter().cloned()).collect();
    let r = evaluate_sessions(model, &FsmConfig::default(), &sessions).unwrap();
    let (acc_w, acc_wo) = (r.with_fsm.frames.overall_accuracy, r.without_fsm.frames.overall_accuracy);
    let (rec_w, rec_wo) = (r.with_fsm.step_recall, r.without_fsm.step_recall);
    let pass = acc_w >= MIN_ACCURACY_WITH_FSM
        && rec_w >= MIN_RECALL_WITH_FSM
        && acc_w >= acc_wo
        && rec_w >= rec_wo
        && took < TRAIN_BUDGET;
    outcome(
        pass,
        format!(
            "{} train / {} test subjects: accuracy {acc_w:.4} with decoder vs {acc_wo:.4} without, step recall {rec_w:.4} vs {rec_wo:.4}; trained in {:.0} s",
            N_SUBJECTS - N_TEST,
            N_TEST,
            took.as_secs_f64()
        ),
    )
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman correlation; zero when either side is constant.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

fn sweep(shared: &mut Shared) -> Outcome {
    let (pool, test) = shared.split();
    let (train_cfg, arch, window, pre, fsm) = (
        TrainConfig::default(),
        TcnConfig::default(),
        WindowConfig::default(),
        PreprocessConfig::default(),
        FsmConfig::default(),
    );
    let setup = SweepSetup {
        pool: &pool,
        test: &test,
        train: &train_cfg,
        arch: &arch,
        window: &window,
        preprocess: &pre,
        fsm: &fsm,
    };
    let start = Instant::now();
    let table: SweepTable = subject_sweep(&setup, &SweepConfig::default()).unwrap();
    let took = start.elapsed();
    let k: Vec<f64> = table.rows.iter().map(|r| r.k as f64).collect();
    let accuracy: Vec<f64> = table.rows.iter().map(|r| r.mean_accuracy_with_fsm).collect();
    let rho = spearman(&k, &accuracy);
    let k1 = table.rows[0].mean_step_recall_with_fsm;
    let rows: Vec<String> = table
        .rows
        .iter()
        .map(|r| format!("k={} acc {:.4} recall {:.3}", r.k, r.mean_accuracy_with_fsm, r.mean_step_recall_with_fsm))
        .collect();
    outcome(
        k1 >= MIN_RECALL_K1 && rho >= MIN_SPEARMAN && took < SWEEP_BUDGET,
        format!(
            "{} runs; with decoder: {}; spearman(k, mean accuracy) {rho:.3}; {:.0} s",
            table.runs.len(),
            rows.join(", "),
            took.as_secs_f64()
        ),
    )
}

fn latency(shared: &mut Shared) -> Outcome {
    let session = shared.subjects()[0].sessions[0].clone();
    let (model, _) = shared.model();
    let r = bench_latency(model, &FsmConfig::default(), &session, 1000, 100).unwrap();
    outcome(
        r.total_ms.mean < MAX_MEAN_LATENCY_MS && r.p99_ms < MAX_P99_LATENCY_MS,
        format!(
            "{} windows: {:.4} ± {:.4} ms per frame, p99 {:.4} ms (limits {MAX_MEAN_LATENCY_MS} / {MAX_P99_LATENCY_MS} ms)",
            r.windows, r.total_ms.mean, r.total_ms.std, r.p99_ms
        ),
    )
}

fn parameters(_: &mut Shared) -> Outcome {
    let n = param_count(&TcnConfig::default());
    let dev = (n as f64 - REFERENCE_PARAMS) / REFERENCE_PARAMS;
    outcome(
        dev.abs() <= PARAM_TOL,
        format!("{n} parameters, {:+.2}% from {REFERENCE_PARAMS} (tol {:.0}%)", dev * 100.0, PARAM_TOL * 100.0),
    )
}

const BIN: &str = env!("CARGO_BIN_EXE_gaitctl");
const QUICK: &[&str] = &["--set", "synth.laps=1", "--set", "train.max_epochs=3"];

fn gaitctl(args: &[&str]) -> Result<(), String> {
    let o = Command::new(BIN).args(args).output().map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr).trim()))
    }
}

fn tree(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn pipeline_once(root: &Path) -> Result<(), String> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (data, model, report) = (root.join("data"), root.join("model.json"), root.join("report"));
    let with = |args: Vec<String>| args.into_iter().chain(QUICK.iter().map(|x| x.to_string())).collect::<Vec<_>>();
    for args in [
        with(vec!["synth".into(), "--subjects".into(), "3".into(), "--seed".into(), "11".into(), "--out".into(), s(&data)]),
        with(vec!["train".into(), "--data".into(), s(&data), "--out".into(), s(&model), "--subjects".into(), "subject_00,subject_01".into()]),
        with(vec!["eval".into(), "--model".into(), s(&model), "--data".into(), s(&data), "--subjects".into(), "subject_02".into(), "--report".into(), s(&report)]),
    ] {
        gaitctl(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
    }
    Ok(())
}

fn determinism(_: &mut Shared) -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    if let Err(e) = pipeline_once(a.path()).and_then(|_| pipeline_once(b.path())) {
        return outcome(false, e);
    }
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let differing: Vec<&String> = ta.keys().filter(|k| ta.get(*k) != tb.get(*k)).collect();
    outcome(
        differing.is_empty() && ta.len() == tb.len(),
        format!("synth, train and eval run twice: {} files compared, {} differ", ta.len(), differing.len()),
    )
}

fn replay_parity(_: &mut Shared) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    if let Err(e) = pipeline_once(root) {
        return outcome(false, e);
    }
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (model, session, pred, online) =
        (root.join("model.json"), root.join("data/subject_02/session_00.csv"), root.join("pred.csv"), root.join("online"));
    if let Err(e) = gaitctl(&["infer", "--model", &s(&model), "--session", &s(&session), "--out", &s(&pred)]) {
        return outcome(false, e);
    }
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut server = Command::new(BIN)
        .args(["replay", "--session", &s(&session), "--addr", &addr, "--rate", "0"])
        .stdout(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let run = gaitctl(&["run", "--model", &s(&model), "--addr", &addr, "--out", &s(&online)]);
    let served = server.wait().map(|st| st.success()).unwrap_or(false);
    if let Err(e) = run {
        return outcome(false, e);
    }
    let offline = std::fs::read(root.join("pred.steps.csv")).unwrap();
    let streamed = std::fs::read(online.join("steps.csv")).unwrap();
    let steps = offline.iter().filter(|&&c| c == b'\n').count().saturating_sub(1);
    outcome(
        served && offline == streamed && steps > 0,
        format!(
            "{steps} steps; streamed step log {} the offline one",
            if offline == streamed { "is byte-identical to" } else { "differs from" }
        ),
    )
}

type Criterion = fn(&mut Shared) -> Outcome;

fn main() {
    let criteria: [(&str, Criterion); 11] = [
        ("gradients match finite differences", gradients),
        ("causal convolution, network and decoder", causality),
        ("exhaustive length-6 decoder check", exhaustive),
        ("step score anchors", scoring),
        ("ground-truth steps from noise-free labels", ground_truth),
        ("train on 4 subjects, test on 2", training),
        ("subject-count sweep", sweep),
        ("online latency", latency),
        ("parameter count", parameters),
        ("byte-identical reruns", determinism),
        ("replay/run matches offline inference", replay_parity),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut shared = Shared::default();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let o = f(&mut shared);
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} {n:>2} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
