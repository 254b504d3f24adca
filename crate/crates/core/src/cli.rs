//! Command-line driver. Each subcommand maps onto one library entry point;
//! failures print a single `error: kind=<Kind> msg="..."` line and remove
//! whatever the command had created.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{bench_latency, evaluate_sessions, subject_sweep, training_windows, SubjectData, SweepSetup};
use crate::fsm::{decode_sequence, write_step_log_to};
use crate::stream::{run_online, serve_replay, DirSink, PredictionWriter};
use crate::synth::{generate_dataset, generate_session, load_dataset, make_profile, DatasetSession, GaitStrategy};
use crate::tcn::{load_model, predict_session, save_model, train};
use crate::types::{SessionMetadata, SessionRecording};

#[derive(Debug, Parser)]
#[command(name = "gaitctl", version, about = "Gait-phase classification and step detection from a crutch IMU")]
pub struct Cli {
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set fsm.alpha=0.5`. Repeatable; applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic dataset (one directory per subject plus manifest.json).
    Synth {
        /// Number of subjects.
        #[arg(long)]
        subjects: usize,
        /// Base seed; every subject and session seed derives from it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (created).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a classifier; writes MODEL, MODEL.history.csv and MODEL.config.toml.
    Train {
        /// Dataset directory produced by `synth`.
        #[arg(long)]
        data: PathBuf,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subject ids to train on (default: all).
        #[arg(long, value_delimiter = ',')]
        subjects: Option<Vec<String>>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Per-frame predictions for one session CSV, plus a step log at PRED.steps.csv.
    Infer {
        #[arg(long)]
        model: PathBuf,
        /// Session CSV.
        #[arg(long)]
        session: PathBuf,
        /// Prediction CSV.
        #[arg(long)]
        out: PathBuf,
        /// Skip the step decoder: empty refined column, no step log.
        #[arg(long)]
        no_fsm: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a model on every labeled session of a dataset, with and without the decoder.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated subject ids to evaluate (default: all).
        #[arg(long, value_delimiter = ',')]
        subjects: Option<Vec<String>>,
        /// Report directory (created).
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Retrain on k = 1..K subject subsets and score each on held-out subjects.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        /// Largest training subset size (overrides sweep.k_max).
        #[arg(long)]
        k_max: Option<usize>,
        /// Subsets per k (overrides sweep.repeats).
        #[arg(long)]
        repeats: Option<usize>,
        /// Report directory (created).
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Time the single-threaded online path per frame.
    Bench {
        #[arg(long)]
        model: PathBuf,
        /// Timed windows (>= 100).
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        /// Untimed warm-up windows (>= 50).
        #[arg(long, default_value_t = 100)]
        warmup: usize,
        /// Session CSV to draw samples from (default: a generated synthetic session).
        #[arg(long)]
        session: Option<PathBuf>,
        /// Also write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Serve one session over TCP to the first client, paced by its timestamps.
    Replay {
        #[arg(long)]
        session: PathBuf,
        /// Listen address host:port.
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        /// Playback speed multiplier; 0 sends as fast as possible.
        #[arg(long, default_value_t = 1.0)]
        rate: f64,
    },
    /// Connect to a replay source and run the online pipeline, writing into DIR.
    Run {
        #[arg(long)]
        model: PathBuf,
        /// Replay address host:port.
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        /// Output directory (created).
        #[arg(long)]
        out: PathBuf,
        /// Seconds to keep retrying the connection.
        #[arg(long, default_value_t = 10.0)]
        connect_wait: f64,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

/// Paths created by a command, removed again if it fails.
#[derive(Default)]
struct Outputs {
    created: Vec<PathBuf>,
}

impl Outputs {
    fn claim(&mut self, path: &Path) -> PathBuf {
        if !path.exists() {
            self.created.push(path.to_path_buf());
        }
        path.to_path_buf()
    }

    fn discard(&self) {
        for p in self.created.iter().rev() {
            let r = if p.is_dir() {
                std::fs::remove_dir_all(p)
            } else {
                std::fs::remove_file(p)
            };
            if let Err(e) = r {
                if e.kind() != std::io::ErrorKind::NotFound {
                    log::warn!("could not remove partial output {}: {e}", p.display());
                }
            }
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// `PRED.csv` → `PRED.steps.csv`.
pub fn step_log_path(pred: &Path) -> PathBuf {
    pred.with_extension("steps.csv")
}

fn labeled(sessions: Vec<DatasetSession>) -> Vec<SessionRecording> {
    sessions.into_iter().map(|s| s.recording).collect()
}

fn cmd_synth(subjects: usize, seed: u64, out: &Path, cfg: &RunConfig, outputs: &mut Outputs) -> Result<()> {
    outputs.claim(out);
    let manifest = generate_dataset(subjects, seed, &cfg.synth, out)?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    let shares = manifest.class_shares();
    println!(
        "wrote {} sessions for {} subjects to {}; class shares {:.3?}",
        manifest.sessions.len(),
        manifest.subjects.len(),
        out.display(),
        shares
    );
    Ok(())
}

fn cmd_train(data: &Path, out: &Path, subjects: Option<&[String]>, cfg: &RunConfig, outputs: &mut Outputs) -> Result<()> {
    let (_, sessions) = load_dataset(data, subjects)?;
    if sessions.is_empty() {
        return Err(Error::InsufficientData(format!("no sessions selected from {}", data.display())));
    }
    let recordings = labeled(sessions);
    let refs: Vec<&SessionRecording> = recordings.iter().collect();
    let windows = training_windows(&refs, &cfg.preprocess, &cfg.window)?;
    let (model, history) = train(&windows, &cfg.train, &cfg.tcn, &cfg.window, &cfg.preprocess)?;
    let history_path = outputs.claim(&with_suffix(out, ".history.csv"));
    let config_path = outputs.claim(&with_suffix(out, ".config.toml"));
    outputs.claim(out);
    save_model(&model, out)?;
    history.write_csv(&history_path)?;
    write_text(&config_path, &cfg.to_toml())?;
    println!(
        "trained {} parameters on {} sessions ({} validation), {} epochs, best epoch {}; model {}",
        model.weights.param_count(),
        history.train_sessions.len(),
        history.val_sessions.len(),
        history.epochs.len(),
        history.best_epoch.map_or_else(|| "-".to_string(), |e| e.to_string()),
        out.display()
    );
    Ok(())
}

fn cmd_infer(model: &Path, session: &Path, out: &Path, no_fsm: bool, cfg: &RunConfig, outputs: &mut Outputs) -> Result<()> {
    let model = load_model(model)?;
    let recording = SessionRecording::read_csv(session)?;
    let preds = predict_session(&model, &recording)?;
    let decoded = if no_fsm {
        None
    } else {
        let phases: Vec<_> = preds.iter().map(|p| p.phase).collect();
        Some(decode_sequence(&phases, &recording.timestamps(), &cfg.fsm)?)
    };
    let out_path = outputs.claim(out);
    let f = std::fs::File::create(&out_path).map_err(|e| Error::io(&out_path, e))?;
    let mut w = PredictionWriter::new(std::io::BufWriter::new(f))?;
    for (i, p) in preds.iter().enumerate() {
        w.write(p, decoded.as_ref().map(|(refined, _)| refined[i]))?;
    }
    w.flush()?;
    match decoded {
        Some((_, events)) => {
            let steps_path = outputs.claim(&step_log_path(out));
            let f = std::fs::File::create(&steps_path).map_err(|e| Error::io(&steps_path, e))?;
            write_step_log_to(std::io::BufWriter::new(f), events.iter().map(|e| &e.interval))?;
            println!("{} frames, {} steps; wrote {} and {}", preds.len(), events.len(), out.display(), steps_path.display());
        }
        None => println!("{} frames; wrote {}", preds.len(), out.display()),
    }
    Ok(())
}

fn cmd_eval(model: &Path, data: &Path, subjects: Option<&[String]>, report: &Path, cfg: &RunConfig, outputs: &mut Outputs) -> Result<()> {
    let model = load_model(model)?;
    let (_, sessions) = load_dataset(data, subjects)?;
    if sessions.is_empty() {
        return Err(Error::InsufficientData(format!("no sessions selected from {}", data.display())));
    }
    let rep = evaluate_sessions(&model, &cfg.fsm, &labeled(sessions))?;
    outputs.claim(report);
    rep.write_dir(report, &cfg.to_toml())?;
    print!("{}", rep.to_text());
    Ok(())
}

fn cmd_sweep(data: &Path, report: &Path, cfg: &RunConfig, outputs: &mut Outputs) -> Result<()> {
    let (manifest, sessions) = load_dataset(data, None)?;
    let mut subjects: Vec<SubjectData> = manifest
        .subjects
        .iter()
        .map(|s| SubjectData {
            id: s.id.clone(),
            sessions: Vec::new(),
        })
        .collect();
    subjects.sort_by(|a, b| a.id.cmp(&b.id));
    for s in sessions {
        if let Some(d) = subjects.iter_mut().find(|d| d.id == s.subject) {
            d.sessions.push(s.recording);
        }
    }
    let n_test = cfg.sweep.test_subjects;
    if n_test == 0 || subjects.len() < n_test + cfg.sweep.k_max {
        return Err(Error::InsufficientData(format!(
            "sweep needs {} test subjects plus a pool of at least k_max = {}; dataset has {}",
            n_test,
            cfg.sweep.k_max,
            subjects.len()
        )));
    }
    let test = subjects.split_off(subjects.len() - n_test);
    let setup = SweepSetup {
        pool: &subjects,
        test: &test,
        train: &cfg.train,
        arch: &cfg.tcn,
        window: &cfg.window,
        preprocess: &cfg.preprocess,
        fsm: &cfg.fsm,
    };
    let sweep_cfg = cfg.sweep.to_sweep_config();
    log::info!("sweep with {} thread(s)", sweep_cfg.threads);
    let table = subject_sweep(&setup, &sweep_cfg)?;
    outputs.claim(report);
    std::fs::create_dir_all(report).map_err(|e| Error::io(report, e))?;
    let csv_path = report.join("sweep.csv");
    let f = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    table.write_csv_to(std::io::BufWriter::new(f))?;
    let json = serde_json::to_string_pretty(&table).map_err(|e| Error::parse("sweep report", e))?;
    write_text(&report.join("sweep.json"), &(json + "\n"))?;
    write_text(&report.join("config.toml"), &cfg.to_toml())?;
    println!("test subjects: {}", table.test_subjects.join(","));
    println!("{:>3} {:>5} {:>12} {:>12} {:>12} {:>12}", "k", "runs", "acc w/o", "acc w/", "recall w/o", "recall w/");
    for r in &table.rows {
        println!(
            "{:>3} {:>5} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
            r.k,
            r.runs,
            r.mean_accuracy_without_fsm,
            r.mean_accuracy_with_fsm,
            r.mean_step_recall_without_fsm,
            r.mean_step_recall_with_fsm
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    model: &Path,
    iters: usize,
    warmup: usize,
    session: Option<&Path>,
    out: Option<&Path>,
    cfg: &RunConfig,
    outputs: &mut Outputs,
) -> Result<()> {
    let model = load_model(model)?;
    let recording = match session {
        Some(p) => SessionRecording::read_csv(p)?,
        None => {
            let profile = make_profile(0, GaitStrategy::TwoPoint);
            let mut s = generate_session(&profile, &cfg.synth, 0)?.recording;
            s.metadata = SessionMetadata::default();
            s
        }
    };
    let rep = bench_latency(&model, &cfg.fsm, &recording, iters, warmup)?;
    println!("{}", rep.summary());
    println!("Table-style: {:.3} ms", rep.total_ms);
    if let Some(out) = out {
        let p = outputs.claim(out);
        let json = serde_json::to_string_pretty(&rep).map_err(|e| Error::parse("latency report", e))?;
        write_text(&p, &(json + "\n"))?;
    }
    Ok(())
}

fn cmd_replay(session: &Path, addr: &str, rate: f64) -> Result<()> {
    let recording = SessionRecording::read_csv(session)?;
    let stats = serve_replay(&recording, addr, rate)?;
    println!("sent {} frames in {:.3} s", stats.frames_sent, stats.elapsed_s);
    Ok(())
}

fn cmd_run(model: &Path, addr: &str, out: &Path, connect_wait: f64, cfg: &RunConfig, outputs: &mut Outputs) -> Result<()> {
    if !(connect_wait >= 0.0 && connect_wait.is_finite()) {
        return Err(Error::Config("--connect-wait must be >= 0".into()));
    }
    let model = load_model(model)?;
    outputs.claim(out);
    let mut sink = DirSink::create(out)?;
    let summary = run_online(&model, &cfg.fsm, addr, Duration::from_secs_f64(connect_wait), &mut sink)?;
    sink.flush()?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::parse("summary", e))?;
    write_text(&out.join("summary.json"), &(json + "\n"))?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    println!(
        "{} frames ({} malformed), {} steps, latency {:.3} ms (p99 {:.3} ms), max queue depth {}",
        summary.frames,
        summary.malformed,
        summary.steps,
        summary.latency_ms,
        summary.latency_p99_ms,
        summary.max_queue_depth
    );
    Ok(())
}

fn dispatch(command: &Command, outputs: &mut Outputs) -> Result<()> {
    match command {
        Command::Synth { subjects, seed, out, cfg } => cmd_synth(*subjects, *seed, out, &cfg.load()?, outputs),
        Command::Train {
            data,
            out,
            subjects,
            cfg,
        } => cmd_train(data, out, subjects.as_deref(), &cfg.load()?, outputs),
        Command::Infer {
            model,
            session,
            out,
            no_fsm,
            cfg,
        } => cmd_infer(model, session, out, *no_fsm, &cfg.load()?, outputs),
        Command::Eval {
            model,
            data,
            subjects,
            report,
            cfg,
        } => cmd_eval(model, data, subjects.as_deref(), report, &cfg.load()?, outputs),
        Command::Sweep {
            data,
            k_max,
            repeats,
            report,
            cfg,
        } => {
            let mut c = cfg.load()?;
            if let Some(k) = k_max {
                c.sweep.k_max = *k;
            }
            if let Some(r) = repeats {
                c.sweep.repeats = *r;
            }
            cmd_sweep(data, report, &c, outputs)
        }
        Command::Bench {
            model,
            iters,
            warmup,
            session,
            out,
            cfg,
        } => cmd_bench(model, *iters, *warmup, session.as_deref(), out.as_deref(), &cfg.load()?, outputs),
        Command::Replay { session, addr, rate } => cmd_replay(session, addr, *rate),
        Command::Run {
            model,
            addr,
            out,
            connect_wait,
            cfg,
        } => cmd_run(model, addr, out, *connect_wait, &cfg.load()?, outputs),
    }
}

/// Machine-readable one-line error.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    format!("error: kind={} msg=\"{msg}\"", e.kind())
}

/// Runs a parsed command line; on failure removes partial outputs.
pub fn execute(cli: &Cli) -> Result<()> {
    let mut outputs = Outputs::default();
    let r = dispatch(&cli.command, &mut outputs);
    if r.is_err() {
        outputs.discard();
    }
    r
}

/// Entry point for the binary: returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}
