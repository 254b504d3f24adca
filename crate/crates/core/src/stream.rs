//! Text-over-TCP replay of recorded sessions and the online pipeline that
//! consumes it.
//!
//! Wire format: one sample per line, `t_us ax ay az wx wy wz qw qx qy qz`,
//! single-space separated, floats in shortest round-trip decimal form.

use std::collections::VecDeque;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{percentile, MeanStd};
use crate::fsm::{fsm_step, FsmConfig, FsmState, StepEvent, StepLogWriter};
use crate::preprocess::Preprocessor;
use crate::quat::Quaternion;
use crate::tcn::{softmax, FramePrediction, Matrix, TcnModel};
use crate::types::{GaitPhase, RawImuSample, SessionRecording, NUM_CHANNELS, NUM_PHASES};

/// One sample on the wire. The magnetometer is not transmitted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireFrame {
    pub t_us: u64,
    pub accel: [f64; 3],
    pub gyro: [f64; 3],
    pub orientation: Quaternion,
}

pub const WIRE_FIELDS: usize = 11;

impl From<&RawImuSample> for WireFrame {
    fn from(s: &RawImuSample) -> Self {
        Self {
            t_us: s.t_us,
            accel: s.a_body,
            gyro: s.omega_body,
            orientation: s.orientation,
        }
    }
}

impl From<WireFrame> for RawImuSample {
    fn from(f: WireFrame) -> Self {
        Self {
            t_us: f.t_us,
            a_body: f.accel,
            omega_body: f.gyro,
            orientation: f.orientation,
            mag: None,
        }
    }
}

impl fmt::Display for WireFrame {
    /// Renders without the trailing newline.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [ax, ay, az] = self.accel;
        let [wx, wy, wz] = self.gyro;
        let q = self.orientation;
        write!(
            f,
            "{} {ax} {ay} {az} {wx} {wy} {wz} {} {} {} {}",
            self.t_us, q.w, q.x, q.y, q.z
        )
    }
}

impl FromStr for WireFrame {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let line = line.strip_suffix('\n').unwrap_or(line);
        let line = line.strip_suffix('\r').unwrap_or(line);
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != WIRE_FIELDS {
            return Err(Error::parse(
                "wire frame",
                format!("expected {WIRE_FIELDS} fields, got {}", fields.len()),
            ));
        }
        let t_us = fields[0].parse::<u64>().map_err(|e| Error::parse("wire frame t_us", e))?;
        let mut v = [0.0; 10];
        for (slot, s) in v.iter_mut().zip(&fields[1..]) {
            *slot = s.parse::<f64>().map_err(|e| Error::parse("wire frame", e))?;
            if !slot.is_finite() {
                return Err(Error::parse("wire frame", "non-finite value"));
            }
        }
        Ok(Self {
            t_us,
            accel: [v[0], v[1], v[2]],
            gyro: [v[3], v[4], v[5]],
            orientation: Quaternion::new(v[6], v[7], v[8], v[9]),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayStats {
    pub frames_sent: usize,
    pub elapsed_s: f64,
}

/// Accepts one client on `listener` and sends every sample of `session`,
/// pacing frame `i` to `(t_i − t_0) / rate` after the first. `rate = 0`
/// sends as fast as possible. The connection is closed after the last frame.
pub fn serve_replay_on(session: &SessionRecording, listener: &TcpListener, rate: f64) -> Result<ReplayStats> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(Error::Config("replay rate must be >= 0".into()));
    }
    let (stream, peer) = listener.accept()?;
    log::info!("replay client connected from {peer}");
    stream.set_nodelay(true)?;
    let mut out = BufWriter::new(stream);
    let start = Instant::now();
    let t0 = session.samples.first().map_or(0, |s| s.t_us);
    for s in &session.samples {
        if rate > 0.0 {
            let due = Duration::from_secs_f64((s.t_us - t0) as f64 / 1e6 / rate);
            let now = start.elapsed();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        writeln!(out, "{}", WireFrame::from(s))?;
        if rate > 0.0 {
            out.flush()?;
        }
    }
    out.flush()?;
    let elapsed_s = start.elapsed().as_secs_f64();
    drop(out);
    Ok(ReplayStats {
        frames_sent: session.len(),
        elapsed_s,
    })
}

/// Binds `addr` and serves one replay.
pub fn serve_replay(session: &SessionRecording, addr: impl ToSocketAddrs, rate: f64) -> Result<ReplayStats> {
    let listener = TcpListener::bind(addr)?;
    log::info!("replay listening on {}", listener.local_addr()?);
    serve_replay_on(session, &listener, rate)
}

/// Stage timings for one processed frame, milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub preprocess_ms: f64,
    pub forward_ms: f64,
    pub fsm_ms: f64,
}

/// Output of the pipeline for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineFrame {
    pub prediction: FramePrediction,
    pub refined: GaitPhase,
}

/// Per-stream causal pipeline: preprocessing, a ring buffer of the last `h`
/// normalized vectors, the classifier and the step decoder. Frames before the
/// buffer fills are warm-up and feed Stance to the decoder.
pub struct OnlinePipeline<'m> {
    model: &'m TcnModel,
    fsm_cfg: FsmConfig,
    pre: Preprocessor,
    ring: VecDeque<[f64; NUM_CHANNELS]>,
    fsm: FsmState,
}

impl<'m> OnlinePipeline<'m> {
    pub fn new(model: &'m TcnModel, fsm_cfg: &FsmConfig) -> Result<Self> {
        fsm_cfg.validate()?;
        Ok(Self {
            model,
            fsm_cfg: *fsm_cfg,
            pre: Preprocessor::new(&model.preprocess, model.window.sample_rate_hz)?,
            ring: VecDeque::with_capacity(model.window.h),
            fsm: FsmState::new(),
        })
    }

    pub fn push(&mut self, raw: &RawImuSample) -> Result<(OnlineFrame, Option<StepEvent>, StageTimes)> {
        let t0 = Instant::now();
        let v = self.pre.process(raw)?;
        let h = self.model.window.h;
        if self.ring.len() == h {
            self.ring.pop_front();
        }
        self.ring.push_back(self.model.norm.apply_row(&v).0);
        let t1 = Instant::now();
        let prediction = if self.ring.len() < h {
            FramePrediction::warmup(raw.t_us)
        } else {
            let rows: Vec<[f64; NUM_CHANNELS]> = self.ring.iter().copied().collect();
            let p = softmax(&self.model.weights.logits(&Matrix::from_rows(&rows)));
            let mut probs = [0.0; NUM_PHASES];
            probs.copy_from_slice(&p);
            FramePrediction::from_probs(raw.t_us, probs)
        };
        let t2 = Instant::now();
        let (refined, event) = fsm_step(&mut self.fsm, prediction.phase, raw.t_us, &self.fsm_cfg);
        let t3 = Instant::now();
        let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1e3;
        Ok((
            OnlineFrame { prediction, refined },
            event,
            StageTimes {
                preprocess_ms: ms(t0, t1),
                forward_ms: ms(t1, t2),
                fsm_ms: ms(t2, t3),
            },
        ))
    }

    /// Finalizes a trailing open attempt.
    pub fn finish(&mut self) -> Option<StepEvent> {
        self.fsm.finish(&self.fsm_cfg)
    }
}

/// One line of the latency log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyRecord {
    pub t_us: u64,
    pub recv_to_done_ms: f64,
    pub stages: StageTimes,
    pub queue_depth: usize,
}

/// Receives pipeline outputs as they are produced.
pub trait OnlineSink {
    fn on_frame(&mut self, frame: &OnlineFrame) -> Result<()>;
    fn on_step(&mut self, step: &StepEvent) -> Result<()>;
    fn on_latency(&mut self, record: &LatencyRecord) -> Result<()>;
}

/// Collects everything in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub frames: Vec<OnlineFrame>,
    pub steps: Vec<StepEvent>,
    pub latency: Vec<LatencyRecord>,
}

impl OnlineSink for MemorySink {
    fn on_frame(&mut self, frame: &OnlineFrame) -> Result<()> {
        self.frames.push(frame.clone());
        Ok(())
    }

    fn on_step(&mut self, step: &StepEvent) -> Result<()> {
        self.steps.push(step.clone());
        Ok(())
    }

    fn on_latency(&mut self, record: &LatencyRecord) -> Result<()> {
        self.latency.push(*record);
        Ok(())
    }
}

pub const PREDICTIONS_HEADER: [&str; 9] = ["t_us", "warmup", "p1", "p2", "p3", "p4", "p5", "raw", "refined"];
pub const LATENCY_HEADER: [&str; 6] = [
    "t_us",
    "recv_to_done_ms",
    "stage_pre_ms",
    "stage_fwd_ms",
    "stage_fsm_ms",
    "queue_depth",
];

/// Per-frame prediction CSV: probabilities `p1..p5` by phase code, raw and
/// refined phase codes. `refined` is empty when no decoder ran.
pub struct PredictionWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> PredictionWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(PREDICTIONS_HEADER).map_err(crate::types::csv_err)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, p: &FramePrediction, refined: Option<GaitPhase>) -> Result<()> {
        let mut rec = Vec::with_capacity(PREDICTIONS_HEADER.len());
        rec.push(p.t_us.to_string());
        rec.push(u8::from(p.warmup).to_string());
        rec.extend(p.probs.iter().map(|v| v.to_string()));
        rec.push(p.phase.code().to_string());
        rec.push(refined.map_or_else(String::new, |r| r.code().to_string()));
        self.inner.write_record(&rec).map_err(crate::types::csv_err)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(Error::Net)
    }
}

/// Writes `predictions.csv`, `steps.csv` and `latency.csv` into a directory.
pub struct DirSink {
    predictions: PredictionWriter<BufWriter<std::fs::File>>,
    steps: StepLogWriter<BufWriter<std::fs::File>>,
    latency: csv::Writer<BufWriter<std::fs::File>>,
}

impl DirSink {
    pub fn create(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str| -> Result<BufWriter<std::fs::File>> {
            let p = dir.join(name);
            Ok(BufWriter::new(std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?))
        };
        let mut latency = csv::Writer::from_writer(open("latency.csv")?);
        latency.write_record(LATENCY_HEADER).map_err(crate::types::csv_err)?;
        Ok(Self {
            predictions: PredictionWriter::new(open("predictions.csv")?)?,
            steps: StepLogWriter::new(open("steps.csv")?)?,
            latency,
        })
    }

    pub fn flush(&mut self) -> Result<()> {
        self.predictions.flush()?;
        self.latency.flush().map_err(Error::Net)
    }
}

impl OnlineSink for DirSink {
    fn on_frame(&mut self, frame: &OnlineFrame) -> Result<()> {
        self.predictions.write(&frame.prediction, Some(frame.refined))
    }

    fn on_step(&mut self, step: &StepEvent) -> Result<()> {
        self.steps.write(&step.interval)
    }

    fn on_latency(&mut self, r: &LatencyRecord) -> Result<()> {
        self.latency
            .write_record([
                r.t_us.to_string(),
                r.recv_to_done_ms.to_string(),
                r.stages.preprocess_ms.to_string(),
                r.stages.forward_ms.to_string(),
                r.stages.fsm_ms.to_string(),
                r.queue_depth.to_string(),
            ])
            .map_err(crate::types::csv_err)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineSummary {
    pub frames: usize,
    pub malformed: usize,
    pub rejected: usize,
    pub steps: usize,
    pub max_queue_depth: usize,
    pub latency_ms: MeanStd,
    pub latency_p99_ms: f64,
}

enum Incoming {
    Line(String, Instant),
    Failed(std::io::Error),
}

/// Connects to `addr`, retrying for up to `wait`.
pub fn connect_with_retry(addr: &str, wait: Duration) -> Result<TcpStream> {
    let start = Instant::now();
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if start.elapsed() < wait => {
                log::debug!("connect to {addr} failed ({e}), retrying");
                std::thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(Error::Net(e)),
        }
    }
}

/// Runs the online pipeline over frames read from `stream` until the peer
/// disconnects. A reader thread queues frames without dropping any; the
/// pipeline processes them strictly in arrival order. Malformed lines are
/// counted and skipped.
pub fn run_online_stream<S: OnlineSink>(
    model: &TcnModel,
    fsm_cfg: &FsmConfig,
    stream: TcpStream,
    sink: &mut S,
) -> Result<OnlineSummary> {
    let mut pipeline = OnlinePipeline::new(model, fsm_cfg)?;
    let depth = Arc::new(AtomicUsize::new(0));
    let (tx, rx) = mpsc::channel::<Incoming>();
    let reader_depth = Arc::clone(&depth);
    let reader = std::thread::spawn(move || {
        let mut lines = BufReader::new(stream);
        loop {
            let mut line = String::new();
            match lines.read_line(&mut line) {
                Ok(0) => break,
                Ok(_) => {
                    reader_depth.fetch_add(1, Ordering::SeqCst);
                    if tx.send(Incoming::Line(line, Instant::now())).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Incoming::Failed(e));
                    break;
                }
            }
        }
    });

    let mut summary = OnlineSummary {
        frames: 0,
        malformed: 0,
        rejected: 0,
        steps: 0,
        max_queue_depth: 0,
        latency_ms: MeanStd::default(),
        latency_p99_ms: 0.0,
    };
    let mut latencies = Vec::new();
    let mut last_t: Option<u64> = None;
    for msg in rx {
        let (line, received) = match msg {
            Incoming::Line(l, t) => (l, t),
            Incoming::Failed(e) => {
                log::warn!("stream read failed: {e}; shutting down");
                break;
            }
        };
        let queue_depth = depth.fetch_sub(1, Ordering::SeqCst);
        summary.max_queue_depth = summary.max_queue_depth.max(queue_depth);
        let frame = match line.parse::<WireFrame>() {
            Ok(f) => f,
            Err(e) => {
                summary.malformed += 1;
                log::warn!("skipping malformed frame: {e}");
                continue;
            }
        };
        if last_t.is_some_and(|t| frame.t_us <= t) {
            summary.malformed += 1;
            log::warn!("skipping out-of-order frame at t_us={}", frame.t_us);
            continue;
        }
        let (out, event, stages) = match pipeline.push(&frame.into()) {
            Ok(x) => x,
            Err(e) => {
                summary.rejected += 1;
                log::warn!("skipping frame at t_us={}: {e}", frame.t_us);
                continue;
            }
        };
        last_t = Some(frame.t_us);
        sink.on_frame(&out)?;
        if let Some(e) = &event {
            summary.steps += 1;
            sink.on_step(e)?;
        }
        let recv_to_done_ms = received.elapsed().as_secs_f64() * 1e3;
        latencies.push(recv_to_done_ms);
        sink.on_latency(&LatencyRecord {
            t_us: frame.t_us,
            recv_to_done_ms,
            stages,
            queue_depth,
        })?;
        summary.frames += 1;
    }
    if let Some(e) = pipeline.finish() {
        summary.steps += 1;
        sink.on_step(&e)?;
    }
    let _ = reader.join();
    summary.latency_ms = MeanStd::of(&latencies);
    summary.latency_p99_ms = percentile(&latencies, 0.99);
    Ok(summary)
}

/// Connects to a replay source at `addr` and runs the online pipeline.
pub fn run_online<S: OnlineSink>(
    model: &TcnModel,
    fsm_cfg: &FsmConfig,
    addr: &str,
    connect_wait: Duration,
    sink: &mut S,
) -> Result<OnlineSummary> {
    let stream = connect_with_retry(addr, connect_wait)?;
    run_online_stream(model, fsm_cfg, stream, sink)
}
