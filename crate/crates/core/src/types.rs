//! Shared domain vocabulary: gait phases, raw and processed samples,
//! windows, sessions and step intervals.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quat::Quaternion;

/// Number of phase classes.
pub const NUM_PHASES: usize = 5;
/// Number of channels in a processed measurement vector.
pub const NUM_CHANNELS: usize = 9;

/// Crutch gait phase. Integer codes 1-5 are stable and used in every file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GaitPhase {
    /// Crutch grounded and load-bearing.
    Stance,
    /// Crutch tip leaving the ground.
    TakeOff,
    /// Crutch airborne, moving forward.
    Swing,
    /// Crutch tip contacting the ground.
    Strike,
    /// Non-locomotor activity with gait halted.
    Auxiliary,
}

impl GaitPhase {
    pub const ALL: [GaitPhase; NUM_PHASES] = [
        GaitPhase::Stance,
        GaitPhase::TakeOff,
        GaitPhase::Swing,
        GaitPhase::Strike,
        GaitPhase::Auxiliary,
    ];

    pub fn code(self) -> u8 {
        self.index() as u8 + 1
    }

    /// Zero-based class index, `code() - 1`.
    pub fn index(self) -> usize {
        match self {
            GaitPhase::Stance => 0,
            GaitPhase::TakeOff => 1,
            GaitPhase::Swing => 2,
            GaitPhase::Strike => 3,
            GaitPhase::Auxiliary => 4,
        }
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or(Error::InvalidPhaseCode(index as i64 + 1))
    }

    pub fn name(self) -> &'static str {
        match self {
            GaitPhase::Stance => "Stance",
            GaitPhase::TakeOff => "TakeOff",
            GaitPhase::Swing => "Swing",
            GaitPhase::Strike => "Strike",
            GaitPhase::Auxiliary => "Auxiliary",
        }
    }

    /// Position in the canonical step order TakeOff → Swing → Strike → Stance,
    /// `None` for Auxiliary.
    pub fn canonical_rank(self) -> Option<usize> {
        match self {
            GaitPhase::TakeOff => Some(0),
            GaitPhase::Swing => Some(1),
            GaitPhase::Strike => Some(2),
            GaitPhase::Stance => Some(3),
            GaitPhase::Auxiliary => None,
        }
    }
}

impl fmt::Display for GaitPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl TryFrom<i64> for GaitPhase {
    type Error = Error;

    fn try_from(code: i64) -> Result<Self> {
        phase_from_code(code)
    }
}

pub fn phase_from_code(code: i64) -> Result<GaitPhase> {
    match code {
        1..=5 => Ok(GaitPhase::ALL[(code - 1) as usize]),
        _ => Err(Error::InvalidPhaseCode(code)),
    }
}

/// One raw IMU sample as delivered by the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawImuSample {
    /// Microseconds.
    pub t_us: u64,
    /// Body-frame acceleration, m/s².
    pub a_body: [f64; 3],
    /// Body-frame angular velocity, rad/s.
    pub omega_body: [f64; 3],
    /// Fused orientation, body → global.
    pub orientation: Quaternion,
    /// Magnetometer, µT. Carried through files, never consumed.
    pub mag: Option<[f64; 3]>,
}

impl RawImuSample {
    pub fn is_finite(&self) -> bool {
        self.a_body.iter().all(|v| v.is_finite())
            && self.omega_body.iter().all(|v| v.is_finite())
            && self.orientation.is_finite()
            && self.mag.is_none_or(|m| m.iter().all(|v| v.is_finite()))
    }
}

/// Processed nine-channel measurement, channel order
/// `ãx ãy ãz ω̃x ω̃y ω̃z ψ θ φ`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeasurementVector(pub [f64; NUM_CHANNELS]);

impl MeasurementVector {
    pub const CHANNEL_NAMES: [&'static str; NUM_CHANNELS] =
        ["ax", "ay", "az", "wx", "wy", "wz", "yaw", "pitch", "roll"];

    pub fn new(accel: [f64; 3], gyro: [f64; 3], euler: [f64; 3]) -> Self {
        let mut v = [0.0; NUM_CHANNELS];
        v[..3].copy_from_slice(&accel);
        v[3..6].copy_from_slice(&gyro);
        v[6..].copy_from_slice(&euler);
        Self(v)
    }

    pub fn accel(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn gyro(&self) -> [f64; 3] {
        [self.0[3], self.0[4], self.0[5]]
    }

    /// (yaw ψ, pitch θ, roll φ).
    pub fn euler(&self) -> [f64; 3] {
        [self.0[6], self.0[7], self.0[8]]
    }
}

/// `h × 9` window, rows oldest → newest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowTensor {
    pub data: Vec<MeasurementVector>,
    pub end_timestamp: u64,
    pub label: Option<GaitPhase>,
}

impl WindowTensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    /// Window length in frames.
    pub h: usize,
    /// Frames between consecutive training windows.
    pub stride: usize,
    pub sample_rate_hz: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            h: 8,
            stride: 2,
            sample_rate_hz: 100.0,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.stride == 0 {
            return Err(Error::Config("window h and stride must be >= 1".into()));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::Config("sample_rate_hz must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionMetadata {
    pub subject_id: String,
    pub gait_strategy: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecording {
    pub metadata: SessionMetadata,
    pub samples: Vec<RawImuSample>,
    pub labels: Option<Vec<GaitPhase>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    NonIncreasingTimestamp { index: usize, prev_us: u64, t_us: u64 },
    NonFinite { index: usize, field: &'static str },
    DegenerateQuaternion { index: usize },
    LabelLengthMismatch { samples: usize, labels: usize },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::NonIncreasingTimestamp { index, prev_us, t_us } => {
                write!(f, "timestamp at index {index} ({t_us}) does not exceed previous ({prev_us})")
            }
            ValidationIssue::NonFinite { index, field } => {
                write!(f, "non-finite {field} at index {index}")
            }
            ValidationIssue::DegenerateQuaternion { index } => {
                write!(f, "near-zero orientation quaternion at index {index}")
            }
            ValidationIssue::LabelLengthMismatch { samples, labels } => {
                write!(f, "{labels} labels for {samples} samples")
            }
        }
    }
}

/// Report-style validation; an empty vector means the session is well formed.
pub fn validate_session(session: &SessionRecording) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    for (index, s) in session.samples.iter().enumerate() {
        if index > 0 {
            let prev_us = session.samples[index - 1].t_us;
            if s.t_us <= prev_us {
                issues.push(ValidationIssue::NonIncreasingTimestamp {
                    index,
                    prev_us,
                    t_us: s.t_us,
                });
            }
        }
        if !s.a_body.iter().all(|v| v.is_finite()) {
            issues.push(ValidationIssue::NonFinite { index, field: "a_body" });
        }
        if !s.omega_body.iter().all(|v| v.is_finite()) {
            issues.push(ValidationIssue::NonFinite { index, field: "omega_body" });
        }
        if !s.orientation.is_finite() {
            issues.push(ValidationIssue::NonFinite { index, field: "orientation" });
        } else if s.orientation.norm() <= 1e-9 {
            issues.push(ValidationIssue::DegenerateQuaternion { index });
        }
        if let Some(m) = s.mag {
            if !m.iter().all(|v| v.is_finite()) {
                issues.push(ValidationIssue::NonFinite { index, field: "mag" });
            }
        }
    }
    if let Some(labels) = &session.labels {
        if labels.len() != session.samples.len() {
            issues.push(ValidationIssue::LabelLengthMismatch {
                samples: session.samples.len(),
                labels: labels.len(),
            });
        }
    }
    issues
}

/// A detected or reference step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInterval {
    pub start_us: u64,
    pub end_us: u64,
    /// In [0, 4].
    pub raw_score: f64,
    /// `raw_score / 4`.
    pub norm_score: f64,
    pub phases_seen: Vec<GaitPhase>,
}

impl StepInterval {
    pub fn duration_us(&self) -> u64 {
        self.end_us.saturating_sub(self.start_us)
    }
}

pub const SESSION_CSV_HEADER: &str = "t_us,ax,ay,az,wx,wy,wz,qw,qx,qy,qz,mx,my,mz,label";

impl SessionRecording {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn timestamps(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.t_us).collect()
    }

    pub fn write_csv_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        let header: Vec<&str> = SESSION_CSV_HEADER.split(',').collect();
        w.write_record(&header).map_err(csv_err)?;
        let mut record: Vec<String> = Vec::with_capacity(15);
        for (i, s) in self.samples.iter().enumerate() {
            record.clear();
            record.push(s.t_us.to_string());
            record.extend(s.a_body.iter().map(|v| v.to_string()));
            record.extend(s.omega_body.iter().map(|v| v.to_string()));
            let q = s.orientation;
            record.extend([q.w, q.x, q.y, q.z].iter().map(|v| v.to_string()));
            match s.mag {
                Some(m) => record.extend(m.iter().map(|v| v.to_string())),
                None => record.extend(std::iter::repeat_n(String::new(), 3)),
            }
            record.push(
                self.labels
                    .as_ref()
                    .and_then(|l| l.get(i))
                    .map(|p| p.code().to_string())
                    .unwrap_or_default(),
            );
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush().map_err(Error::Net)?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = BufWriter::new(file);
        self.write_csv_to(&mut buf)?;
        buf.flush().map_err(|e| Error::io(path, e))
    }

    /// Parse the session CSV. Labels are kept only when every row carries one.
    pub fn read_csv_from<R: Read>(input: R, metadata: SessionMetadata) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let headers = rdr.headers().map_err(csv_err)?.clone();
        let got: Vec<&str> = headers.iter().collect();
        let want: Vec<&str> = SESSION_CSV_HEADER.split(',').collect();
        if got != want {
            return Err(Error::parse("session header", format!("expected `{SESSION_CSV_HEADER}`")));
        }
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        let mut any_unlabeled = false;
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let ctx = || format!("session row {}", row + 2);
            let f = |i: usize| -> Result<f64> {
                rec[i].trim().parse::<f64>().map_err(|e| Error::parse(ctx(), e))
            };
            let t_us = rec[0].trim().parse::<u64>().map_err(|e| Error::parse(ctx(), e))?;
            let mag = if rec[11].is_empty() && rec[12].is_empty() && rec[13].is_empty() {
                None
            } else {
                Some([f(11)?, f(12)?, f(13)?])
            };
            samples.push(RawImuSample {
                t_us,
                a_body: [f(1)?, f(2)?, f(3)?],
                omega_body: [f(4)?, f(5)?, f(6)?],
                orientation: Quaternion::new(f(7)?, f(8)?, f(9)?, f(10)?),
                mag,
            });
            let label = rec[14].trim();
            if label.is_empty() {
                any_unlabeled = true;
            } else {
                let code = label.parse::<i64>().map_err(|e| Error::parse(ctx(), e))?;
                labels.push(phase_from_code(code)?);
            }
        }
        let labels = if any_unlabeled || samples.is_empty() {
            None
        } else {
            Some(labels)
        };
        Ok(Self {
            metadata,
            samples,
            labels,
        })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let subject_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::read_csv_from(
            std::io::BufReader::new(file),
            SessionMetadata {
                subject_id,
                ..Default::default()
            },
        )
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::parse("csv", e)
}
