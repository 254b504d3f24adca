//! Model file format.
//!
//! ```text
//! offset  size  content
//! 0       8     magic  b"GAITTCN\0"
//! 8       4     format version, u32 little-endian
//! 12      8     header length N, u64 little-endian
//! 20      N     UTF-8 JSON header
//! 20+N    ...   parameter arrays, f64 little-endian, in header order
//! ```
//!
//! The header holds the architecture, window and preprocessing settings,
//! normalization statistics, training metadata and an array directory
//! (`name`, `shape`) in the canonical parameter order of [`TcnWeights::params`].
//! The file length must equal `20 + N + 8·Σ numel` exactly.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{TcnConfig, TcnWeights};
use super::{TcnModel, TrainingMeta};
use crate::error::{Error, Result};
use crate::preprocess::{NormStats, PreprocessConfig};
use crate::types::WindowConfig;

pub const MODEL_MAGIC: &[u8; 8] = b"GAITTCN\0";
pub const MODEL_FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    tcn: TcnConfig,
    window: WindowConfig,
    preprocess: PreprocessConfig,
    norm: NormStats,
    meta: TrainingMeta,
    arrays: Vec<ArrayEntry>,
}

fn encode(model: &TcnModel) -> Result<Vec<u8>> {
    let params = model.weights.params();
    let mut meta = model.meta.clone();
    meta.final_val_loss = meta.final_val_loss.filter(|v| v.is_finite());
    let header = Header {
        tcn: model.config.clone(),
        window: model.window,
        preprocess: model.preprocess,
        norm: model.norm.clone(),
        meta,
        arrays: params
            .iter()
            .map(|p| ArrayEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::CorruptFile(format!("header encode: {e}")))?;
    let numel: usize = params.iter().map(|p| p.values.len()).sum();
    let mut buf = Vec::with_capacity(PREAMBLE + json.len() + 8 * numel);
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in &params {
        for v in p.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

fn decode(bytes: &[u8]) -> Result<TcnModel> {
    let corrupt = |m: &str| Error::CorruptFile(m.to_string());
    if bytes.len() < PREAMBLE {
        return Err(corrupt("file shorter than the preamble"));
    }
    if &bytes[..8] != MODEL_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|n| n.checked_add(PREAMBLE))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt("header length exceeds file"))?;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
        .map_err(|e| Error::CorruptFile(format!("header: {e}")))?;
    header
        .tcn
        .validate()
        .map_err(|e| Error::CorruptFile(format!("header tcn config: {e}")))?;

    let mut weights = TcnWeights::<f64>::zeros(&header.tcn);
    {
        let expected = weights.params();
        if expected.len() != header.arrays.len() {
            return Err(corrupt("array directory does not match the architecture"));
        }
        for (e, a) in expected.iter().zip(&header.arrays) {
            if e.name != a.name || e.shape != a.shape {
                return Err(Error::CorruptFile(format!(
                    "array {} {:?} does not match expected {} {:?}",
                    a.name, a.shape, e.name, e.shape
                )));
            }
        }
    }
    let numel = weights.param_count();
    if bytes.len() - header_end != 8 * numel {
        return Err(Error::CorruptFile(format!(
            "payload is {} bytes, expected {}",
            bytes.len() - header_end,
            8 * numel
        )));
    }
    let mut chunks = bytes[header_end..].chunks_exact(8);
    for slot in weights.params_mut() {
        for v in slot.iter_mut() {
            *v = f64::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
        }
    }
    if !weights.is_finite() {
        return Err(corrupt("non-finite weight"));
    }
    let mut model = TcnModel::new(header.tcn, weights, header.norm, header.window, header.preprocess)
        .map_err(|e| Error::CorruptFile(e.to_string()))?;
    model.meta = header.meta;
    Ok(model)
}

pub fn save_model(model: &TcnModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(model)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TcnModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

impl TcnModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        decode(bytes)
    }
}
