//! Run configuration: one TOML document with a table per module.
//!
//! ```toml
//! [window]
//! h = 8
//!
//! [fsm]
//! alpha = 0.6
//! debounce_k = 3
//! ```
//!
//! Grammar is plain TOML. Every key is optional and falls back to its
//! default; unknown tables or keys are rejected. Command-line overrides use
//! dotted paths (`fsm.alpha=0.5`, `tcn.dilations=[1,2]`). The right-hand side
//! is read as a TOML value and, failing that, as a bare string.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::SweepConfig;
use crate::fsm::FsmConfig;
use crate::preprocess::PreprocessConfig;
use crate::synth::SynthConfig;
use crate::tcn::{TcnConfig, TrainConfig};
use crate::types::WindowConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub k_max: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Subjects held out for testing, taken from the end of the sorted list.
    pub test_subjects: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            k_max: 4,
            repeats: 4,
            seed: 0,
            test_subjects: 2,
        }
    }
}

impl SweepSection {
    /// Thread count is taken from the environment, never from the file.
    pub fn to_sweep_config(&self) -> SweepConfig {
        SweepConfig {
            k_max: self.k_max,
            repeats: self.repeats,
            seed: self.seed,
            ..SweepConfig::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub window: WindowConfig,
    pub preprocess: PreprocessConfig,
    pub tcn: TcnConfig,
    pub train: TrainConfig,
    pub fsm: FsmConfig,
    pub synth: SynthConfig,
    pub sweep: SweepSection,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.tcn.validate()?;
        self.train.validate()?;
        self.fsm.validate()?;
        self.synth.validate()?;
        if self.window.h < self.tcn.receptive_field() {
            return Err(Error::Config(format!(
                "window.h = {} is shorter than the receptive field {}",
                self.window.h,
                self.tcn.receptive_field()
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::with_overrides(Some(text), &[])
    }

    /// Parses an optional TOML document, applies `key=value` overrides in
    /// order and validates the result.
    pub fn with_overrides(text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = match text {
            Some(t) => toml::from_str(t).map_err(|e| Error::parse("config", e))?,
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::with_overrides(Some(&text), overrides)
            }
            None => Self::with_overrides(None, overrides),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `a.b.c=value` inside `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry((*p).to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Error::Config(format!("override key {key:?}: {p} is not a table"))),
        };
    }
    cur.insert((*last).to_string(), parse_value(value));
    Ok(())
}
