//! Sweep tables and their CSV / JSON encodings.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub experiment: String,
    /// SHA-256 of the resolved scenario and runner parameters.
    pub scenario_hash: String,
    pub seed: Option<u64>,
    pub version: String,
}

impl Metadata {
    pub fn new<C: Serialize>(experiment: &str, config: &C, seed: Option<u64>) -> Result<Self> {
        let bytes = serde_json::to_vec(config).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            experiment: experiment.to_string(),
            scenario_hash: hex::encode(Sha256::digest(&bytes)),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }
}

/// A table of named numeric columns, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub metadata: Metadata,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Scalar findings such as crossing points and inflation factors.
    pub summary: BTreeMap<String, f64>,
    /// Trend checks that failed, empty when every check passed.
    pub violations: Vec<String>,
}

impl SweepResult {
    pub fn new(metadata: Metadata, columns: &[&str]) -> Self {
        Self {
            metadata,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            summary: BTreeMap::new(),
            violations: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::DimensionMismatch { expected: self.columns.len(), got: row.len() });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Records a failed trend check when `ok` is false.
    pub fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.violations.push(what());
        }
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let m = &self.metadata;
        let seed = m.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
        writeln!(
            out,
            "# metadata: experiment={} scenario_hash={} seed={} version={}",
            m.experiment, m.scenario_hash, seed, m.version
        )?;
        for (k, v) in &self.summary {
            writeln!(out, "# summary: {k}={}", format_value(*v))?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format_value(*v))).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        v.push(b'\n');
        Ok(v)
    }

    /// Writes JSON when `path` ends in `.json`, CSV otherwise.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => self.to_json()?,
            _ => self.to_csv()?,
        };
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Integers print as integers, everything else in shortest round-trip
/// scientific notation.
pub fn format_value(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:e}")
    }
}
