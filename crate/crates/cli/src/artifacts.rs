//! Run outputs: CSV tables, the run manifest and the config hash stamped on every file.

use std::fs;
use std::io::Write;
use std::path::Path;

use hypocoerce::semigroup::Verdict;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// A CSV table with a fixed column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File stem, written as `<name>.csv`.
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&'static str]) -> Self {
        Table { name: name.into(), columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write<W: Write>(&self, mut w: W, stamp: &str) -> std::io::Result<()> {
        writeln!(w, "# {stamp}")?;
        writeln!(w, "{}", self.columns.join(","))?;
        for r in &self.rows {
            writeln!(w, "{}", r.join(","))?;
        }
        Ok(())
    }
}

/// Full-precision float for CSV cells.
pub fn num(v: f64) -> String {
    format!("{v:.17e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub label: String,
    pub verdict: Verdict,
}

/// Everything needed to reproduce a run and compare its numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub workers: usize,
    pub wall_clock_secs: f64,
    pub verdicts: Vec<VerdictEntry>,
    pub report: serde_json::Value,
}

impl RunManifest {
    pub fn any_violated(&self) -> bool {
        self.verdicts.iter().any(|v| v.verdict == Verdict::Violated)
    }

    /// `seed=… config_hash=…`, the header comment of every output file.
    pub fn stamp(&self) -> String {
        format!("seed={} config_hash={}", self.seed, self.config_hash)
    }
}

/// First 16 hex digits of the SHA-256 of the resolved config's JSON.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let digest = Sha256::digest(config.to_json().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Writes `manifest.json` and one CSV per table into `dir`.
pub fn write_outputs(dir: &Path, manifest: &RunManifest, tables: &[Table]) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let stamp = manifest.stamp();
    let mut json = format!("// {stamp}\n");
    json += &serde_json::to_string_pretty(manifest).expect("manifest serializes");
    json.push('\n');
    fs::write(dir.join("manifest.json"), json)?;
    for t in tables {
        let mut buf = Vec::new();
        t.write(&mut buf, &stamp)?;
        fs::write(dir.join(format!("{}.csv", t.name)), buf)?;
    }
    Ok(())
}

/// Reads a manifest written by [`write_outputs`], skipping its header comment.
pub fn read_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let body: String = text.lines().filter(|l| !l.trim_start().starts_with("//")).collect::<Vec<_>>().join("\n");
    serde_json::from_str(&body).map_err(|e| CliError::Schema(format!("manifest {}: {e}", path.display())))
}
