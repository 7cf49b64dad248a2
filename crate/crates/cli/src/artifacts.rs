//! Artifact files: atomic writes, CSV tables and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rsbridge::bridge::{BridgeSolution, Residual, Snapshot};
use rsbridge::{Grid, GridDensity};
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::{io_err, CliError};

pub const MANIFEST: &str = "manifest.json";
pub const SIM_MANIFEST: &str = "simulate_manifest.json";
pub const RESIDUALS: &str = "residual_trace.csv";
pub const FACTORS: &str = "factors.csv";
pub const ENSEMBLE: &str = "ensemble.csv";
pub const ENSEMBLE_META: &str = "ensemble.json";
pub const TERMINAL: &str = "terminal_marginal.csv";
pub const FORMAT_VERSION: u32 = 1;

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| CliError::Io { path: path.display().to_string(), source: e.error })?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("manifest serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// CSV table built in memory; numbers use shortest round-trip formatting.
pub struct Table {
    w: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header.iter().map(|s| s.as_ref())).expect("in-memory write");
        Self { w }
    }

    pub fn row(&mut self, values: &[f64]) {
        self.w.write_record(values.iter().map(|v| v.to_string())).expect("in-memory write");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.w.into_inner().expect("in-memory flush")
    }

    pub fn save(self, path: &Path) -> Result<(), CliError> {
        write_atomic(path, &self.into_bytes())
    }
}

pub fn coord_names(dim: usize) -> Vec<String> {
    (1..=dim).map(|a| format!("x{a}")).collect()
}

pub fn snapshot_file(k: usize) -> String {
    format!("snapshot_{k:03}.csv")
}

/// `t, x1[, x2], rho, phi, phihat, u1[, u2]`, one row per node.
pub fn write_snapshot(path: &Path, grid: &Grid, s: &Snapshot) -> Result<(), CliError> {
    let dim = grid.dim();
    let mut header = vec!["t".to_string()];
    header.extend(coord_names(dim));
    header.extend(["rho".into(), "phi".into(), "phihat".into()]);
    header.extend((1..=dim).map(|a| format!("u{a}")));
    let mut t = Table::new(&header);
    let mut row = Vec::with_capacity(header.len());
    for (k, x) in grid.nodes().iter().enumerate() {
        row.clear();
        row.push(s.t);
        row.extend_from_slice(x);
        row.extend([s.rho.values()[k], s.phi.values()[k], s.phihat.values()[k]]);
        row.extend(s.control.iter().map(|c| c[k]));
        t.row(&row);
    }
    t.save(path)
}

pub fn write_residuals(path: &Path, trace: &[Residual]) -> Result<(), CliError> {
    let mut t = Table::new(&["iteration", "d_hilbert_phi1", "d_hilbert_phihat0"]);
    for r in trace {
        t.row(&[r.iteration as f64, r.phi1, r.phihat0]);
    }
    t.save(path)
}

/// `x1[, x2], phi1, phihat0`: enough to rebuild every transient factor.
pub fn write_factors(path: &Path, sol: &BridgeSolution) -> Result<(), CliError> {
    let grid = sol.factors.phi1.grid();
    let mut header = coord_names(grid.dim());
    header.extend(["phi1".into(), "phihat0".into()]);
    let mut t = Table::new(&header);
    for (k, x) in grid.nodes().iter().enumerate() {
        let mut row = x.clone();
        row.extend([sol.factors.phi1.values()[k], sol.factors.phihat0.values()[k]]);
        t.row(&row);
    }
    t.save(path)
}

/// Reads a numeric CSV into its header and rows.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::MissingSolution(format!("{}: {e}", path.display())))?;
    let header = r
        .headers()
        .map_err(|e| CliError::Invariant(format!("{}: {e}", path.display())))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Invariant(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Invariant(format!("{}: {e}", path.display())))?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Terminal factor `φ₁` read back from `factors.csv`.
pub fn read_phi1(dir: &Path, grid: &Grid) -> Result<GridDensity, CliError> {
    let path = dir.join(FACTORS);
    if !path.exists() {
        return Err(CliError::MissingSolution(format!("{} not found; run `solve` first", path.display())));
    }
    let (header, rows) = read_table(&path)?;
    let col = header.iter().position(|h| h == "phi1").ok_or_else(|| CliError::Invariant(format!("{}: no phi1 column", path.display())))?;
    if rows.len() != grid.len() {
        return Err(CliError::MissingSolution(format!("{} has {} rows for a {}-node grid", path.display(), rows.len(), grid.len())));
    }
    Ok(GridDensity::new(grid.clone(), rows.iter().map(|r| r[col]).collect())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub t: f64,
    pub file: String,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `value ≤ limit`.
    pub fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, passed: value <= limit }
    }

    /// Passes when `value ≥ limit`.
    pub fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, passed: value >= limit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveManifest {
    pub format_version: u32,
    pub tool_version: String,
    pub command: String,
    pub scenario: crate::Scenario,
    pub config_hash: String,
    pub engine: String,
    pub iterations: usize,
    pub final_residual_phi1: f64,
    pub final_residual_phihat0: f64,
    pub snapshots: Vec<SnapshotEntry>,
    pub checks: Vec<Check>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateManifest {
    pub format_version: u32,
    pub tool_version: String,
    pub command: String,
    pub scenario: crate::Scenario,
    pub config_hash: String,
    pub closed_loop: bool,
    pub paths: usize,
    pub seed: u64,
    pub ks_terminal_vs_rho1: Option<f64>,
    pub l1_terminal_vs_rho1: f64,
    pub l1_terminal_vs_uncontrolled: f64,
    pub containment_violations: usize,
    pub reflection_steps: usize,
    pub checks: Vec<Check>,
    pub wall_time_s: f64,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::MissingSolution(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Invariant(format!("{}: {e}", path.display())))
}

pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
