//! CSV tables and TOML run manifests.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{distances, DynState, RankingRow, TractableGame};
use crate::error::{Error, Result};
use crate::eval::ConceptReport;
use crate::unlearn::{GradLogRecord, StepMetrics};

pub const MANIFEST_VERSION: u32 = 1;

/// A header plus string rows, written verbatim as CSV.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::DimensionMismatch {
                expected: self.header.len(),
                found: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let header = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()).map_err(csv_err))
            .collect::<Result<Vec<Vec<String>>>>()?;
        Ok(Table { header, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing column `{name}`")))
    }

    /// Numeric `(x, y)` pairs from two columns; empty cells are skipped.
    pub fn numeric_pairs(&self, x: &str, y: &str) -> Result<Vec<(f64, f64)>> {
        let (ix, iy) = (self.column_index(x)?, self.column_index(y)?);
        let mut out = Vec::with_capacity(self.rows.len());
        for (n, r) in self.rows.iter().enumerate() {
            if r[ix].is_empty() || r[iy].is_empty() {
                continue;
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Format(format!("row {}: `{s}` is not a number", n + 1)))
            };
            out.push((parse(&r[ix])?, parse(&r[iy])?));
        }
        Ok(out)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

pub(crate) fn num(v: f64) -> String {
    format!("{v}")
}

/// `step, loss, mse, grad_norm, preservation_loss, acc_<label>...`; accuracy
/// cells are empty on steps without an evaluation.
pub fn metrics_table(metrics: &[StepMetrics], labels: &[String]) -> Result<Table> {
    let mut t = Table::new(
        ["step", "loss", "mse", "grad_norm", "preservation_loss"]
            .into_iter()
            .map(String::from)
            .chain(labels.iter().map(|l| format!("acc_{l}"))),
    );
    for m in metrics {
        let mut row = vec![m.step.to_string(), num(m.loss), num(m.mse), num(m.grad_norm), num(m.preservation_loss)];
        match &m.accuracy {
            Some(a) => row.extend(a.iter().map(|&v| num(v))),
            None => row.extend(labels.iter().map(|_| String::new())),
        }
        t.push(row)?;
    }
    Ok(t)
}

pub fn grad_log_table(records: &[GradLogRecord]) -> Result<Table> {
    let mut t = Table::new(["step", "mse_value", "grad_norm_kl", "grad_norm_h2", "grad_norm_chi2"]);
    for r in records {
        t.push(vec![
            r.step.to_string(),
            num(r.mse_value),
            num(r.grad_norm_kl),
            num(r.grad_norm_h2),
            num(r.grad_norm_chi2),
        ])?;
    }
    Ok(t)
}

pub fn concept_report_table(reports: &[ConceptReport]) -> Result<Table> {
    let mut t = Table::new(["concept", "accuracy", "mean_shift", "w2"]);
    for r in reports {
        t.push(vec![r.concept.clone(), num(r.accuracy), num(r.mean_shift), num(r.w2)])?;
    }
    Ok(t)
}

/// `t, phi_distance, omega_distance`.
pub fn trajectory_table(game: &TractableGame, trajectory: &[DynState]) -> Result<Table> {
    let mut t = Table::new(["t", "phi_distance", "omega_distance"]);
    for (time, p, o) in distances(game, trajectory) {
        t.push(vec![num(time), num(p), num(o)])?;
    }
    Ok(t)
}

pub fn ranking_table(rows: &[RankingRow]) -> Result<Table> {
    let mut t = Table::new(["divergence", "decay_rate", "discrete_decay_rate", "speed_index"]);
    for r in rows {
        t.push(vec![
            r.divergence.clone(),
            num(r.decay_rate),
            num(r.discrete_decay_rate),
            num(r.speed_index),
        ])?;
    }
    Ok(t)
}

/// `x, y, label` per sample column.
pub fn samples_table(sets: &[(String, &DMatrix<f64>)]) -> Result<Table> {
    let mut t = Table::new(["x", "y", "label"]);
    for (label, m) in sets {
        for c in m.column_iter() {
            t.push(vec![num(c[0]), num(c[1]), label.clone()])?;
        }
    }
    Ok(t)
}

/// Record of one CLI run: enough to repeat it and to check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub version: u32,
    pub run_id: String,
    pub command: String,
    /// Full argument vector (without the program name).
    pub args: Vec<String>,
    pub seeds: Vec<u64>,
    pub config: toml::Table,
    /// Checkpoint role → SHA-256 of its parameters.
    pub checkpoint_hashes: BTreeMap<String, String>,
    /// Output file name (relative to the run directory) → SHA-256 of its bytes.
    pub metric_files: BTreeMap<String, String>,
}

impl ExperimentManifest {
    pub fn new(command: &str, args: Vec<String>, run_id: String) -> Self {
        ExperimentManifest {
            version: MANIFEST_VERSION,
            run_id,
            command: command.to_string(),
            args,
            seeds: Vec::new(),
            config: toml::Table::new(),
            checkpoint_hashes: BTreeMap::new(),
            metric_files: BTreeMap::new(),
        }
    }

    pub fn record_file(&mut self, dir: &Path, name: &str) -> Result<()> {
        let bytes = std::fs::read(dir.join(name))?;
        self.metric_files.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: ExperimentManifest =
            toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Format(e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }

    /// Files under `dir` whose bytes differ from the recorded hashes.
    pub fn changed_files(&self, dir: &Path) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for (p, h) in &self.metric_files {
            if sha256_hex(&std::fs::read(dir.join(p))?) != *h {
                out.push(p.clone());
            }
        }
        Ok(out)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
