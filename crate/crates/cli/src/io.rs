//! Long-form CSV files and the JSON manifest.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so
//! reading a file back reproduces every value bit for bit.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sphcov::models::{PeriodicTruth, TrialTensor};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const DATA_FILE: &str = "data.csv";
pub const TRUTH_MEAN_FILE: &str = "truth_mean.csv";
pub const TRUTH_COV_FILE: &str = "truth_cov.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMING_FILE: &str = "timing.json";

pub fn num(x: f64) -> String {
    x.to_string()
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Header-first CSV writer that counts data rows.
pub struct CsvOut {
    path: PathBuf,
    inner: csv::Writer<File>,
    rows: usize,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> CliResult<Self> {
        let mut inner = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        inner.write_record(header).map_err(|e| csv_err(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            inner,
            rows: 0,
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> CliResult<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner
            .write_record(fields)
            .map_err(|e| csv_err(&self.path, e))?;
        self.rows += 1;
        Ok(())
    }

    /// Flushes and returns the number of data rows.
    pub fn finish(mut self) -> CliResult<usize> {
        self.inner
            .flush()
            .map_err(|e| CliError::io(&self.path, e))?;
        Ok(self.rows)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            other => CliError::parse(path, format!("{other:?}")),
        }
    } else {
        CliError::parse(path, e)
    }
}

/// Rows of a CSV file keyed by header name.
pub struct CsvIn {
    path: PathBuf,
    columns: HashMap<String, usize>,
    records: Vec<csv::StringRecord>,
}

impl CsvIn {
    pub fn open(path: &Path, required: &[&str]) -> CliResult<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let columns: HashMap<String, usize> = rdr
            .headers()
            .map_err(|e| csv_err(path, e))?
            .iter()
            .enumerate()
            .map(|(k, h)| (h.trim().to_string(), k))
            .collect();
        if let Some(c) = required.iter().find(|c| !columns.contains_key(**c)) {
            return Err(CliError::parse(path, format!("missing column '{c}'")));
        }
        let records = rdr
            .records()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| csv_err(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            columns,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn str(&self, row: usize, col: &str) -> &str {
        self.records[row][self.columns[col]].trim()
    }

    pub fn f64(&self, row: usize, col: &str) -> CliResult<f64> {
        let s = self.str(row, col);
        s.parse().map_err(|_| {
            CliError::parse(
                &self.path,
                format!("row {}: '{s}' in column '{col}' is not a number", row + 1),
            )
        })
    }

    pub fn usize(&self, row: usize, col: &str) -> CliResult<usize> {
        let s = self.str(row, col);
        s.parse().map_err(|_| {
            CliError::parse(
                &self.path,
                format!(
                    "row {}: '{s}' in column '{col}' is not a non-negative integer",
                    row + 1
                ),
            )
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Columns `trial, time_index, time, channel, value`.
pub fn write_tensor(path: &Path, data: &TrialTensor) -> CliResult<usize> {
    let mut out = CsvOut::create(path, &["trial", "time_index", "time", "channel", "value"])?;
    let times = data.times();
    for m in 0..data.n_trials() {
        for (n, t) in times.iter().enumerate() {
            for d in 0..data.dim() {
                out.row([
                    data.trial_labels()[m].clone(),
                    n.to_string(),
                    num(*t),
                    data.channel_labels()[d].clone(),
                    num(data.get(m, n, d)),
                ])?;
            }
        }
    }
    out.finish()
}

/// Reads a long-form tensor. Trials and channels keep their labels in
/// order of first appearance; every (trial, time, channel) cell must occur
/// exactly once.
pub fn read_tensor(path: &Path) -> CliResult<TrialTensor> {
    let f = CsvIn::open(path, &["trial", "time_index", "time", "channel", "value"])?;
    if f.is_empty() {
        return Err(CliError::RaggedData(format!("{}: no rows", path.display())));
    }
    let mut trials: Vec<String> = Vec::new();
    let mut trial_ix: HashMap<String, usize> = HashMap::new();
    let mut channels: Vec<String> = Vec::new();
    let mut channel_ix: HashMap<String, usize> = HashMap::new();
    let mut times: BTreeMap<usize, f64> = BTreeMap::new();
    let mut cells = Vec::with_capacity(f.len());
    for r in 0..f.len() {
        let label = |v: &mut Vec<String>, ix: &mut HashMap<String, usize>, s: &str| {
            *ix.entry(s.to_string()).or_insert_with(|| {
                v.push(s.to_string());
                v.len() - 1
            })
        };
        let m = label(&mut trials, &mut trial_ix, f.str(r, "trial"));
        let d = label(&mut channels, &mut channel_ix, f.str(r, "channel"));
        let n = f.usize(r, "time_index")?;
        let t = f.f64(r, "time")?;
        if let Some(prev) = times.insert(n, t) {
            if prev.to_bits() != t.to_bits() {
                return Err(CliError::RaggedData(format!(
                    "time index {n} has times {prev} and {t}"
                )));
            }
        }
        cells.push((m, n, d, f.f64(r, "value")?));
    }
    let (m_all, d_all) = (trials.len(), channels.len());
    let n_all = times.len();
    if times.keys().enumerate().any(|(k, n)| k != *n) {
        return Err(CliError::RaggedData(format!(
            "time indices must run 0..{}",
            n_all - 1
        )));
    }
    let mut values = vec![f64::NAN; m_all * n_all * d_all];
    let mut seen = vec![false; values.len()];
    for (m, n, d, v) in cells {
        let k = (m * n_all + n) * d_all + d;
        if seen[k] {
            return Err(CliError::RaggedData(format!(
                "duplicate cell trial {}, time index {n}, channel {}",
                trials[m], channels[d]
            )));
        }
        seen[k] = true;
        values[k] = v;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(CliError::RaggedData(format!(
            "missing cell trial {}, time index {}, channel {}",
            trials[k / (n_all * d_all)],
            (k / d_all) % n_all,
            channels[k % d_all]
        )));
    }
    let tensor = TrialTensor::new(m_all, n_all, d_all, values, times.into_values().collect())?;
    Ok(tensor.with_labels(trials, channels)?)
}

/// Writes `truth_mean.csv` (`time_index, time, channel, value`) and
/// `truth_cov.csv` (`time_index, time, i, j, value`, `j ≤ i`).
pub fn write_truth(dir: &Path, truth: &PeriodicTruth) -> CliResult<BTreeMap<String, usize>> {
    let mut rows = BTreeMap::new();
    let mut mean = CsvOut::create(
        &dir.join(TRUTH_MEAN_FILE),
        &["time_index", "time", "channel", "value"],
    )?;
    let mut cov = CsvOut::create(
        &dir.join(TRUTH_COV_FILE),
        &["time_index", "time", "i", "j", "value"],
    )?;
    for (n, t) in truth.times.iter().enumerate() {
        for i in 0..truth.dim() {
            mean.row([
                n.to_string(),
                num(*t),
                i.to_string(),
                num(truth.mean[(n, i)]),
            ])?;
            for j in 0..=i {
                cov.row([
                    n.to_string(),
                    num(*t),
                    i.to_string(),
                    j.to_string(),
                    num(truth.cov[n][(i, j)]),
                ])?;
            }
        }
    }
    rows.insert(TRUTH_MEAN_FILE.to_string(), mean.finish()?);
    rows.insert(TRUTH_COV_FILE.to_string(), cov.finish()?);
    Ok(rows)
}

pub fn read_truth(dir: &Path) -> CliResult<PeriodicTruth> {
    let mean_f = CsvIn::open(
        &dir.join(TRUTH_MEAN_FILE),
        &["time_index", "time", "channel", "value"],
    )?;
    let cov_f = CsvIn::open(
        &dir.join(TRUTH_COV_FILE),
        &["time_index", "time", "i", "j", "value"],
    )?;
    let mut times: BTreeMap<usize, f64> = BTreeMap::new();
    let mut d = 0;
    for r in 0..mean_f.len() {
        times.insert(mean_f.usize(r, "time_index")?, mean_f.f64(r, "time")?);
        d = d.max(mean_f.usize(r, "channel")? + 1);
    }
    let n = times.len();
    if n == 0 || mean_f.len() != n * d || times.keys().enumerate().any(|(k, t)| k != *t) {
        return Err(CliError::RaggedData(format!(
            "{} is not a complete time-by-channel grid",
            mean_f.path().display()
        )));
    }
    let mut mean = DMatrix::zeros(n, d);
    for r in 0..mean_f.len() {
        mean[(mean_f.usize(r, "time_index")?, mean_f.usize(r, "channel")?)] =
            mean_f.f64(r, "value")?;
    }
    let mut cov = vec![DMatrix::zeros(d, d); n];
    for r in 0..cov_f.len() {
        let (t, i, j) = (
            cov_f.usize(r, "time_index")?,
            cov_f.usize(r, "i")?,
            cov_f.usize(r, "j")?,
        );
        if t >= n || i >= d || j >= d {
            return Err(CliError::RaggedData(format!(
                "{}: entry ({t}, {i}, {j}) is out of range",
                cov_f.path().display()
            )));
        }
        let v = cov_f.f64(r, "value")?;
        cov[t][(i, j)] = v;
        cov[t][(j, i)] = v;
    }
    Ok(PeriodicTruth::new(
        times.into_values().collect(),
        mean,
        cov,
    )?)
}

/// Row counts of the sample files written by one chain.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub chain: usize,
    /// Seed of the chain's random stream (run seed plus chain index).
    pub seed: u64,
    pub retained: usize,
    pub accept_rate: f64,
    pub step_size: f64,
    /// Data rows per file, relative to the archive directory.
    pub files: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub trials: usize,
    pub times: usize,
    pub dim: usize,
    pub band: usize,
}

/// Describes an output directory. Holds nothing that varies between runs
/// with equal configurations; wall times go to `timing.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub kind: ArchiveKind,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub shape: Shape,
    pub chains: Vec<ChainRecord>,
    /// Data rows of the files at the top of the directory.
    pub files: BTreeMap<String, usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchiveKind {
    Data,
    Validation,
    Static,
    Dynamic,
}

impl Manifest {
    pub fn new(command: &str, kind: ArchiveKind, config: &ExperimentConfig, shape: Shape) -> Self {
        Self {
            command: command.to_string(),
            kind,
            seed: config.seed,
            config: config.clone(),
            shape,
            chains: Vec::new(),
            files: BTreeMap::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    pub fn read(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::parse(&path, e))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::parse(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Data rows of a CSV file (lines after the header).
pub fn count_rows(path: &Path) -> CliResult<usize> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(text.lines().count().saturating_sub(1))
}
