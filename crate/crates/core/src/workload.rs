//! Embedding workloads and query-batch generation.
//!
//! A [`Workload`] is a named list of embedding tables plus a batch size.
//! [`generate_queries`] turns it into per-table index matrices under one
//! of three distributions: uniform random (a cache stress test), fixed
//! (every index identical, a bank-conflict stress test), or empirical
//! (per-row weights, standing in for a dataset's real access statistics).
//!
//! Generation is a pure function of `(workload, seed)`: each table draws
//! from its own counter-based stream, so the same inputs produce the same
//! batch on every platform regardless of how generation is scheduled.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::CounterRng;

/// How one table's query indices are distributed.
#[derive(Debug, Clone, PartialEq)]
pub enum DistributionSpec {
    /// I.i.d. uniform over `[0, rows)`.
    Uniform,
    /// Every index equals the given row.
    Fixed(u64),
    /// I.i.d. from the normalized per-row weights (`weights.len() == rows`).
    Empirical(Vec<f64>),
}

impl DistributionSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DistributionSpec::Uniform => "uniform",
            DistributionSpec::Fixed(_) => "fixed",
            DistributionSpec::Empirical(_) => "empirical",
        }
    }
}

/// One embedding table: `rows x embed_dim` elements of `elem_bytes` each,
/// looked up `seq_len` times per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSpec {
    pub id: String,
    pub rows: u64,
    pub embed_dim: usize,
    pub elem_bytes: u32,
    pub seq_len: usize,
    pub distribution: DistributionSpec,
}

impl TableSpec {
    /// Bytes of one row.
    pub fn row_bytes(&self) -> u64 {
        self.embed_dim as u64 * self.elem_bytes as u64
    }
}

/// A set of tables plus the batch size they are queried with.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub name: String,
    pub tables: Vec<TableSpec>,
    pub batch_size: usize,
}

/// One generated batch: a `B x seq_len` index matrix per table.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBatch {
    pub seed: u64,
    /// Row-major `batch_size x seq_len` matrices, one per table, in
    /// workload table order.
    pub indices: Vec<Vec<u64>>,
}

impl QueryBatch {
    /// Index for `(table, sample, slot)`.
    #[inline]
    pub fn index(&self, table: usize, sample: usize, slot: usize, seq_len: usize) -> u64 {
        self.indices[table][sample * seq_len + slot]
    }
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("workload has no tables")]
    NoTables,
    #[error("batch_size must be >= 1")]
    ZeroBatch,
    #[error("duplicate table id `{0}`")]
    DuplicateId(String),
    #[error("table `{id}`: {reason}")]
    InvalidTable { id: String, reason: String },
    #[error("table `{id}`: byte size overflows (rows={rows}, embed_dim={embed_dim}, elem_bytes={elem_bytes})")]
    ByteOverflow { id: String, rows: u64, embed_dim: usize, elem_bytes: u32 },
}

fn invalid(id: &str, reason: impl fmt::Display) -> WorkloadError {
    WorkloadError::InvalidTable { id: id.to_string(), reason: reason.to_string() }
}

/// Total byte size of a table. Errors instead of wrapping on overflow.
pub fn table_bytes(t: &TableSpec) -> Result<u64, WorkloadError> {
    t.rows
        .checked_mul(t.embed_dim as u64)
        .and_then(|v| v.checked_mul(t.elem_bytes as u64))
        .ok_or(WorkloadError::ByteOverflow {
            id: t.id.clone(),
            rows: t.rows,
            embed_dim: t.embed_dim,
            elem_bytes: t.elem_bytes,
        })
}

fn validate_table(t: &TableSpec) -> Result<(), WorkloadError> {
    if t.rows == 0 {
        return Err(invalid(&t.id, "rows must be >= 1"));
    }
    if t.embed_dim == 0 {
        return Err(invalid(&t.id, "embed_dim must be >= 1"));
    }
    if t.seq_len == 0 {
        return Err(invalid(&t.id, "seq_len must be >= 1"));
    }
    if ![1, 2, 4, 8].contains(&t.elem_bytes) {
        return Err(invalid(&t.id, format!("elem_bytes must be one of 1,2,4,8 (got {})", t.elem_bytes)));
    }
    table_bytes(t)?;
    match &t.distribution {
        DistributionSpec::Uniform => {}
        DistributionSpec::Fixed(idx) => {
            if *idx >= t.rows {
                return Err(invalid(&t.id, format!("fixed index {} out of range [0, {})", idx, t.rows)));
            }
        }
        DistributionSpec::Empirical(w) => {
            if w.len() as u64 != t.rows {
                return Err(invalid(
                    &t.id,
                    format!("empirical weights length {} != rows {}", w.len(), t.rows),
                ));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(invalid(&t.id, "empirical weights must be finite and non-negative"));
            }
            if w.iter().sum::<f64>() <= 0.0 {
                return Err(invalid(&t.id, "empirical weights must not all be zero"));
            }
        }
    }
    Ok(())
}

impl Workload {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.tables.is_empty() {
            return Err(WorkloadError::NoTables);
        }
        if self.batch_size == 0 {
            return Err(WorkloadError::ZeroBatch);
        }
        let mut seen = std::collections::HashSet::new();
        for t in &self.tables {
            if !seen.insert(t.id.as_str()) {
                return Err(WorkloadError::DuplicateId(t.id.clone()));
            }
            validate_table(t)?;
        }
        Ok(())
    }

    pub fn table_index(&self, id: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.id == id)
    }

    /// Copy with a different batch size.
    pub fn with_batch_size(&self, batch_size: usize) -> Workload {
        Workload { batch_size, ..self.clone() }
    }
}

// ---------------------------------------------------------------------------
// File schema
// ---------------------------------------------------------------------------

#[derive(Deserialize, Serialize)]
struct WorkloadFile {
    name: String,
    batch_size: usize,
    tables: Vec<TableFile>,
}

#[derive(Deserialize, Serialize)]
struct TableFile {
    id: String,
    rows: u64,
    embed_dim: usize,
    elem_bytes: u32,
    seq_len: usize,
    distribution: DistributionFile,
}

#[derive(Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum DistributionFile {
    Uniform,
    Fixed { index: u64 },
    Empirical { weights_path: String },
}

/// Load and validate a workload from a JSON file.
///
/// Empirical distributions reference a weights file (one non-negative
/// decimal per line, exactly `rows` lines), resolved relative to the
/// workload file's directory.
pub fn load_workload(path: impl AsRef<Path>) -> Result<Workload, WorkloadError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| WorkloadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: WorkloadFile = serde_json::from_str(&text).map_err(|source| WorkloadError::Parse {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut tables = Vec::with_capacity(file.tables.len());
    for t in file.tables {
        let distribution = match t.distribution {
            DistributionFile::Uniform => DistributionSpec::Uniform,
            DistributionFile::Fixed { index } => DistributionSpec::Fixed(index),
            DistributionFile::Empirical { weights_path } => {
                let wpath = base.join(&weights_path);
                let wtext = std::fs::read_to_string(&wpath).map_err(|source| WorkloadError::Io {
                    path: wpath.display().to_string(),
                    source,
                })?;
                let mut weights = Vec::new();
                for (lineno, line) in wtext.lines().enumerate() {
                    let line = line.trim();
                    if line.is_empty() {
                        continue;
                    }
                    let w: f64 = line.parse().map_err(|e| {
                        invalid(&t.id, format!("weights line {}: {}", lineno + 1, e))
                    })?;
                    weights.push(w);
                }
                DistributionSpec::Empirical(weights)
            }
        };
        tables.push(TableSpec {
            id: t.id,
            rows: t.rows,
            embed_dim: t.embed_dim,
            elem_bytes: t.elem_bytes,
            seq_len: t.seq_len,
            distribution,
        });
    }

    let w = Workload { name: file.name, tables, batch_size: file.batch_size };
    w.validate()?;
    Ok(w)
}

// ---------------------------------------------------------------------------
// Query generation
// ---------------------------------------------------------------------------

/// Normalized-weight sampler: cumulative sums plus binary search.
struct EmpiricalSampler {
    cumulative: Vec<f64>,
    total: f64,
}

impl EmpiricalSampler {
    fn new(weights: &[f64]) -> Self {
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in weights {
            acc += w;
            cumulative.push(acc);
        }
        Self { cumulative, total: acc }
    }

    fn sample(&self, rng: &mut CounterRng) -> u64 {
        let u = rng.next_unit_f64() * self.total;
        self.cumulative.partition_point(|c| *c <= u) as u64
    }
}

fn generate_table(t: &TableSpec, batch_size: usize, seed: u64, stream: u64) -> Vec<u64> {
    let n = batch_size * t.seq_len;
    match &t.distribution {
        DistributionSpec::Fixed(idx) => vec![*idx; n],
        DistributionSpec::Uniform => {
            let mut rng = CounterRng::new(seed, stream);
            (0..n).map(|_| rng.next_index(t.rows)).collect()
        }
        DistributionSpec::Empirical(weights) => {
            let sampler = EmpiricalSampler::new(weights);
            let mut rng = CounterRng::new(seed, stream);
            (0..n).map(|_| sampler.sample(&mut rng)).collect()
        }
    }
}

/// Generate one query batch. Pure in `(w, seed)`; table `i` draws from
/// stream `i` of the seed, so per-table generation order is irrelevant.
pub fn generate_queries(w: &Workload, seed: u64) -> QueryBatch {
    let indices = w
        .tables
        .iter()
        .enumerate()
        .map(|(i, t)| generate_table(t, w.batch_size, seed, i as u64))
        .collect();
    QueryBatch { seed, indices }
}

/// Per-row weights proportional to `1 / (rank + 1)^exponent`, a handy
/// synthetic stand-in for skewed real-world access statistics.
pub fn zipf_weights(rows: usize, exponent: f64) -> Vec<f64> {
    (0..rows).map(|r| 1.0 / ((r + 1) as f64).powf(exponent)).collect()
}
