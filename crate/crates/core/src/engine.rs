//! Functional plan execution and batch-latency simulation.
//!
//! The functional half really performs the lookups: per-core gathers
//! with chunk offset adjustment (out-of-chunk indices are clipped and
//! their contribution masked to zero), sum pooling in double precision,
//! and inter-core accumulation merged in core order so results are
//! bit-identical regardless of scheduling. [`reference_execute`] is the
//! single-core oracle every plan must agree with.
//!
//! The timing half charges each assignment by strategy:
//!
//! - `GM`/`L1`: one row at a time, transfer and pooling overlapped by
//!   double buffering, so a row costs `max(transfer, pool)` after the
//!   first. `GM` row transfers are rounded up to the burst granularity
//!   and multiplied by `1 + conflict_penalty * (c - 1)` when `c` cores
//!   touch the same row in the same batch.
//! - `GM-UB`: the chunk is staged through shared memory in tiles of at
//!   most `ub_bytes` every batch (one access latency per tile plus a
//!   per-byte cost), then lookups run vectorized.
//! - `L1-UB`: as `GM-UB` but the chunk is already resident; staging is
//!   a one-off setup cost reported separately, not batch time.
//!
//! Batch latency is the maximum per-core time. [`simulate`] repeats this
//! over freshly generated query batches and reports P99, throughput, and
//! the observed load imbalance.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::StrategyKind;
use crate::machine::MachineModel;
use crate::partitioner::{Assignment, Plan};
use crate::rng::{self, CounterRng};
use crate::workload::{generate_queries, QueryBatch, TableSpec, Workload};

/// Dense row-major matrix of `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct TableMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl TableMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// The embedding tables themselves, one `rows x embed_dim` matrix per
/// workload table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub tables: Vec<TableMatrix>,
}

impl EmbeddingStore {
    /// Deterministic test fixture with integer values in `[1, max_value]`
    /// so every row contributes visibly to any sum.
    pub fn integer_fixture(w: &Workload, seed: u64, max_value: u32) -> Self {
        let tables = w
            .tables
            .iter()
            .enumerate()
            .map(|(ti, t)| {
                let mut rng = CounterRng::new(seed, (1 << 32) | ti as u64);
                let n = t.rows as usize * t.embed_dim;
                let data =
                    (0..n).map(|_| (1 + rng.next_index(max_value as u64)) as f32).collect();
                TableMatrix { rows: t.rows as usize, cols: t.embed_dim, data }
            })
            .collect();
        Self { tables }
    }

    fn check_shape(&self, w: &Workload) -> Result<(), EngineError> {
        if self.tables.len() != w.tables.len() {
            return Err(EngineError::ShapeMismatch(format!(
                "store has {} tables, workload {}",
                self.tables.len(),
                w.tables.len()
            )));
        }
        for (m, t) in self.tables.iter().zip(&w.tables) {
            if m.rows as u64 != t.rows || m.cols != t.embed_dim || m.data.len() != m.rows * m.cols {
                return Err(EngineError::ShapeMismatch(format!(
                    "table `{}`: store is {}x{}, spec is {}x{}",
                    t.id, m.rows, m.cols, t.rows, t.embed_dim
                )));
            }
        }
        Ok(())
    }
}

/// Sum-pooled lookups: one `batch_size x embed_dim` matrix per table.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledOutput {
    pub tables: Vec<TableMatrix>,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("table `{table}`: index {index} out of range [0, {rows})")]
    IndexOutOfRange { table: String, index: u64, rows: u64 },
    #[error("plan does not match workload: {0}")]
    PlanMismatch(String),
    #[error("invalid timing config: {0}")]
    BadTiming(String),
    #[error("percentile of empty sample list")]
    EmptySamples,
    #[error("percentile fraction must be in (0, 1] (got {0})")]
    BadPercentile(f64),
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
}

// ---------------------------------------------------------------------------
// Timing configuration
// ---------------------------------------------------------------------------

/// Per-strategy timing parameters, all seconds (or seconds per byte).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    /// Fixed per-assignment overhead by strategy.
    pub gm_base: f64,
    pub l1_base: f64,
    pub gm_ub_base: f64,
    pub l1_ub_base: f64,
    /// Fixed overhead of one random global-memory row access.
    pub gm_row_latency: f64,
    /// Seconds per byte moved from global memory (rows rounded up to
    /// `row_access_bytes_min`).
    pub gm_per_byte: f64,
    /// Seconds per byte read from the per-core L1 buffer.
    pub l1_per_byte: f64,
    /// Seconds per byte pooled into the accumulator.
    pub pool_per_byte: f64,
    /// Seconds per byte gathered by the vector unit from shared memory.
    pub ub_gather_per_byte: f64,
    /// Seconds per byte staged into shared memory (UB tiles, L1 preload).
    pub stage_in_per_byte: f64,
    /// Multiplicative jitter amplitude in [0, 1); 0 disables noise.
    pub noise: f64,
    /// Copied from the machine so timing is self-contained.
    pub row_access_bytes_min: u64,
    pub ub_bytes: u64,
    pub conflict_penalty: f64,
}

impl TimingConfig {
    /// Derive a timing model from machine bandwidths and latencies.
    pub fn from_machine(m: &MachineModel) -> Self {
        Self {
            gm_base: 1e-6,
            l1_base: 1e-6,
            gm_ub_base: 1e-6,
            l1_ub_base: 1e-6,
            gm_row_latency: m.gm_access_latency,
            gm_per_byte: 1.0 / m.gm_bandwidth,
            l1_per_byte: 1.0 / m.l1_bandwidth,
            pool_per_byte: 1.0 / m.l1_bandwidth,
            ub_gather_per_byte: 0.25 / m.l1_bandwidth,
            stage_in_per_byte: 1.0 / m.gm_bandwidth,
            noise: 0.0,
            row_access_bytes_min: m.row_access_bytes_min,
            ub_bytes: m.ub_bytes,
            conflict_penalty: m.conflict_penalty,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let rates = [
            self.gm_base,
            self.l1_base,
            self.gm_ub_base,
            self.l1_ub_base,
            self.gm_row_latency,
            self.gm_per_byte,
            self.l1_per_byte,
            self.pool_per_byte,
            self.ub_gather_per_byte,
            self.stage_in_per_byte,
            self.conflict_penalty,
        ];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(EngineError::BadTiming("all times must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(EngineError::BadTiming(format!("noise {} not in [0, 1)", self.noise)));
        }
        if self.ub_bytes == 0 || self.row_access_bytes_min == 0 {
            return Err(EngineError::BadTiming("ub_bytes and row_access_bytes_min must be > 0".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EngineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| EngineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: TimingConfig = serde_json::from_str(&text).map_err(|source| EngineError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Transfer time of one global-memory row access contended by
    /// `cores` cores: `(latency + bytes/bandwidth) * (1 + penalty*(c-1))`.
    pub fn gm_access_time(&self, row_bytes: u64, cores: u32) -> f64 {
        let eff = row_bytes.max(self.row_access_bytes_min) as f64;
        let base = self.gm_row_latency + self.gm_per_byte * eff;
        base * (1.0 + self.conflict_penalty * (cores.saturating_sub(1)) as f64)
    }
}

// ---------------------------------------------------------------------------
// Reference (single-core) execution
// ---------------------------------------------------------------------------

fn check_query_shape(w: &Workload, q: &QueryBatch) -> Result<(), EngineError> {
    if q.indices.len() != w.tables.len() {
        return Err(EngineError::ShapeMismatch(format!(
            "query batch has {} tables, workload {}",
            q.indices.len(),
            w.tables.len()
        )));
    }
    for (t, idx) in w.tables.iter().zip(&q.indices) {
        if idx.len() != w.batch_size * t.seq_len {
            return Err(EngineError::ShapeMismatch(format!(
                "table `{}`: query matrix has {} entries, expected {}",
                t.id,
                idx.len(),
                w.batch_size * t.seq_len
            )));
        }
    }
    Ok(())
}

/// Gather and sum-pool every lookup on a single core, accumulating in
/// double precision and rounding once at the end. The oracle for
/// [`execute_plan`].
pub fn reference_execute(
    w: &Workload,
    store: &EmbeddingStore,
    q: &QueryBatch,
) -> Result<PooledOutput, EngineError> {
    store.check_shape(w)?;
    check_query_shape(w, q)?;
    let b = w.batch_size;
    let mut tables = Vec::with_capacity(w.tables.len());
    for (ti, t) in w.tables.iter().enumerate() {
        let dim = t.embed_dim;
        let mat = &store.tables[ti];
        let mut out = TableMatrix::zeros(b, dim);
        let mut acc = vec![0.0f64; dim];
        for sample in 0..b {
            acc.fill(0.0);
            for slot in 0..t.seq_len {
                let idx = q.index(ti, sample, slot, t.seq_len);
                if idx >= t.rows {
                    return Err(EngineError::IndexOutOfRange {
                        table: t.id.clone(),
                        index: idx,
                        rows: t.rows,
                    });
                }
                for (a, v) in acc.iter_mut().zip(mat.row(idx as usize)) {
                    *a += *v as f64;
                }
            }
            for (o, a) in out.data[sample * dim..(sample + 1) * dim].iter_mut().zip(&acc) {
                *o = *a as f32;
            }
        }
        tables.push(out);
    }
    Ok(PooledOutput { tables })
}

// ---------------------------------------------------------------------------
// Plan execution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default)]
pub struct ExecOptions {
    /// Diagnostic mode: skip the out-of-chunk zero mask so clipped
    /// lookups contribute the clamped row. Used to demonstrate that the
    /// mask is load-bearing on chunk-spanning query streams.
    pub disable_chunk_mask: bool,
}

/// Result of executing a plan over one query batch.
#[derive(Debug, Clone)]
pub struct Execution {
    pub output: PooledOutput,
    /// Batch latency: the maximum per-core time.
    pub latency: f64,
    pub core_times: Vec<f64>,
}

/// Rows contended by several cores: `(table, row) -> distinct cores`.
type ConflictMap = HashMap<(usize, u64), u32>;

fn resolve_table<'w>(w: &'w Workload, a: &Assignment) -> Result<(usize, &'w TableSpec), EngineError> {
    let ti = w
        .table_index(&a.chunk.table_id)
        .ok_or_else(|| EngineError::PlanMismatch(format!("unknown table `{}`", a.chunk.table_id)))?;
    Ok((ti, &w.tables[ti]))
}

fn check_plan_shape(p: &Plan, w: &Workload) -> Result<(), EngineError> {
    for a in &p.assignments {
        let (_, t) = resolve_table(w, a)?;
        if a.batch_span.end > w.batch_size || a.batch_span.is_empty() {
            return Err(EngineError::PlanMismatch(format!(
                "table `{}`: span [{}, {}) invalid for batch {}",
                t.id, a.batch_span.start, a.batch_span.end, w.batch_size
            )));
        }
        if a.core >= p.cores() {
            return Err(EngineError::PlanMismatch(format!(
                "core {} out of range [0, {})",
                a.core,
                p.cores()
            )));
        }
        let chunk_end = a.chunk.row_offset.checked_add(a.chunk.row_count);
        if a.chunk.row_count == 0 || chunk_end.is_none_or(|end| end > t.rows) {
            return Err(EngineError::PlanMismatch(format!(
                "table `{}`: chunk [{}, +{}) invalid for {} rows",
                t.id, a.chunk.row_offset, a.chunk.row_count, t.rows
            )));
        }
    }
    Ok(())
}

/// The row a core actually touches for a global index: local index
/// clipped to the chunk, mapped back to global coordinates.
#[inline]
fn clamped_row(idx: u64, offset: u64, count: u64) -> u64 {
    if idx < offset {
        offset
    } else if idx >= offset + count {
        offset + count - 1
    } else {
        idx
    }
}

fn build_conflict_map(p: &Plan, w: &Workload, q: &QueryBatch) -> Result<ConflictMap, EngineError> {
    let mut touched: HashMap<(usize, u64), HashSet<usize>> = HashMap::new();
    for a in &p.assignments {
        if a.strategy != StrategyKind::Gm {
            continue;
        }
        let (ti, t) = resolve_table(w, a)?;
        for sample in a.batch_span.start..a.batch_span.end {
            for slot in 0..t.seq_len {
                let idx = q.index(ti, sample, slot, t.seq_len);
                let row = clamped_row(idx, a.chunk.row_offset, a.chunk.row_count);
                touched.entry((ti, row)).or_default().insert(a.core);
            }
        }
    }
    Ok(touched.into_iter().map(|(k, cores)| (k, cores.len() as u32)).collect())
}

/// Time one assignment under the config. `conflicts` is consulted only
/// by the GM strategy; `None` means conflict-free closed forms.
fn assignment_time(
    a: &Assignment,
    ti: usize,
    t: &TableSpec,
    q: Option<&QueryBatch>,
    cfg: &TimingConfig,
    conflicts: Option<&ConflictMap>,
) -> f64 {
    let lookups = a.batch_span.len() * t.seq_len;
    let row_bytes = t.row_bytes();
    let chunk_bytes = a.chunk.bytes(row_bytes);
    let pool = cfg.pool_per_byte * row_bytes as f64;
    match a.strategy {
        StrategyKind::Gm => {
            match (conflicts, q) {
                (Some(map), Some(q)) => {
                    // Double-buffered row loop with per-access conflict
                    // multipliers: first transfer exposed, then the
                    // slower of (transfer, pool) per row, final pool.
                    let mut total = cfg.gm_base + pool;
                    let mut first = true;
                    for sample in a.batch_span.start..a.batch_span.end {
                        for slot in 0..t.seq_len {
                            let idx = q.index(ti, sample, slot, t.seq_len);
                            let row = clamped_row(idx, a.chunk.row_offset, a.chunk.row_count);
                            let cores = map.get(&(ti, row)).copied().unwrap_or(1);
                            let transfer = cfg.gm_access_time(row_bytes, cores);
                            if first {
                                total += transfer;
                                first = false;
                            } else {
                                total += transfer.max(pool);
                            }
                        }
                    }
                    total
                }
                _ => {
                    let transfer = cfg.gm_access_time(row_bytes, 1);
                    cfg.gm_base + transfer + pool + (lookups as f64 - 1.0) * transfer.max(pool)
                }
            }
        }
        StrategyKind::L1 => {
            let transfer = cfg.l1_per_byte * row_bytes as f64;
            cfg.l1_base + transfer + pool + (lookups as f64 - 1.0) * transfer.max(pool)
        }
        StrategyKind::GmUb => {
            let tiles = chunk_bytes.div_ceil(cfg.ub_bytes);
            let stage = tiles as f64 * cfg.gm_row_latency
                + chunk_bytes as f64 * cfg.stage_in_per_byte;
            cfg.gm_ub_base + stage + lookups as f64 * cfg.ub_gather_per_byte * row_bytes as f64
        }
        StrategyKind::L1Ub => {
            cfg.l1_ub_base + lookups as f64 * cfg.ub_gather_per_byte * row_bytes as f64
        }
    }
}

fn per_core_assignments(p: &Plan) -> Vec<Vec<&Assignment>> {
    let mut by_core: Vec<Vec<&Assignment>> = vec![Vec::new(); p.cores()];
    for a in &p.assignments {
        by_core[a.core].push(a);
    }
    by_core
}

/// Per-core times for one batch. `q` is required when conflicts matter
/// (GM assignments with a nonzero penalty); otherwise timing is
/// closed-form and query-independent.
fn plan_core_times(
    p: &Plan,
    w: &Workload,
    q: Option<&QueryBatch>,
    cfg: &TimingConfig,
) -> Result<Vec<f64>, EngineError> {
    let conflicts = match (cfg.conflict_penalty > 0.0, q) {
        (true, Some(q)) if p.assignments.iter().any(|a| a.strategy == StrategyKind::Gm) => {
            Some(build_conflict_map(p, w, q)?)
        }
        _ => None,
    };
    let by_core = per_core_assignments(p);
    by_core
        .par_iter()
        .map(|assignments| {
            let mut total = 0.0;
            for a in assignments {
                let (ti, t) = resolve_table(w, a)?;
                total += assignment_time(a, ti, t, q, cfg, conflicts.as_ref());
            }
            Ok(total)
        })
        .collect()
}

/// Execute a plan over one query batch: real gathers with chunk
/// clipping/masking, per-core partial sums merged in core order, plus
/// per-core timing. The pooled output must match [`reference_execute`]
/// exactly on integer-valued stores.
pub fn execute_plan(
    p: &Plan,
    w: &Workload,
    store: &EmbeddingStore,
    q: &QueryBatch,
    cfg: &TimingConfig,
) -> Result<Execution, EngineError> {
    execute_plan_with(p, w, store, q, cfg, ExecOptions::default())
}

pub fn execute_plan_with(
    p: &Plan,
    w: &Workload,
    store: &EmbeddingStore,
    q: &QueryBatch,
    cfg: &TimingConfig,
    opts: ExecOptions,
) -> Result<Execution, EngineError> {
    store.check_shape(w)?;
    check_query_shape(w, q)?;
    check_plan_shape(p, w)?;
    cfg.validate()?;

    struct Partial {
        table: usize,
        start: usize,
        acc: Vec<f64>, // span.len() x embed_dim
    }

    let by_core = per_core_assignments(p);
    let partials: Vec<Result<Vec<Partial>, EngineError>> = by_core
        .par_iter()
        .map(|assignments| {
            let mut out = Vec::with_capacity(assignments.len());
            for a in assignments {
                let (ti, t) = resolve_table(w, a)?;
                let dim = t.embed_dim;
                let mat = &store.tables[ti];
                let span = a.batch_span;
                let mut acc = vec![0.0f64; span.len() * dim];
                let (offset, count) = (a.chunk.row_offset, a.chunk.row_count);
                for (si, sample) in (span.start..span.end).enumerate() {
                    let dst = &mut acc[si * dim..(si + 1) * dim];
                    for slot in 0..t.seq_len {
                        let idx = q.index(ti, sample, slot, t.seq_len);
                        if idx >= t.rows {
                            return Err(EngineError::IndexOutOfRange {
                                table: t.id.clone(),
                                index: idx,
                                rows: t.rows,
                            });
                        }
                        let in_chunk = idx >= offset && idx < offset + count;
                        if in_chunk || opts.disable_chunk_mask {
                            let row = clamped_row(idx, offset, count);
                            for (d, v) in dst.iter_mut().zip(mat.row(row as usize)) {
                                *d += *v as f64;
                            }
                        }
                    }
                }
                out.push(Partial { table: ti, start: span.start, acc });
            }
            Ok(out)
        })
        .collect();

    // Merge in core order into double-precision accumulators, then round
    // once to the output precision.
    let mut acc: Vec<Vec<f64>> =
        w.tables.iter().map(|t| vec![0.0f64; w.batch_size * t.embed_dim]).collect();
    for core_partials in partials {
        for part in core_partials? {
            let dim = w.tables[part.table].embed_dim;
            let dst = &mut acc[part.table][part.start * dim..];
            for (d, v) in dst.iter_mut().zip(&part.acc) {
                *d += *v;
            }
        }
    }
    let tables = acc
        .into_iter()
        .zip(&w.tables)
        .map(|(a, t)| TableMatrix {
            rows: w.batch_size,
            cols: t.embed_dim,
            data: a.into_iter().map(|v| v as f32).collect(),
        })
        .collect();

    let core_times = plan_core_times(p, w, Some(q), cfg)?;
    let latency = core_times.iter().cloned().fold(0.0, f64::max);
    Ok(Execution { output: PooledOutput { tables }, latency, core_times })
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// Result of simulating a plan over many batches.
#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    /// One latency sample per simulated batch, in batch order.
    pub latency_samples: Vec<f64>,
    /// Order statistic at `ceil(0.99 * n)` of the latency samples.
    pub p99: f64,
    /// `batch_size * batches / sum(latency_samples)`, queries/second.
    pub avg_throughput: f64,
    /// LIF of the per-core mean times.
    pub lif_observed: f64,
    /// Per-core time of every batch: `per_core_times[core][batch]`.
    pub per_core_times: Vec<Vec<f64>>,
    /// One-off L1 preload time (slowest core), excluded from latency.
    pub setup_s: f64,
}

/// One-off cost of preloading L1-resident chunks, assuming cores load in
/// parallel: the slowest core's distinct resident bytes times the
/// stage-in rate.
pub fn plan_setup_time(p: &Plan, w: &Workload, cfg: &TimingConfig) -> f64 {
    type ResidentChunks = HashSet<(usize, u64, u64)>;
    let mut per_core: HashMap<usize, (u64, ResidentChunks)> = HashMap::new();
    for a in &p.assignments {
        if !a.strategy.is_l1() {
            continue;
        }
        let Some(ti) = w.table_index(&a.chunk.table_id) else { continue };
        let entry = per_core.entry(a.core).or_default();
        if entry.1.insert((ti, a.chunk.row_offset, a.chunk.row_count)) {
            entry.0 += a.chunk.bytes(w.tables[ti].row_bytes());
        }
    }
    per_core
        .values()
        .map(|(bytes, _)| *bytes as f64 * cfg.stage_in_per_byte)
        .fold(0.0, f64::max)
}

const JITTER_SALT: u64 = 0x6a69_7474_6572_0001;

/// Simulate `batches` query batches (seeds derived from `seed`) and
/// collect latency statistics. Functional execution is skipped; query
/// batches are only generated when GM conflicts can affect timing.
pub fn simulate(
    p: &Plan,
    w: &Workload,
    cfg: &TimingConfig,
    batches: usize,
    seed: u64,
) -> Result<SimResult, EngineError> {
    if batches == 0 {
        return Err(EngineError::EmptySamples);
    }
    if batches < 100 {
        log::warn!("simulating only {batches} batches; P99 wants >= 100 for a meaningful tail");
    }
    check_plan_shape(p, w)?;
    cfg.validate()?;

    let needs_queries =
        cfg.conflict_penalty > 0.0 && p.assignments.iter().any(|a| a.strategy == StrategyKind::Gm);

    let cores = p.cores();
    let mut latency_samples = Vec::with_capacity(batches);
    let mut per_core_times: Vec<Vec<f64>> = vec![Vec::with_capacity(batches); cores];
    for batch in 0..batches {
        let batch_seed = rng::derive_key(seed, batch as u64);
        let q = if needs_queries { Some(generate_queries(w, batch_seed)) } else { None };
        let mut times = plan_core_times(p, w, q.as_ref(), cfg)?;
        if cfg.noise > 0.0 {
            for (core, t) in times.iter_mut().enumerate() {
                let u = CounterRng::new(batch_seed ^ JITTER_SALT, core as u64).next_unit_f64();
                *t *= 1.0 + cfg.noise * (2.0 * u - 1.0);
            }
        }
        let latency = times.iter().cloned().fold(0.0, f64::max);
        latency_samples.push(latency);
        for (core, t) in times.into_iter().enumerate() {
            per_core_times[core].push(t);
        }
    }

    let p99 = percentile(&latency_samples, 0.99)?;
    let total: f64 = latency_samples.iter().sum();
    let avg_throughput = (w.batch_size * batches) as f64 / total;
    let mean_core: Vec<f64> =
        per_core_times.iter().map(|ts| ts.iter().sum::<f64>() / batches as f64).collect();
    let lif_observed = crate::partitioner::lif(&mean_core).unwrap_or(1.0);

    Ok(SimResult {
        latency_samples,
        p99,
        avg_throughput,
        lif_observed,
        per_core_times,
        setup_s: plan_setup_time(p, w, cfg),
    })
}

/// Order statistic at 1-based index `ceil(p * n)`. A tiny epsilon
/// counters floating-point slop so that mathematically integral
/// positions (e.g. `0.99 * 100`) land on the intended index.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64, EngineError> {
    if samples.is_empty() {
        return Err(EngineError::EmptySamples);
    }
    let fraction_ok = p > 0.0 && p <= 1.0;
    if !fraction_ok {
        return Err(EngineError::BadPercentile(p));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = (p * n as f64 - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}
