//! Parametric machine description and the conflict-free throughput
//! estimator.
//!
//! A [`MachineModel`] is a small bag of numbers: core count, per-core
//! scratchpad capacities (a persistent L1 buffer and a unified buffer
//! next to the vector unit), global-memory bandwidth and access latency,
//! the minimum burst granularity of global memory, and a single
//! conflict-penalty knob. Presets exist for convenience; bandwidth and
//! latency values are editable configuration, not ground truth.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::{table_bytes, Workload};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineModel {
    pub name: String,
    /// Core count (K).
    pub cores: usize,
    /// Per-core persistent buffer capacity in bytes (L).
    pub l1_bytes: u64,
    /// Per-core shared-memory / vector-buffer capacity in bytes.
    pub ub_bytes: u64,
    /// Aggregate global-memory bandwidth, bytes/second.
    pub gm_bandwidth: f64,
    /// Fixed overhead per random small global-memory access, seconds.
    pub gm_access_latency: f64,
    /// Per-core scratchpad read bandwidth, bytes/second.
    pub l1_bandwidth: f64,
    /// Minimum burst granularity of global memory, bytes.
    pub row_access_bytes_min: u64,
    /// Extra per-access slowdown per additional core contending on the
    /// same row: multiplier `1 + conflict_penalty * (c - 1)`.
    pub conflict_penalty: f64,
    /// Whether the software stack supports persisting tables in L1.
    pub l1_persistent: bool,
}

#[derive(Debug, Error)]
pub enum MachineError {
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
    #[error("machine `{name}`: {reason}")]
    Invalid { name: String, reason: String },
    #[error("unknown machine `{name}`; available presets: {available}")]
    UnknownPreset { name: String, available: String },
}

impl MachineModel {
    pub fn validate(&self) -> Result<(), MachineError> {
        let fail = |reason: &str| {
            Err(MachineError::Invalid { name: self.name.clone(), reason: reason.to_string() })
        };
        if self.cores == 0 {
            return fail("cores must be >= 1");
        }
        if self.l1_bytes == 0 || self.ub_bytes == 0 || self.row_access_bytes_min == 0 {
            return fail("capacities must be > 0");
        }
        let bandwidths_ok = self.gm_bandwidth > 0.0 && self.l1_bandwidth > 0.0;
        if !bandwidths_ok {
            return fail("bandwidths must be > 0");
        }
        let overheads_ok = self.gm_access_latency >= 0.0 && self.conflict_penalty >= 0.0;
        if !overheads_ok {
            return fail("latency and conflict penalty must be >= 0");
        }
        Ok(())
    }
}

/// Built-in presets. The capacities of `ascend910-like` mirror a 32-core
/// part with a 1 MiB L1 buffer and a 256 KiB unified buffer per core;
/// `gpu-like` disables L1 persistence (not supported by that stack) and
/// leans on a faster HBM.
pub fn builtin_machines() -> Vec<MachineModel> {
    vec![
        MachineModel {
            name: "ascend910-like".to_string(),
            cores: 32,
            l1_bytes: 1 << 20,
            ub_bytes: 256 << 10,
            gm_bandwidth: 1.2e12,
            gm_access_latency: 1.0e-8,
            l1_bandwidth: 1.0e11,
            row_access_bytes_min: 64,
            conflict_penalty: 1.0,
            l1_persistent: true,
        },
        MachineModel {
            name: "gpu-like".to_string(),
            cores: 108,
            l1_bytes: 192 << 10,
            ub_bytes: 164 << 10,
            gm_bandwidth: 1.555e12,
            gm_access_latency: 1.0e-8,
            l1_bandwidth: 1.0e11,
            row_access_bytes_min: 32,
            conflict_penalty: 1.0,
            l1_persistent: false,
        },
    ]
}

/// Look up a preset by name, or load a machine JSON file if `spec` is a
/// path. Preset names win over paths.
pub fn machine_by_name_or_path(spec: &str) -> Result<MachineModel, MachineError> {
    if let Some(m) = builtin_machines().into_iter().find(|m| m.name == spec) {
        return Ok(m);
    }
    let path = Path::new(spec);
    if path.exists() {
        return load_machine(path);
    }
    let available = builtin_machines().iter().map(|m| m.name.clone()).collect::<Vec<_>>().join(", ");
    Err(MachineError::UnknownPreset { name: spec.to_string(), available })
}

pub fn load_machine(path: impl AsRef<Path>) -> Result<MachineModel, MachineError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MachineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let m: MachineModel = serde_json::from_str(&text).map_err(|source| MachineError::Parse {
        path: path.display().to_string(),
        source,
    })?;
    m.validate()?;
    Ok(m)
}

/// Conflict-free throughput estimate in queries/second.
///
/// Tables are split symmetrically across the K cores. Tables that fit
/// the per-core L1 budget (first-fit, in descending-seq-len /
/// ascending-size order, only when persistence is enabled) are charged
/// to the per-core scratchpad bandwidth; everything else is charged to
/// aggregate global-memory bandwidth with each row transfer rounded up
/// to the burst granularity. Batch time is the slower of the two
/// channels; accesses are assumed perfectly pipelined and conflict-free.
pub fn theoretical_estimate(m: &MachineModel, w: &Workload) -> f64 {
    let b = w.batch_size as f64;
    let k = m.cores as f64;

    let mut order: Vec<usize> = (0..w.tables.len()).collect();
    order.sort_by(|&i, &j| {
        let (ti, tj) = (&w.tables[i], &w.tables[j]);
        tj.seq_len
            .cmp(&ti.seq_len)
            .then_with(|| {
                table_bytes(ti).unwrap_or(u64::MAX).cmp(&table_bytes(tj).unwrap_or(u64::MAX))
            })
            .then_with(|| ti.id.cmp(&tj.id))
    });

    let mut l1_free = m.l1_bytes;
    let mut l1_bytes_per_core = 0.0; // bytes read by one core from its scratchpad
    let mut gm_bytes = 0.0; // aggregate bytes moved from global memory
    for i in order {
        let t = &w.tables[i];
        let bytes = table_bytes(t).unwrap_or(u64::MAX);
        let lookups_total = b * t.seq_len as f64;
        if m.l1_persistent && bytes <= l1_free {
            l1_free -= bytes;
            l1_bytes_per_core += (lookups_total / k) * t.row_bytes() as f64;
        } else {
            let burst = t.row_bytes().max(m.row_access_bytes_min) as f64;
            gm_bytes += lookups_total * burst;
        }
    }

    let batch_time = (gm_bytes / m.gm_bandwidth).max(l1_bytes_per_core / m.l1_bandwidth);
    if batch_time <= 0.0 {
        return f64::INFINITY;
    }
    b / batch_time
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{DistributionSpec, TableSpec};

    fn gm_only_machine(gm_bandwidth: f64) -> MachineModel {
        MachineModel {
            name: "test".into(),
            cores: 4,
            l1_bytes: 1024,
            ub_bytes: 1024,
            gm_bandwidth,
            gm_access_latency: 0.0,
            l1_bandwidth: 1e9,
            row_access_bytes_min: 1,
            conflict_penalty: 0.0,
            l1_persistent: false,
        }
    }

    fn one_table_workload(rows: u64, embed_dim: usize, elem_bytes: u32, batch: usize) -> Workload {
        Workload {
            name: "w".into(),
            tables: vec![TableSpec {
                id: "t0".into(),
                rows,
                embed_dim,
                elem_bytes,
                seq_len: 1,
                distribution: DistributionSpec::Uniform,
            }],
            batch_size: batch,
        }
    }

    #[test]
    fn presets_validate() {
        let presets = builtin_machines();
        assert!(presets.len() >= 2);
        for m in &presets {
            m.validate().unwrap();
        }
        let ascend = presets.iter().find(|m| m.name == "ascend910-like").unwrap();
        assert_eq!(ascend.cores, 32);
        assert_eq!(ascend.l1_bytes, 1_048_576);
        assert_eq!(ascend.ub_bytes, 262_144);
        assert!(ascend.l1_persistent);
        let gpu = presets.iter().find(|m| m.name == "gpu-like").unwrap();
        assert!(!gpu.l1_persistent);
    }

    #[test]
    fn unknown_preset_lists_available() {
        let err = machine_by_name_or_path("nope").unwrap_err().to_string();
        assert!(err.contains("ascend910-like") && err.contains("gpu-like"), "{err}");
    }

    #[test]
    fn gm_bound_hand_arithmetic() {
        // 32-byte rows, B = 8192, s = 1, 32 GB/s: batch time 8.192 us.
        let m = gm_only_machine(32e9);
        let w = one_table_workload(1 << 20, 16, 2, 8192);
        let tput = theoretical_estimate(&m, &w);
        assert!((tput - 1e9).abs() / 1e9 < 1e-12, "{tput}");
    }

    #[test]
    fn l1_resident_with_equal_bandwidth_matches_gm() {
        // One core, L1 bandwidth equal to GM bandwidth, burst granularity
        // equal to the row: identical batch time either way.
        let mut on = gm_only_machine(32e9);
        on.cores = 1;
        on.l1_bandwidth = 32e9;
        on.l1_persistent = true;
        on.l1_bytes = 1 << 30;
        let mut off = on.clone();
        off.l1_persistent = false;
        let w = one_table_workload(1024, 16, 2, 8192);
        let a = theoretical_estimate(&on, &w);
        let b = theoretical_estimate(&off, &w);
        assert!((a - b).abs() / b < 1e-12);
    }

    #[test]
    fn throughput_scales_with_gm_bandwidth() {
        let w = one_table_workload(1 << 20, 16, 2, 8192);
        let base = theoretical_estimate(&gm_only_machine(32e9), &w);
        let fast = theoretical_estimate(&gm_only_machine(1.25 * 32e9), &w);
        assert!((fast / base - 1.25).abs() < 1e-12);
    }

    #[test]
    fn batch_size_does_not_change_throughput() {
        let m = gm_only_machine(32e9);
        let a = theoretical_estimate(&m, &one_table_workload(1 << 20, 16, 2, 4096));
        let b = theoretical_estimate(&m, &one_table_workload(1 << 20, 16, 2, 8192));
        assert!((a - b).abs() / b < 1e-12);
    }

    #[test]
    fn l1_persistence_helps_resident_workloads() {
        // Aggregate scratchpad bandwidth (K cores) outruns GM here, so
        // routing a resident workload through L1 must not lose.
        let mut on = gm_only_machine(32e9);
        on.l1_persistent = true;
        on.l1_bytes = 1 << 26;
        on.l1_bandwidth = 32e9; // x4 cores = 128 GB/s aggregate
        let mut off = on.clone();
        off.l1_persistent = false;
        let w = one_table_workload(1024, 16, 2, 8192);
        assert!(theoretical_estimate(&on, &w) >= theoretical_estimate(&off, &w));
    }

    #[test]
    fn burst_rounding_never_helps() {
        let mut m = gm_only_machine(32e9);
        let w = one_table_workload(1 << 20, 4, 2, 1024); // 8-byte rows
        let fine = theoretical_estimate(&m, &w);
        m.row_access_bytes_min = 64;
        let coarse = theoretical_estimate(&m, &w);
        assert!(coarse <= fine);
        assert!((fine / coarse - 8.0).abs() < 1e-12); // 64 / 8
    }
}
