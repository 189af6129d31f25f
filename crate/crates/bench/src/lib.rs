//! Shared fixtures for the criterion benchmarks.

use embedshard::costmodel::{Beta, CostModel, StrategyKind};
use embedshard::machine::MachineModel;
use embedshard::workload::{DistributionSpec, TableSpec, Workload};

/// A workload of `n` tables with log-spaced row counts, embedding dim 16
/// and fp16 rows, the shape the planner sees in practice.
pub fn synthetic_workload(n: usize, batch_size: usize) -> Workload {
    let tables = (0..n)
        .map(|i| TableSpec {
            id: format!("t{i:03}"),
            rows: 64 << (i % 10),
            embed_dim: 16,
            elem_bytes: 2,
            seq_len: 1 + (i % 4),
            distribution: DistributionSpec::Uniform,
        })
        .collect();
    Workload { name: format!("bench-{n}"), tables, batch_size }
}

pub fn bench_machine(cores: usize) -> MachineModel {
    MachineModel {
        name: "bench".into(),
        cores,
        l1_bytes: 1 << 20,
        ub_bytes: 256 << 10,
        gm_bandwidth: 1.2e12,
        gm_access_latency: 1e-8,
        l1_bandwidth: 1e11,
        row_access_bytes_min: 64,
        conflict_penalty: 1.0,
        l1_persistent: true,
    }
}

pub fn bench_cost_model(machine: &str) -> CostModel {
    let mut cm = CostModel::new();
    cm.insert(machine, StrategyKind::Gm, 16, Beta { beta0: 1e-6, beta1: 1e-8, beta2: 0.0 });
    cm.insert(machine, StrategyKind::GmUb, 16, Beta { beta0: 1e-6, beta1: 1e-10, beta2: 3e-11 });
    cm.insert(machine, StrategyKind::L1, 16, Beta { beta0: 1e-6, beta1: 3e-10, beta2: 0.0 });
    cm.insert(machine, StrategyKind::L1Ub, 16, Beta { beta0: 1e-6, beta1: 1e-10, beta2: 0.0 });
    cm
}
