//! Planning and simulation of embedding-table lookups on parametric
//! multicore accelerators.
//!
//! The crate models the sparse half of a recommender model: a set of
//! embedding tables, a batch of index queries per table, and a machine
//! with per-core scratchpads in front of global memory. It provides
//!
//! - four per-table data-flow strategies (`GM`, `GM-UB`, `L1`, `L1-UB`)
//!   with a per-strategy timing model,
//! - a linear P99 cost estimator fitted by ordinary least squares,
//! - greedy symmetric and asymmetric table-sharding planners driven by
//!   that estimator,
//! - a functional executor that runs a plan over real index batches
//!   (gather + sum pooling, with chunk offset/clip/mask and inter-core
//!   accumulation) and checks it against a single-core oracle,
//! - batch-latency simulation with P99/throughput/LIF reporting and
//!   batch-size sweeps with Pareto-front extraction.
//!
//! Everything is deterministic: query generation uses a fixed
//! counter-based generator, simulated cores merge their partial sums in
//! core order, and sweeps produce identical bytes regardless of thread
//! count.

pub mod costmodel;
pub mod engine;
pub mod machine;
pub mod partitioner;
pub mod rng;
pub mod sweep;
pub mod workload;

pub use costmodel::{Beta, CostModel, Measurement, StrategyKind};
pub use engine::{
    execute_plan, execute_plan_with, percentile, reference_execute, simulate, EmbeddingStore,
    ExecOptions, Execution, PooledOutput, SimResult, TableMatrix, TimingConfig,
};
pub use machine::{builtin_machines, theoretical_estimate, MachineModel};
pub use partitioner::{
    chunk_table, lif, plan_asymmetric, plan_symmetric, validate_plan, Assignment, BatchSpan,
    Chunk, Plan, PlanKind,
};
pub use sweep::{run_sweep, SweepConfig, SweepDistribution, SweepPoint, SweepResult};
pub use workload::{
    generate_queries, load_workload, table_bytes, zipf_weights, DistributionSpec, QueryBatch,
    TableSpec, Workload,
};
