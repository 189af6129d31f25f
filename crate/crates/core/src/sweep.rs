//! Batch-size sweeps: plan and simulate both modes over a grid of batch
//! sizes and query distributions, then mark the Pareto-optimal points in
//! the (P99 latency, average throughput) plane per distribution.
//!
//! Sweep points may run on parallel threads; rows are always produced in
//! the deterministic (batch, distribution, mode) order, so the CSV bytes
//! are identical regardless of thread count.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::costmodel::CostModel;
use crate::engine::{simulate, EngineError, TimingConfig};
use crate::machine::MachineModel;
use crate::partitioner::{plan_asymmetric, plan_symmetric, Plan, PlanError, PlanKind};
use crate::rng;
use crate::workload::{DistributionSpec, Workload};

/// Query-distribution override applied to every table of the workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepDistribution {
    /// All tables uniform random.
    Uniform,
    /// All tables fixed to index 0.
    Fixed,
    /// Keep the workload's own per-table distributions.
    Workload,
}

impl SweepDistribution {
    pub fn name(self) -> &'static str {
        match self {
            SweepDistribution::Uniform => "uniform",
            SweepDistribution::Fixed => "fixed",
            SweepDistribution::Workload => "workload",
        }
    }

    fn apply(self, w: &Workload) -> Workload {
        match self {
            SweepDistribution::Workload => w.clone(),
            SweepDistribution::Uniform => {
                let mut w = w.clone();
                for t in &mut w.tables {
                    t.distribution = DistributionSpec::Uniform;
                }
                w
            }
            SweepDistribution::Fixed => {
                let mut w = w.clone();
                for t in &mut w.tables {
                    t.distribution = DistributionSpec::Fixed(0);
                }
                w
            }
        }
    }
}

impl fmt::Display for SweepDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepDistribution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(SweepDistribution::Uniform),
            "fixed" => Ok(SweepDistribution::Fixed),
            "workload" => Ok(SweepDistribution::Workload),
            _ => Err(format!("unknown distribution `{s}` (expected uniform, fixed, workload)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub batch_sizes: Vec<usize>,
    pub distributions: Vec<SweepDistribution>,
    pub batches_per_point: usize,
    pub seed: u64,
    pub lif_threshold: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            batch_sizes: vec![1024, 2048, 4096, 8192],
            distributions: vec![
                SweepDistribution::Uniform,
                SweepDistribution::Fixed,
                SweepDistribution::Workload,
            ],
            batches_per_point: 100,
            seed: 0,
            lif_threshold: 1.25,
        }
    }
}

/// One simulated (batch size, distribution, mode) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub batch: usize,
    pub mode: PlanKind,
    pub distribution: String,
    pub p99_s: f64,
    pub throughput_qps: f64,
    pub lif: f64,
    pub setup_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Per point: not dominated in (lower p99, higher throughput) within
    /// its distribution group, both modes and all batch sizes together.
    pub pareto: Vec<bool>,
}

impl SweepResult {
    /// Fixed-schema CSV: `batch,mode,distribution,p99_s,throughput_qps,lif,setup_s`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("batch,mode,distribution,p99_s,throughput_qps,lif,setup_s\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                p.batch, p.mode, p.distribution, p.p99_s, p.throughput_qps, p.lif, p.setup_s
            ));
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("batch size list is empty")]
    NoBatchSizes,
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

fn plan_for_mode(
    w: &Workload,
    m: &MachineModel,
    cm: &CostModel,
    mode: PlanKind,
    lif_threshold: f64,
) -> Result<Plan, PlanError> {
    match mode {
        PlanKind::Symmetric => plan_symmetric(w, m, cm),
        PlanKind::Asymmetric => plan_asymmetric(w, m, cm, lif_threshold),
    }
}

/// Run the full grid: for every (batch size, distribution, mode) rebuild
/// the workload, plan, simulate, and collect a row.
pub fn run_sweep(
    w: &Workload,
    m: &MachineModel,
    cm: &CostModel,
    timing: &TimingConfig,
    cfg: &SweepConfig,
) -> Result<SweepResult, SweepError> {
    if cfg.batch_sizes.is_empty() {
        return Err(SweepError::NoBatchSizes);
    }

    let mut cells = Vec::new();
    for &batch in &cfg.batch_sizes {
        for &dist in &cfg.distributions {
            for mode in [PlanKind::Symmetric, PlanKind::Asymmetric] {
                cells.push((batch, dist, mode));
            }
        }
    }

    let points: Vec<SweepPoint> = cells
        .par_iter()
        .enumerate()
        .map(|(i, &(batch, dist, mode))| -> Result<SweepPoint, SweepError> {
            let wl = dist.apply(&w.with_batch_size(batch));
            let plan = plan_for_mode(&wl, m, cm, mode, cfg.lif_threshold)?;
            let sim = simulate(
                &plan,
                &wl,
                timing,
                cfg.batches_per_point,
                rng::derive_key(cfg.seed, i as u64),
            )?;
            Ok(SweepPoint {
                batch,
                mode,
                distribution: dist.name().to_string(),
                p99_s: sim.p99,
                throughput_qps: sim.avg_throughput,
                lif: sim.lif_observed,
                setup_s: sim.setup_s,
            })
        })
        .collect::<Result<_, _>>()?;

    let pareto = pareto_flags(&points);
    Ok(SweepResult { points, pareto })
}

/// Non-domination flags: a point is dominated when another point in the
/// same distribution group has no worse p99 and no worse throughput,
/// strictly better in at least one.
pub fn pareto_flags(points: &[SweepPoint]) -> Vec<bool> {
    points
        .iter()
        .enumerate()
        .map(|(i, a)| {
            !points.iter().enumerate().any(|(j, b)| {
                i != j
                    && b.distribution == a.distribution
                    && b.p99_s <= a.p99_s
                    && b.throughput_qps >= a.throughput_qps
                    && (b.p99_s < a.p99_s || b.throughput_qps > a.throughput_qps)
            })
        })
        .collect()
}
