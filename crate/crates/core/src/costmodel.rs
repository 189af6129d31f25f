//! Linear P99 cost estimation and its least-squares fitting.
//!
//! Each (machine, strategy, embedding dimension) triple gets an affine
//! model of one core's P99 time: `beta0 + beta1 * lookups` for the
//! row-loop strategies, plus `beta2 * rows` for the UB variants, whose
//! per-batch cost includes staging the table through shared memory.
//! Coefficients are fitted by ordinary least squares on collected
//! measurements; here those measurements come from the timing simulator
//! (see [`measure_for_fit`]), standing in for hardware profiling.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{simulate, EngineError, TimingConfig};
use crate::machine::MachineModel;
use crate::partitioner::{split_batch, Assignment, Chunk, Plan, PlanKind};
use crate::rng;
use crate::workload::{TableSpec, Workload};

/// The four per-table data-flow strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    /// Row-at-a-time reads from global memory, double buffered.
    Gm,
    /// Table staged through shared memory per batch, vectorized lookups.
    GmUb,
    /// Row-at-a-time reads from the persistent per-core L1 buffer.
    L1,
    /// Table persistent in L1, staged to shared memory, vectorized lookups.
    L1Ub,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] =
        [StrategyKind::Gm, StrategyKind::GmUb, StrategyKind::L1, StrategyKind::L1Ub];

    /// Vectorized (shared-memory) variant?
    pub fn is_ub(self) -> bool {
        matches!(self, StrategyKind::GmUb | StrategyKind::L1Ub)
    }

    /// Requires the chunk to be resident in the per-core L1 buffer?
    pub fn is_l1(self) -> bool {
        matches!(self, StrategyKind::L1 | StrategyKind::L1Ub)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StrategyKind::Gm => "GM",
            StrategyKind::GmUb => "GM-UB",
            StrategyKind::L1 => "L1",
            StrategyKind::L1Ub => "L1-UB",
        };
        f.write_str(s)
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gm" => Ok(StrategyKind::Gm),
            "gm-ub" | "gm_ub" => Ok(StrategyKind::GmUb),
            "l1" => Ok(StrategyKind::L1),
            "l1-ub" | "l1_ub" => Ok(StrategyKind::L1Ub),
            _ => Err(format!("unknown strategy `{s}` (expected gm, gm-ub, l1, l1-ub)")),
        }
    }
}

/// Fitted coefficients, all in seconds (per lookup / per row for the
/// slope terms). `beta2` is stored for every strategy but ignored by the
/// non-UB ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beta {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
}

/// One observed data point for fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub strategy: StrategyKind,
    /// Lookups charged to one core (`ceil(B / K) * seq_len`).
    pub lookups: u64,
    /// Table rows (drives the staging term of UB variants).
    pub rows: u64,
    pub observed_p99: f64,
}

#[derive(Debug, Error)]
pub enum CostError {
    #[error("no cost coefficients for machine `{machine}`, strategy {strategy}, embed_dim {embed_dim}")]
    MissingCoefficients { machine: String, strategy: StrategyKind, embed_dim: usize },
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

#[derive(Debug, Error)]
pub enum FitError {
    #[error("design is rank-deficient: {got} measurement(s) for {needed} coefficients")]
    Underdetermined { needed: usize, got: usize },
    #[error("design is rank-deficient: {0} is not identifiable from the measurements")]
    NotIdentifiable(&'static str),
}

/// Cost coefficients keyed by (machine, strategy, embed_dim).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostModel {
    entries: BTreeMap<(String, StrategyKind, usize), Beta>,
}

impl CostModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, machine: &str, strategy: StrategyKind, embed_dim: usize, beta: Beta) {
        self.entries.insert((machine.to_string(), strategy, embed_dim), beta);
    }

    pub fn get(&self, machine: &str, strategy: StrategyKind, embed_dim: usize) -> Option<&Beta> {
        self.entries.get(&(machine.to_string(), strategy, embed_dim))
    }

    /// All four strategies present for this (machine, embed_dim)?
    pub fn covers(&self, machine: &str, embed_dim: usize) -> bool {
        StrategyKind::ALL.iter().all(|&s| self.get(machine, s, embed_dim).is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Estimated P99 seconds for one core running `lookups` lookups of a
    /// table with `rows` rows under `strategy`.
    pub fn estimate_table_cost(
        &self,
        machine: &str,
        strategy: StrategyKind,
        embed_dim: usize,
        lookups: u64,
        rows: u64,
    ) -> Result<f64, CostError> {
        let beta = self.get(machine, strategy, embed_dim).ok_or_else(|| {
            CostError::MissingCoefficients {
                machine: machine.to_string(),
                strategy,
                embed_dim,
            }
        })?;
        let mut cost = beta.beta0 + beta.beta1 * lookups as f64;
        if strategy.is_ub() {
            cost += beta.beta2 * rows as f64;
        }
        Ok(cost)
    }

    // JSON layout: machine -> strategy -> embed_dim -> Beta.
    pub fn to_json_string(&self) -> String {
        let mut doc: BTreeMap<String, BTreeMap<String, BTreeMap<String, Beta>>> = BTreeMap::new();
        for ((machine, strategy, dim), beta) in &self.entries {
            doc.entry(machine.clone())
                .or_default()
                .entry(strategy_key(*strategy))
                .or_default()
                .insert(dim.to_string(), *beta);
        }
        serde_json::to_string_pretty(&doc).expect("cost model serialization cannot fail")
    }

    pub fn from_json_str(text: &str) -> Result<Self, serde_json::Error> {
        let doc: BTreeMap<String, BTreeMap<String, BTreeMap<String, Beta>>> =
            serde_json::from_str(text)?;
        let mut model = CostModel::new();
        for (machine, by_strategy) in doc {
            for (skey, by_dim) in by_strategy {
                let strategy = StrategyKind::from_str(&skey).map_err(|_| {
                    serde::de::Error::custom(format!("unknown strategy key `{skey}`"))
                })?;
                for (dkey, beta) in by_dim {
                    let dim: usize = dkey.parse().map_err(|_| {
                        serde::de::Error::custom(format!("bad embed_dim key `{dkey}`"))
                    })?;
                    model.insert(&machine, strategy, dim, beta);
                }
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CostError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|source| CostError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CostError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CostError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text).map_err(|source| CostError::Parse {
            path: path.display().to_string(),
            source,
        })
    }
}

fn strategy_key(s: StrategyKind) -> String {
    match s {
        StrategyKind::Gm => "gm",
        StrategyKind::GmUb => "gm-ub",
        StrategyKind::L1 => "l1",
        StrategyKind::L1Ub => "l1-ub",
    }
    .to_string()
}

// ---------------------------------------------------------------------------
// Ordinary least squares
// ---------------------------------------------------------------------------

/// Fit the affine model for `strategy` from the matching measurements.
///
/// Non-UB strategies fit `(beta0, beta1)` with `beta2` fixed at 0; UB
/// strategies fit all three. The slope columns are mean-centered before
/// solving, which both conditions the system and turns a constant column
/// into an exact zero: a constant `lookups` column is tolerated (its
/// slope is reported as 0, the intercept absorbs it), but the strategy's
/// defining slope must be identifiable (`lookups` for non-UB, `rows` for
/// UB). Negative fitted coefficients are clamped to 0 with a warning,
/// since they model physical time.
pub fn fit(measurements: &[Measurement], strategy: StrategyKind) -> Result<Beta, FitError> {
    let pts: Vec<&Measurement> =
        measurements.iter().filter(|m| m.strategy == strategy).collect();
    let needed = if strategy.is_ub() { 3 } else { 2 };
    if pts.len() < needed {
        return Err(FitError::Underdetermined { needed, got: pts.len() });
    }

    let n = pts.len() as f64;
    let mean = |f: &dyn Fn(&Measurement) -> f64| pts.iter().map(|m| f(m)).sum::<f64>() / n;
    let lbar = mean(&|m| m.lookups as f64);
    let rbar = mean(&|m| m.rows as f64);
    let ybar = mean(&|m| m.observed_p99);

    let mut s_ll = 0.0;
    let mut s_rr = 0.0;
    let mut s_lr = 0.0;
    let mut s_ly = 0.0;
    let mut s_ry = 0.0;
    for m in &pts {
        let dl = m.lookups as f64 - lbar;
        let dr = m.rows as f64 - rbar;
        let dy = m.observed_p99 - ybar;
        s_ll += dl * dl;
        s_rr += dr * dr;
        s_lr += dl * dr;
        s_ly += dl * dy;
        s_ry += dr * dy;
    }

    let (beta1, beta2) = if strategy.is_ub() {
        if s_rr == 0.0 {
            return Err(FitError::NotIdentifiable("beta2 (rows slope)"));
        }
        if s_ll == 0.0 {
            // Constant lookups: beta1 unidentifiable, pin it to zero.
            (0.0, s_ry / s_rr)
        } else {
            let det = s_ll * s_rr - s_lr * s_lr;
            if det.abs() <= 1e-12 * s_ll * s_rr {
                return Err(FitError::NotIdentifiable("beta2 (rows collinear with lookups)"));
            }
            ((s_rr * s_ly - s_lr * s_ry) / det, (s_ll * s_ry - s_lr * s_ly) / det)
        }
    } else {
        if s_ll == 0.0 {
            return Err(FitError::NotIdentifiable("beta1 (lookups slope)"));
        }
        (s_ly / s_ll, 0.0)
    };

    let beta0 = ybar - beta1 * lbar - beta2 * rbar;
    let mut beta = Beta { beta0, beta1, beta2 };
    for (name, value) in
        [("beta0", &mut beta.beta0), ("beta1", &mut beta.beta1), ("beta2", &mut beta.beta2)]
    {
        if *value < 0.0 {
            log::warn!("fitted {name} for {strategy} is negative ({value:.3e}); clamping to 0");
            *value = 0.0;
        }
    }
    Ok(beta)
}

// ---------------------------------------------------------------------------
// Measurement collection against the timing simulator
// ---------------------------------------------------------------------------

/// Collect fitting measurements by running the timing simulator on a
/// single-table symmetric plan with the given strategy, once per `(B, K)`
/// grid point. Records the P99 of `batches` simulated batch latencies
/// (at least 100 for a meaningful tail). When `timing` is `None` it is
/// derived from the machine. Capacity feasibility is not checked here;
/// the timing model does not depend on occupancy, so every strategy can
/// be sampled on every table.
pub fn measure_for_fit(
    machine: &MachineModel,
    table: &TableSpec,
    strategy: StrategyKind,
    grid: &[(usize, usize)],
    timing: Option<&TimingConfig>,
    batches: usize,
    seed: u64,
) -> Result<Vec<Measurement>, EngineError> {
    let derived;
    let timing = match timing {
        Some(t) => t,
        None => {
            derived = TimingConfig::from_machine(machine);
            &derived
        }
    };

    let mut out = Vec::with_capacity(grid.len());
    for (point, &(batch, cores)) in grid.iter().enumerate() {
        let w = Workload {
            name: format!("fit-{}", table.id),
            tables: vec![table.clone()],
            batch_size: batch,
        };
        let assignments: Vec<Assignment> = split_batch(batch, cores)
            .into_iter()
            .enumerate()
            .filter(|(_, span)| !span.is_empty())
            .map(|(core, span)| Assignment {
                chunk: Chunk {
                    table_id: table.id.clone(),
                    row_offset: 0,
                    row_count: table.rows,
                    replication: 1,
                },
                strategy,
                core,
                batch_span: span,
            })
            .collect();
        let plan = Plan {
            kind: PlanKind::Symmetric,
            assignments,
            predicted_core_times: vec![0.0; cores],
            predicted_lif: 1.0,
        };
        let sim = simulate(&plan, &w, timing, batches, rng::derive_key(seed, point as u64))?;
        out.push(Measurement {
            strategy,
            lookups: (batch.div_ceil(cores) * table.seq_len) as u64,
            rows: table.rows,
            observed_p99: sim.p99,
        });
    }
    Ok(out)
}
