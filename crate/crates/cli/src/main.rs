//! `embedshard`: plan and simulate embedding-lookup execution.
//!
//! Exit codes: 0 success, 1 simulation/validation failure, 2 usage or
//! configuration error. `EMBEDSHARD_THREADS` caps worker threads.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use embedshard::costmodel::{fit, measure_for_fit, CostModel, StrategyKind};
use embedshard::engine::{
    execute_plan, reference_execute, simulate, EmbeddingStore, TimingConfig,
};
use embedshard::machine::{builtin_machines, machine_by_name_or_path, theoretical_estimate, MachineModel};
use embedshard::partitioner::{plan_asymmetric, plan_symmetric, validate_plan, Plan};
use embedshard::sweep::{run_sweep, SweepConfig, SweepDistribution};
use embedshard::workload::{generate_queries, load_workload, DistributionSpec, TableSpec, Workload};

#[derive(Parser)]
#[command(name = "embedshard", version, about = "Embedding-lookup data-flow planner and simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the linear P99 cost model against the timing simulator.
    FitCostmodel(FitCostmodelArgs),
    /// Produce an execution plan for a workload on a machine.
    Plan(PlanArgs),
    /// Simulate a saved plan and report latency statistics.
    Simulate(SimulateArgs),
    /// Sweep batch sizes, distributions, and both plan modes into a CSV.
    Sweep(SweepArgs),
    /// Conflict-free theoretical throughput estimates per machine.
    Estimate(EstimateArgs),
    /// Check a plan file against a workload and machine.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct FitCostmodelArgs {
    /// Machine preset name or JSON path.
    #[arg(long)]
    machine: String,
    /// Workload whose embedding dims and element widths to cover.
    #[arg(long)]
    workload: Option<PathBuf>,
    /// Embedding dims to fit when no workload is given.
    #[arg(long, value_delimiter = ',', default_value = "16")]
    embed_dims: Vec<usize>,
    /// Element width in bytes for synthetic fitting tables.
    #[arg(long, default_value_t = 2)]
    elem_bytes: u32,
    /// Timing config JSON; derived from the machine when omitted.
    #[arg(long)]
    timing: Option<PathBuf>,
    /// Row counts of the synthetic fitting tables.
    #[arg(long, value_delimiter = ',', default_value = "1024,4096,16384")]
    rows_grid: Vec<u64>,
    /// Batch sizes of the fitting grid.
    #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096,8192")]
    batch_grid: Vec<usize>,
    /// Simulated batches per grid point.
    #[arg(long, default_value_t = 100)]
    batches: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output cost-model JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    workload: PathBuf,
    /// Machine preset name or JSON path.
    #[arg(long)]
    machine: String,
    /// Cost-model JSON produced by fit-costmodel.
    #[arg(long)]
    costmodel: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Symmetric)]
    mode: Mode,
    /// Asymmetric fallback threshold; must be > 1.
    #[arg(long, default_value_t = 1.25)]
    lif_threshold: f64,
    /// Output plan JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    machine: String,
    #[arg(long)]
    timing: Option<PathBuf>,
    /// Batches to simulate (>= 100 for a meaningful P99).
    #[arg(long, default_value_t = 200)]
    batches: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also execute one batch functionally and check it against the
    /// single-core oracle on a synthetic integer store.
    #[arg(long)]
    verify: bool,
    /// Write the full result as JSON (stdout summary otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append-free CSV row output (overwritten atomically).
    #[arg(long)]
    csv_out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    machine: String,
    #[arg(long)]
    costmodel: PathBuf,
    #[arg(long)]
    timing: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096,8192")]
    batch_sizes: Vec<usize>,
    /// Distribution overrides: uniform, fixed, workload.
    #[arg(long, value_delimiter = ',', default_value = "uniform,fixed,workload")]
    distributions: Vec<String>,
    /// Simulated batches per sweep point.
    #[arg(long, default_value_t = 100)]
    batches: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.25)]
    lif_threshold: f64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    workload: PathBuf,
    /// Machines to compare (preset names or JSON paths).
    #[arg(long, value_delimiter = ',', default_value = "ascend910-like,gpu-like")]
    machines: Vec<String>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    machine: String,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Symmetric,
    Asymmetric,
}

/// Failures that should exit 2 (usage/config) vs 1 (run/validation).
enum CliError {
    Usage(anyhow::Error),
    Run(anyhow::Error),
}

fn usage(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Usage(e.into())
}

fn run_failure(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Run(e.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(threads) = std::env::var("EMBEDSHARD_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::FitCostmodel(args) => cmd_fit_costmodel(args),
        Command::Plan(args) => cmd_plan(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Validate(args) => cmd_validate(args),
    }
}

// ---------------------------------------------------------------------------
// Shared loading helpers (all failures here are configuration errors)
// ---------------------------------------------------------------------------

fn load_machine_arg(spec: &str) -> Result<MachineModel, CliError> {
    machine_by_name_or_path(spec).map_err(usage)
}

fn load_workload_arg(path: &Path) -> Result<Workload, CliError> {
    load_workload(path).map_err(usage)
}

fn load_timing_arg(path: &Option<PathBuf>, m: &MachineModel) -> Result<TimingConfig, CliError> {
    match path {
        Some(p) => TimingConfig::load(p).map_err(usage),
        None => Ok(TimingConfig::from_machine(m)),
    }
}

fn check_lif_threshold(value: f64) -> Result<(), CliError> {
    let ok = value > 1.0;
    if ok {
        Ok(())
    } else {
        Err(usage(anyhow!("--lif-threshold must be > 1 (got {value})")))
    }
}

fn load_costmodel_arg(path: &Path, m: &MachineModel, w: &Workload) -> Result<CostModel, CliError> {
    let cm = CostModel::load(path).map_err(usage)?;
    for t in &w.tables {
        if !cm.covers(&m.name, t.embed_dim) {
            return Err(usage(anyhow!(
                "cost model {} lacks coefficients for machine `{}`, embed_dim {} (table `{}`); run fit-costmodel first",
                path.display(),
                m.name,
                t.embed_dim,
                t.id
            )));
        }
    }
    Ok(cm)
}

/// Overwrite `path` atomically: write a sibling temp file, then rename.
fn write_atomic(path: &Path, contents: &str) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default(),
        std::process::id()
    ));
    std::fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_fit_costmodel(args: FitCostmodelArgs) -> Result<(), CliError> {
    let machine = load_machine_arg(&args.machine)?;
    let timing = load_timing_arg(&args.timing, &machine)?;

    // (embed_dim, elem_bytes) pairs to cover.
    let mut dims: Vec<(usize, u32)> = match &args.workload {
        Some(path) => {
            let w = load_workload_arg(path)?;
            let mut dims: Vec<(usize, u32)> =
                w.tables.iter().map(|t| (t.embed_dim, t.elem_bytes)).collect();
            dims.sort_unstable();
            dims.dedup();
            dims
        }
        None => args.embed_dims.iter().map(|&d| (d, args.elem_bytes)).collect(),
    };
    dims.sort_unstable();
    dims.dedup_by_key(|(d, _)| *d);

    if args.rows_grid.len() < 2 || args.batch_grid.len() < 2 {
        return Err(usage(anyhow!("rows_grid and batch_grid each need at least 2 values")));
    }

    let grid: Vec<(usize, usize)> =
        args.batch_grid.iter().map(|&b| (b, machine.cores)).collect();
    let mut cm = CostModel::new();
    for &(dim, elem_bytes) in &dims {
        for strategy in StrategyKind::ALL {
            let mut measurements = Vec::new();
            for &rows in &args.rows_grid {
                let table = TableSpec {
                    id: format!("fit-d{dim}-r{rows}"),
                    rows,
                    embed_dim: dim,
                    elem_bytes,
                    seq_len: 1,
                    distribution: DistributionSpec::Uniform,
                };
                measurements.extend(
                    measure_for_fit(
                        &machine,
                        &table,
                        strategy,
                        &grid,
                        Some(&timing),
                        args.batches,
                        args.seed,
                    )
                    .map_err(run_failure)?,
                );
            }
            let beta = fit(&measurements, strategy)
                .with_context(|| format!("fitting {strategy} for embed_dim {dim}"))
                .map_err(usage)?;
            println!(
                "{:>6}  dim {:>3}  beta0 {:.3e}  beta1 {:.3e}  beta2 {:.3e}",
                strategy.to_string(),
                dim,
                beta.beta0,
                beta.beta1,
                beta.beta2
            );
            cm.insert(&machine.name, strategy, dim, beta);
        }
    }
    write_atomic(&args.out, &cm.to_json_string()).map_err(CliError::Run)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_plan(args: PlanArgs) -> Result<(), CliError> {
    let machine = load_machine_arg(&args.machine)?;
    let workload = load_workload_arg(&args.workload)?;
    let cm = load_costmodel_arg(&args.costmodel, &machine, &workload)?;

    let plan = match args.mode {
        Mode::Symmetric => plan_symmetric(&workload, &machine, &cm).map_err(usage)?,
        Mode::Asymmetric => {
            check_lif_threshold(args.lif_threshold)?;
            plan_asymmetric(&workload, &machine, &cm, args.lif_threshold).map_err(usage)?
        }
    };
    let violations = validate_plan(&plan, &workload, &machine);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("violation: {v}");
        }
        return Err(run_failure(anyhow!("planner produced an invalid plan")));
    }

    let json = serde_json::to_string_pretty(&plan).expect("plan serializes");
    write_atomic(&args.out, &json).map_err(CliError::Run)?;

    println!("plan: {} assignments on {} cores ({})", plan.assignments.len(), plan.cores(), plan.kind);
    for (core, t) in plan.predicted_core_times.iter().enumerate() {
        println!("  core {core:>2}: predicted {t:.3e} s");
    }
    println!("predicted LIF: {:.4}", plan.predicted_lif);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let machine = load_machine_arg(&args.machine)?;
    let workload = load_workload_arg(&args.workload)?;
    let timing = load_timing_arg(&args.timing, &machine)?;
    let plan = Plan::load(&args.plan).map_err(usage)?;

    let violations = validate_plan(&plan, &workload, &machine);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("violation: {v}");
        }
        return Err(run_failure(anyhow!("plan does not validate against workload and machine")));
    }

    if args.verify {
        let store = EmbeddingStore::integer_fixture(&workload, args.seed, 7);
        let queries = generate_queries(&workload, args.seed);
        let reference = reference_execute(&workload, &store, &queries).map_err(run_failure)?;
        let exec =
            execute_plan(&plan, &workload, &store, &queries, &timing).map_err(run_failure)?;
        if exec.output.tables != reference.tables {
            return Err(run_failure(anyhow!("functional output diverges from the oracle")));
        }
        println!("verify: plan output matches the single-core oracle");
    }

    let sim = simulate(&plan, &workload, &timing, args.batches, args.seed).map_err(run_failure)?;
    println!("batches:        {}", args.batches);
    println!("p99 latency:    {:.6e} s/batch", sim.p99);
    println!("avg throughput: {:.6e} queries/s", sim.avg_throughput);
    println!("observed LIF:   {:.4}", sim.lif_observed);
    println!("setup time:     {:.6e} s", sim.setup_s);

    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&sim).expect("sim result serializes");
        write_atomic(out, &json).map_err(CliError::Run)?;
        println!("wrote {}", out.display());
    }
    if let Some(csv) = &args.csv_out {
        let row = format!(
            "batch,mode,distribution,p99_s,throughput_qps,lif,setup_s\n{},{},workload,{},{},{},{}\n",
            workload.batch_size, plan.kind, sim.p99, sim.avg_throughput, sim.lif_observed, sim.setup_s
        );
        write_atomic(csv, &row).map_err(CliError::Run)?;
        println!("wrote {}", csv.display());
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let machine = load_machine_arg(&args.machine)?;
    let workload = load_workload_arg(&args.workload)?;
    let cm = load_costmodel_arg(&args.costmodel, &machine, &workload)?;
    let timing = load_timing_arg(&args.timing, &machine)?;
    check_lif_threshold(args.lif_threshold)?;
    let distributions: Vec<SweepDistribution> = args
        .distributions
        .iter()
        .map(|s| s.parse().map_err(|e: String| usage(anyhow!(e))))
        .collect::<Result<_, _>>()?;

    let cfg = SweepConfig {
        batch_sizes: args.batch_sizes.clone(),
        distributions,
        batches_per_point: args.batches,
        seed: args.seed,
        lif_threshold: args.lif_threshold,
    };
    let result = run_sweep(&workload, &machine, &cm, &timing, &cfg).map_err(run_failure)?;
    write_atomic(&args.out, &result.to_csv()).map_err(CliError::Run)?;

    println!("{:>8} {:>10} {:>12} {:>12} {:>14} {:>6} {:>7}", "batch", "mode", "distribution", "p99_s", "tput_qps", "lif", "pareto");
    for (p, &flag) in result.points.iter().zip(&result.pareto) {
        println!(
            "{:>8} {:>10} {:>12} {:>12.4e} {:>14.4e} {:>6.3} {:>7}",
            p.batch,
            p.mode.to_string(),
            p.distribution,
            p.p99_s,
            p.throughput_qps,
            p.lif,
            if flag { "*" } else { "" }
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> Result<(), CliError> {
    let workload = load_workload_arg(&args.workload)?;
    if args.machines.is_empty() {
        return Err(usage(anyhow!(
            "at least one machine required; presets: {}",
            builtin_machines().iter().map(|m| m.name.clone()).collect::<Vec<_>>().join(", ")
        )));
    }
    let machines: Vec<MachineModel> = args
        .machines
        .iter()
        .map(|s| load_machine_arg(s))
        .collect::<Result<_, _>>()?;

    let estimates: Vec<f64> = machines.iter().map(|m| theoretical_estimate(m, &workload)).collect();
    println!("{:>20} {:>16}", "machine", "est. queries/s");
    for (m, e) in machines.iter().zip(&estimates) {
        println!("{:>20} {:>16.4e}", m.name, e);
    }
    if machines.len() > 1 {
        println!("pairwise ratios (row / column):");
        print!("{:>20}", "");
        for m in &machines {
            print!(" {:>14}", m.name);
        }
        println!();
        for (i, mi) in machines.iter().enumerate() {
            print!("{:>20}", mi.name);
            for j in 0..machines.len() {
                print!(" {:>14.3}", estimates[i] / estimates[j]);
            }
            println!();
        }
    }
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<(), CliError> {
    let machine = load_machine_arg(&args.machine)?;
    let workload = load_workload_arg(&args.workload)?;
    let plan = Plan::load(&args.plan).map_err(usage)?;
    let violations = validate_plan(&plan, &workload, &machine);
    if violations.is_empty() {
        println!(
            "plan is valid: {} assignments, {} cores, {}",
            plan.assignments.len(),
            plan.cores(),
            plan.kind
        );
        Ok(())
    } else {
        for v in &violations {
            eprintln!("violation: {v}");
        }
        Err(run_failure(anyhow!("{} violation(s)", violations.len())))
    }
}
