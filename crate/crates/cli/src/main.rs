//! `disagg` — capacity planning for disaggregated LLM serving.
//!
//! Subcommands cover the whole pipeline: fit latency coefficients from a
//! profile table, generate synthetic workloads, run a placement planner,
//! and simulate a placement against a workload (optionally sweeping rates
//! or SLO scales for plot-ready CSVs).
//!
//! Exit codes: 0 ok, 1 I/O or parse failure, 2 fit failure, 3 infeasible
//! placement or capacity, 4 usage error.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use disagg_core::cluster::{Affinity, ClusterSpec, SloSpec};
use disagg_core::latency::LatencyCoefficients;
use disagg_core::model::ModelSpec;
use disagg_core::placement::{
    plan_colocated, plan_high_affinity, plan_low_affinity, Placement, PlannerOptions,
};
use disagg_core::sim::{simulate, SearchParams, TrialConfig};
use disagg_core::workload::{resolve_source, sample_workload, write_trace, WorkloadSpec};
use disagg_core::{parse_profile_csv, Error};

#[derive(Parser)]
#[command(
    name = "disagg",
    version,
    about = "Goodput-oriented capacity planner for disaggregated LLM serving"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit latency coefficients from a profiled CSV table.
    Fit(FitArgs),
    /// Sample a synthetic workload trace to JSONL.
    GenWorkload(GenArgs),
    /// Search for the goodput-optimal placement.
    Plan(PlanArgs),
    /// Simulate a placement against a workload.
    Simulate(SimArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Profile CSV: phase,batch_size,token_lens(;-separated),measured_s
    #[arg(long)]
    profile: PathBuf,
    /// Model the profile was measured on (preset name or JSON path).
    #[arg(long)]
    model: String,
    /// Tensor-parallel degree of the profiled shard.
    #[arg(long, default_value_t = 1)]
    tp: u32,
    /// Pipeline-parallel degree of the profiled shard.
    #[arg(long, default_value_t = 1)]
    pp: u32,
    /// Output coefficients JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    /// Workload source: preset (fixed512x64, uniform512) or JSONL trace path.
    #[arg(long)]
    workload: String,
    #[arg(long)]
    rate: f64,
    #[arg(long, default_value_t = 1000)]
    num_requests: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSONL path.
    #[arg(long)]
    out: PathBuf,
}

/// Inputs shared by `plan` and `simulate`.
#[derive(Args)]
struct RunConfig {
    /// Model spec: preset name (13b, 66b, 175b) or JSON path.
    #[arg(long)]
    model: String,
    /// Cluster spec JSON path.
    #[arg(long)]
    cluster: PathBuf,
    /// Workload source: preset name or JSONL trace path.
    #[arg(long)]
    workload: String,
    /// Coefficients: preset name (synthetic-a100) or JSON path.
    #[arg(long, default_value = "synthetic-a100")]
    coef: String,
    /// TTFT objective in seconds.
    #[arg(long = "slo-ttft")]
    slo_ttft: f64,
    /// TPOT objective in seconds.
    #[arg(long = "slo-tpot")]
    slo_tpot: f64,
    /// Required SLO attainment in (0, 1].
    #[arg(long, default_value_t = 0.9)]
    attainment: f64,
    /// Multiplier on both latency objectives.
    #[arg(long = "slo-scale", default_value_t = 1.0)]
    slo_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for config evaluation (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    run: RunConfig,
    /// Placement family: high, low, or colocated.
    #[arg(long)]
    mode: String,
    /// Target traffic rate in requests per second.
    #[arg(long)]
    rate: f64,
    /// Requests per goodput trial (first tenth is warmup).
    #[arg(long, default_value_t = 1000)]
    trial_requests: usize,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    run: RunConfig,
    /// Placement JSON produced by `plan`.
    #[arg(long)]
    placement: PathBuf,
    /// Arrival rate in requests per second.
    #[arg(long)]
    rate: f64,
    #[arg(long, default_value_t = 2000)]
    num_requests: usize,
    /// Also sweep these rates and write (rate, attainment) rows.
    #[arg(long, value_delimiter = ',')]
    sweep_rates: Vec<f64>,
    /// Also sweep these SLO scales and write (scale, attainment) rows.
    #[arg(long, value_delimiter = ',')]
    sweep_scales: Vec<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap treats --help/--version as errors that print to stdout
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(4);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::GenWorkload(args) => cmd_gen(args),
        Command::Plan(args) => cmd_plan(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Parse { .. } | Error::EmptySource => 1,
        Error::Fit(_) => 2,
        Error::Placement(_) | Error::Capacity { .. } => 3,
        Error::Config(_) | Error::UnstableQueue { .. } => 4,
    }
}

fn log_enabled() -> bool {
    matches!(
        std::env::var("DISAGG_LOG").as_deref(),
        Ok("debug") | Ok("info")
    )
}

macro_rules! log {
    ($($arg:tt)*) => {
        if log_enabled() {
            eprintln!($($arg)*);
        }
    };
}

fn load_model(spec: &str) -> Result<ModelSpec, Error> {
    let model = match ModelSpec::preset(spec) {
        Some(m) => m,
        None => {
            serde_json::from_str(&std::fs::read_to_string(spec)?).map_err(|e| Error::Parse {
                line: 0,
                msg: format!("model spec: {e}"),
            })?
        }
    };
    model.validate()?;
    Ok(model)
}

fn load_cluster(path: &Path) -> Result<ClusterSpec, Error> {
    let cluster: ClusterSpec =
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Parse {
            line: 0,
            msg: format!("cluster spec: {e}"),
        })?;
    cluster.validate()?;
    Ok(cluster)
}

fn load_coef(spec: &str) -> Result<LatencyCoefficients, Error> {
    let coef = match LatencyCoefficients::preset(spec) {
        Some(c) => c,
        None => {
            serde_json::from_str(&std::fs::read_to_string(spec)?).map_err(|e| Error::Parse {
                line: 0,
                msg: format!("coefficients: {e}"),
            })?
        }
    };
    coef.validate()?;
    Ok(coef)
}

impl RunConfig {
    fn slo(&self) -> Result<SloSpec, Error> {
        let slo = SloSpec {
            ttft_s: self.slo_ttft,
            tpot_s: self.slo_tpot,
            attainment_target: self.attainment,
            slo_scale: self.slo_scale,
        };
        slo.validate()?;
        Ok(slo)
    }

    fn init_jobs(&self) {
        if self.jobs > 0 {
            // the global pool can only be set once per process
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(self.jobs)
                .build_global();
        }
    }
}

fn cmd_fit(args: FitArgs) -> Result<(), Error> {
    let model = load_model(&args.model)?;
    let shard =
        disagg_core::parallelize(&model, &disagg_core::ParallelConfig::new(args.pp, args.tp))?;
    let file = std::fs::File::open(&args.profile)?;
    let rows = parse_profile_csv(std::io::BufReader::new(file))?;
    let report = disagg_core::fit::fit_coefficients_sharded(&shard, args.tp, &rows)?;

    std::fs::write(
        &args.out,
        serde_json::to_string_pretty(&report.coefficients).expect("serializable") + "\n",
    )?;
    println!(
        "fitted {} prefill + {} decode rows: relative residual {:.3e} (prefill), {:.3e} (decode)",
        report.prefill_rows,
        report.decode_rows,
        report.prefill_residual_rel,
        report.decode_residual_rel
    );
    for feature in &report.clamped {
        println!("warning: coefficient for {feature} was negative and clamped to 0");
    }
    println!("coefficients written to {}", args.out.display());
    Ok(())
}

fn cmd_gen(args: GenArgs) -> Result<(), Error> {
    let pool = resolve_source(&args.workload)?;
    let spec = WorkloadSpec {
        rate_r: args.rate,
        num_requests: args.num_requests,
        seed: args.seed,
    };
    let requests = sample_workload(&spec, &pool)?;
    let file = std::fs::File::create(&args.out)?;
    write_trace(std::io::BufWriter::new(file), &requests)?;
    println!(
        "{} requests written to {}",
        requests.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_plan(args: PlanArgs) -> Result<(), Error> {
    args.run.init_jobs();
    let model = load_model(&args.run.model)?;
    let cluster = load_cluster(&args.run.cluster)?;
    let coef = load_coef(&args.run.coef)?;
    let slo = args.run.slo()?;
    let source = resolve_source(&args.run.workload)?;

    let warmup = args.trial_requests / 10;
    let opts = PlannerOptions {
        trial: TrialConfig {
            warmup,
            measured: args.trial_requests.saturating_sub(warmup).max(1),
        },
        search: SearchParams::default().with_seed(args.run.seed),
    };

    let mode = args.mode.as_str();
    match (mode, cluster.affinity) {
        ("high", Affinity::High) | ("low", Affinity::Low) | ("colocated", _) => {}
        ("high", _) | ("low", _) => {
            return Err(Error::Config(format!(
                "planner mode '{mode}' does not match the cluster affinity"
            )))
        }
        _ => {
            return Err(Error::Config(format!(
                "unknown mode '{mode}': expected high, low, or colocated"
            )))
        }
    }
    log!(
        "planning mode={mode} rate={} on {}x{} GPUs",
        args.rate,
        cluster.num_nodes_n,
        cluster.gpus_per_node_m
    );

    let outcome = match mode {
        "high" => plan_high_affinity(&model, &cluster, &source, &slo, &coef, args.rate, &opts)?,
        "low" => plan_low_affinity(&model, &cluster, &source, &slo, &coef, args.rate, &opts)?,
        _ => plan_colocated(&model, &cluster, &source, &slo, &coef, args.rate, &opts)?,
    };

    if args.rate == 0.0 {
        eprintln!("warning: target rate is 0; the plan is degenerate with zero replicas");
    }
    std::fs::create_dir_all(&args.run.out)?;
    let placement_path = args.run.out.join("placement.json");
    std::fs::write(
        &placement_path,
        serde_json::to_string_pretty(&outcome.placement).expect("serializable") + "\n",
    )?;
    output::write_plan_summary(&args.run, &model, &cluster, &slo, args.rate, &outcome)?;
    output::print_plan_summary(&outcome);
    println!("placement written to {}", placement_path.display());
    Ok(())
}

fn cmd_simulate(args: SimArgs) -> Result<(), Error> {
    args.run.init_jobs();
    let model = load_model(&args.run.model)?;
    let cluster = load_cluster(&args.run.cluster)?;
    let coef = load_coef(&args.run.coef)?;
    let slo = args.run.slo()?;
    let source = resolve_source(&args.run.workload)?;
    let placement: Placement = serde_json::from_str(&std::fs::read_to_string(&args.placement)?)
        .map_err(|e| Error::Parse {
            line: 0,
            msg: format!("placement: {e}"),
        })?;

    let sample = |rate: f64, seed: u64| {
        sample_workload(
            &WorkloadSpec {
                rate_r: rate,
                num_requests: args.num_requests,
                seed,
            },
            &source,
        )
    };

    std::fs::create_dir_all(&args.run.out)?;
    let workload = sample(args.rate, args.run.seed)?;
    let result = simulate(&model, &placement, &workload, &slo, &coef, &cluster)?;
    output::write_sim_outputs(&args.run, &model, &cluster, &slo, args.rate, &result)?;
    output::print_sim_summary(&slo, &result);

    if !args.sweep_rates.is_empty() {
        let path = args.run.out.join("rate_sweep.csv");
        let mut rows = Vec::new();
        for (i, &rate) in args.sweep_rates.iter().enumerate() {
            let workload = sample(rate, args.run.seed.wrapping_add(i as u64 + 1))?;
            let r = simulate(&model, &placement, &workload, &slo, &coef, &cluster)?;
            rows.push((rate, r.attainment));
            log!("sweep rate={rate} attainment={:.4}", r.attainment);
        }
        output::write_sweep_csv(&path, "rate_rps", &rows)?;
        println!("rate sweep written to {}", path.display());
    }
    if !args.sweep_scales.is_empty() {
        let path = args.run.out.join("scale_sweep.csv");
        let mut rows = Vec::new();
        for (i, &scale) in args.sweep_scales.iter().enumerate() {
            let scaled = slo.with_scale(scale);
            let workload = sample(args.rate, args.run.seed.wrapping_add(1000 + i as u64))?;
            let r = simulate(&model, &placement, &workload, &scaled, &coef, &cluster)?;
            rows.push((scale, r.attainment));
            log!("sweep scale={scale} attainment={:.4}", r.attainment);
        }
        output::write_sweep_csv(&path, "slo_scale", &rows)?;
        println!("scale sweep written to {}", path.display());
    }
    Ok(())
}
