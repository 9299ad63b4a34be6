//! Report writing: summaries embed the fully resolved configuration so a
//! result file is self-describing.

use std::path::Path;

use serde::Serialize;
use serde_json::json;

use disagg_core::cluster::{ClusterSpec, SloSpec};
use disagg_core::model::ModelSpec;
use disagg_core::placement::PlanOutcome;
use disagg_core::sim::SimResult;
use disagg_core::Error;

use crate::RunConfig;

#[derive(Serialize)]
struct ResolvedConfig<'a> {
    model: &'a ModelSpec,
    cluster: &'a ClusterSpec,
    slo: &'a SloSpec,
    workload: &'a str,
    rate_rps: f64,
    seed: u64,
}

fn resolved<'a>(
    run: &'a RunConfig,
    model: &'a ModelSpec,
    cluster: &'a ClusterSpec,
    slo: &'a SloSpec,
    rate: f64,
) -> ResolvedConfig<'a> {
    ResolvedConfig {
        model,
        cluster,
        slo,
        workload: &run.workload,
        rate_rps: rate,
        seed: run.seed,
    }
}

pub fn write_plan_summary(
    run: &RunConfig,
    model: &ModelSpec,
    cluster: &ClusterSpec,
    slo: &SloSpec,
    rate: f64,
    outcome: &PlanOutcome,
) -> Result<(), Error> {
    let summary = json!({
        "config": resolved(run, model, cluster, slo, rate),
        "placement": outcome.placement,
        "prefill": outcome.prefill,
        "decode": outcome.decode,
        "system_goodput_rps": outcome.system_goodput_rps,
        "configs_evaluated": outcome.configs_evaluated,
        "sim_trials": outcome.sim_trials,
        "planning_seconds": outcome.planning_seconds,
        "capacity_limited": outcome.capacity_limited,
        "notes": outcome.notes,
    });
    let path = run.out.join("plan_summary.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&summary).expect("serializable") + "\n",
    )?;
    Ok(())
}

pub fn print_plan_summary(outcome: &PlanOutcome) {
    let p = &outcome.placement;
    println!("mode: {:?}", p.mode);
    println!(
        "prefill:  tp={} pp={} x{} replicas  ({:.3} rps/instance, {:.4} rps/GPU)",
        p.prefill.tp,
        p.prefill.pp,
        p.prefill.replicas,
        outcome.prefill.goodput_rps,
        outcome.prefill.per_gpu_rps,
    );
    println!(
        "decoding: tp={} pp={} x{} replicas  ({:.3} rps/instance, {:.4} rps/GPU)",
        p.decode.tp,
        p.decode.pp,
        p.decode.replicas,
        outcome.decode.goodput_rps,
        outcome.decode.per_gpu_rps,
    );
    println!(
        "system goodput {:.3} rps over {} GPUs ({:.4} rps/GPU at the target rate)",
        outcome.system_goodput_rps,
        p.total_gpus(),
        p.per_gpu_goodput_rps,
    );
    println!(
        "searched {} configs with {} simulation trials in {:.2} s",
        outcome.configs_evaluated, outcome.sim_trials, outcome.planning_seconds
    );
    for note in &outcome.notes {
        println!("note: {note}");
    }
}

pub fn write_sim_outputs(
    run: &RunConfig,
    model: &ModelSpec,
    cluster: &ClusterSpec,
    slo: &SloSpec,
    rate: f64,
    result: &SimResult,
) -> Result<(), Error> {
    let report = json!({
        "config": resolved(run, model, cluster, slo, rate),
        "attainment": result.attainment,
        "ttft": result.ttft,
        "tpot": result.tpot,
        "stage_totals": result.stage_totals,
        "instances": result.instances,
        "num_requests": result.records.len(),
    });
    std::fs::write(
        run.out.join("simresult.json"),
        serde_json::to_string_pretty(&report).expect("serializable") + "\n",
    )?;
    let file = std::fs::File::create(run.out.join("requests.csv"))?;
    result.write_records_csv(std::io::BufWriter::new(file))?;
    Ok(())
}

pub fn print_sim_summary(slo: &SloSpec, result: &SimResult) {
    println!(
        "attainment: {:.2}% of {} requests (target {:.0}%, scale {})",
        result.attainment * 100.0,
        result.records.len(),
        slo.attainment_target * 100.0,
        slo.slo_scale,
    );
    println!(
        "TTFT p50/p90/p99: {:.4}/{:.4}/{:.4} s    TPOT p50/p90/p99: {:.4}/{:.4}/{:.4} s",
        result.ttft.p50,
        result.ttft.p90,
        result.ttft.p99,
        result.tpot.p50,
        result.tpot.p90,
        result.tpot.p99,
    );
    let t = &result.stage_totals;
    let total = t.total().max(f64::MIN_POSITIVE);
    println!(
        "stage shares: prefill queue {:.1}%, prefill exec {:.1}%, transfer {:.1}%, \
         decode queue {:.1}%, decode exec {:.1}%",
        100.0 * t.prefill_queuing_s / total,
        100.0 * t.prefill_execution_s / total,
        100.0 * t.transmission_s / total,
        100.0 * t.decoding_queuing_s / total,
        100.0 * t.decoding_execution_s / total,
    );
}

pub fn write_sweep_csv(path: &Path, x_name: &str, rows: &[(f64, f64)]) -> Result<(), Error> {
    let mut out = String::from(x_name);
    out.push_str(",attainment\n");
    for (x, a) in rows {
        out.push_str(&format!("{x},{a}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}
