//! Discrete-event simulation of disaggregated (and colocated) serving.
//!
//! Events fire at continuous-batching iteration boundaries, not per token:
//! a prefill batch flows through its pipeline stages as one unit, a decoding
//! batch advances all members by one token per iteration, and a colocated
//! instance runs mixed iterations that merge new prefills into the ongoing
//! decode batch. KV caches stay in the prefill instance's memory until the
//! decoding instance pulls them; the pull occupies the request, never the
//! instances.

mod engine;
pub mod goodput;

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterSpec, InstanceConfig, InstanceKind, SloSpec};
use crate::error::{Error, Result};
use crate::latency::LatencyCoefficients;
use crate::model::ModelSpec;
use crate::placement::{Placement, PlacementMode};
use crate::workload::Request;

pub use goodput::{
    max_goodput, simu_decode, simu_prefill, GoodputResult, SearchParams, TrialConfig,
};

/// Which phases a simulation models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMode {
    /// Prefill, KV transfer, and decoding end to end.
    Full,
    /// Prefill only; a request is satisfied by its TTFT alone.
    PrefillOnly,
    /// Decoding only; requests arrive with KV already materialized and are
    /// satisfied by TPOT alone.
    DecodeOnly,
}

/// Per-request share of the five lifecycle stages, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageBreakdown {
    pub prefill_queuing_s: f64,
    pub prefill_execution_s: f64,
    pub transmission_s: f64,
    pub decoding_queuing_s: f64,
    pub decoding_execution_s: f64,
}

impl StageBreakdown {
    pub fn total(&self) -> f64 {
        self.prefill_queuing_s
            + self.prefill_execution_s
            + self.transmission_s
            + self.decoding_queuing_s
            + self.decoding_execution_s
    }
}

/// Outcome of one simulated request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: u64,
    pub arrival_s: f64,
    pub input_len: u32,
    pub output_len: u32,
    pub ttft_s: f64,
    /// Mean time per output token after the first; 0 when `output_len == 1`.
    pub tpot_s: f64,
    pub met_slo: bool,
    pub completion_s: f64,
    pub stages: StageBreakdown,
}

/// Request-seconds spent in each stage, summed over all requests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTotals {
    pub prefill_queuing_s: f64,
    pub prefill_execution_s: f64,
    pub transmission_s: f64,
    pub decoding_queuing_s: f64,
    pub decoding_execution_s: f64,
}

impl StageTotals {
    pub fn total(&self) -> f64 {
        self.prefill_queuing_s
            + self.prefill_execution_s
            + self.transmission_s
            + self.decoding_queuing_s
            + self.decoding_execution_s
    }

    fn add(&mut self, s: &StageBreakdown) {
        self.prefill_queuing_s += s.prefill_queuing_s;
        self.prefill_execution_s += s.prefill_execution_s;
        self.transmission_s += s.transmission_s;
        self.decoding_queuing_s += s.decoding_queuing_s;
        self.decoding_execution_s += s.decoding_execution_s;
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

fn percentiles(values: &mut [f64]) -> Percentiles {
    if values.is_empty() {
        return Percentiles::default();
    }
    values.sort_by(f64::total_cmp);
    let pick = |q: f64| {
        let rank = (q * values.len() as f64).ceil() as usize;
        values[rank.clamp(1, values.len()) - 1]
    };
    Percentiles {
        p50: pick(0.50),
        p90: pick(0.90),
        p99: pick(0.99),
    }
}

/// KV accounting observed on one instance during the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceUsage {
    pub kind: InstanceKind,
    pub index: usize,
    pub kv_budget_bytes: u64,
    pub peak_kv_bytes: u64,
}

/// Full outcome of one simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimResult {
    pub records: Vec<RequestRecord>,
    pub stage_totals: StageTotals,
    /// Fraction of requests meeting the (scaled) SLO.
    pub attainment: f64,
    pub ttft: Percentiles,
    pub tpot: Percentiles,
    pub instances: Vec<InstanceUsage>,
}

impl SimResult {
    pub(crate) fn from_records(records: Vec<RequestRecord>, instances: Vec<InstanceUsage>) -> Self {
        let mut totals = StageTotals::default();
        let mut met = 0usize;
        let mut ttfts = Vec::with_capacity(records.len());
        let mut tpots = Vec::with_capacity(records.len());
        for r in &records {
            totals.add(&r.stages);
            if r.met_slo {
                met += 1;
            }
            ttfts.push(r.ttft_s);
            tpots.push(r.tpot_s);
        }
        let attainment = if records.is_empty() {
            0.0
        } else {
            met as f64 / records.len() as f64
        };
        SimResult {
            attainment,
            stage_totals: totals,
            ttft: percentiles(&mut ttfts),
            tpot: percentiles(&mut tpots),
            records,
            instances,
        }
    }

    /// Attainment over the records after a warmup prefix.
    pub fn attainment_after(&self, warmup: usize) -> f64 {
        let slice = &self.records[warmup.min(self.records.len())..];
        if slice.is_empty() {
            return 0.0;
        }
        slice.iter().filter(|r| r.met_slo).count() as f64 / slice.len() as f64
    }

    pub fn mean_ttft(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.ttft_s).sum::<f64>() / self.records.len() as f64
    }

    /// Write the per-request CSV used for external plotting.
    pub fn write_records_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "id,arrival_s,input_len,output_len,ttft_s,tpot_s,met_slo,\
             prefill_queuing_s,prefill_execution_s,transmission_s,\
             decoding_queuing_s,decoding_execution_s"
        )?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.id,
                r.arrival_s,
                r.input_len,
                r.output_len,
                r.ttft_s,
                r.tpot_s,
                r.met_slo,
                r.stages.prefill_queuing_s,
                r.stages.prefill_execution_s,
                r.stages.transmission_s,
                r.stages.decoding_queuing_s,
                r.stages.decoding_execution_s,
            )?;
        }
        Ok(())
    }
}

/// Optional overrides on the derived per-instance batching limits.
#[derive(Debug, Clone, Copy, Default)]
pub struct BatchLimits {
    pub max_batch_tokens: Option<u32>,
    pub max_batch_size: Option<u32>,
}

impl BatchLimits {
    fn apply(&self, mut cfg: InstanceConfig) -> InstanceConfig {
        if let Some(t) = self.max_batch_tokens {
            cfg = cfg.with_max_batch_tokens(t);
        }
        if let Some(s) = self.max_batch_size {
            cfg = cfg.with_max_batch_size(s);
        }
        cfg
    }
}

/// How prefill completions map to decoding instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum DecodeRouting {
    /// Pick the decoding instance with the least resident KV bytes.
    LeastLoaded,
    /// Replica pairs share nodes; stay within the pair.
    ByReplicaIndex,
}

/// Simulate `workload` against `placement` end to end.
pub fn simulate(
    model: &ModelSpec,
    placement: &Placement,
    workload: &[Request],
    slo: &SloSpec,
    coef: &LatencyCoefficients,
    cluster: &ClusterSpec,
) -> Result<SimResult> {
    simulate_with_limits(
        model,
        placement,
        workload,
        slo,
        coef,
        cluster,
        &BatchLimits::default(),
    )
}

/// [`simulate`] with explicit batching-limit overrides.
pub fn simulate_with_limits(
    model: &ModelSpec,
    placement: &Placement,
    workload: &[Request],
    slo: &SloSpec,
    coef: &LatencyCoefficients,
    cluster: &ClusterSpec,
    limits: &BatchLimits,
) -> Result<SimResult> {
    placement.validate(model, cluster)?;
    slo.validate()?;
    coef.validate()?;
    for w in workload.windows(2) {
        if w[1].arrival_s < w[0].arrival_s {
            return Err(Error::Config("workload arrivals must be sorted".into()));
        }
    }

    let mut prefill = Vec::new();
    let mut decode = Vec::new();
    let mut colocated = Vec::new();
    let link_bw;
    let routing;
    match placement.mode {
        PlacementMode::Colocated => {
            link_bw = f64::INFINITY;
            routing = DecodeRouting::LeastLoaded;
            let cfg = limits.apply(InstanceConfig::derive(
                InstanceKind::Colocated,
                model,
                placement.prefill.parallel(),
                cluster,
                coef,
            )?);
            for _ in 0..placement.prefill.replicas {
                colocated.push(cfg.clone());
            }
        }
        PlacementMode::HighAffinity | PlacementMode::LowAffinity => {
            // Low-affinity placements colocate paired stages on a node, so
            // pulls ride the intra-node links; high-affinity placements make
            // no such guarantee and pay the cross-node bandwidth.
            if placement.mode == PlacementMode::LowAffinity {
                link_bw = cluster.intra_node_bw_bps;
                routing = DecodeRouting::ByReplicaIndex;
            } else {
                link_bw = cluster.cross_node_bw_bps;
                routing = DecodeRouting::LeastLoaded;
            }
            let pcfg = limits.apply(InstanceConfig::derive(
                InstanceKind::Prefill,
                model,
                placement.prefill.parallel(),
                cluster,
                coef,
            )?);
            let dcfg = limits.apply(InstanceConfig::derive(
                InstanceKind::Decoding,
                model,
                placement.decode.parallel(),
                cluster,
                coef,
            )?);
            for _ in 0..placement.prefill.replicas {
                prefill.push(pcfg.clone());
            }
            for _ in 0..placement.decode.replicas {
                decode.push(dcfg.clone());
            }
            if prefill.is_empty() || decode.is_empty() {
                return Err(Error::Placement(
                    "both phases need at least one replica to simulate".into(),
                ));
            }
        }
    }
    if prefill.is_empty() && colocated.is_empty() {
        return Err(Error::Placement("placement has no instances".into()));
    }

    engine::Engine::new(
        model,
        coef,
        slo,
        SimMode::Full,
        link_bw,
        routing,
        prefill,
        decode,
        colocated,
    )
    .run(workload)
}

/// Simulate a set of standalone instances (used by the per-phase goodput
/// probes). `mode` decides which phases run and which SLO half applies.
pub fn simulate_instances(
    model: &ModelSpec,
    instances: &[InstanceConfig],
    mode: SimMode,
    workload: &[Request],
    slo: &SloSpec,
    coef: &LatencyCoefficients,
) -> Result<SimResult> {
    let mut prefill = Vec::new();
    let mut decode = Vec::new();
    let mut colocated = Vec::new();
    for cfg in instances {
        match cfg.kind {
            InstanceKind::Prefill => prefill.push(cfg.clone()),
            InstanceKind::Decoding => decode.push(cfg.clone()),
            InstanceKind::Colocated => colocated.push(cfg.clone()),
        }
    }
    let feasible = match mode {
        SimMode::PrefillOnly => !prefill.is_empty() || !colocated.is_empty(),
        SimMode::DecodeOnly => !decode.is_empty(),
        SimMode::Full => !colocated.is_empty() || (!prefill.is_empty() && !decode.is_empty()),
    };
    if !feasible {
        return Err(Error::Placement(format!(
            "no instance can serve the requested phases ({mode:?})"
        )));
    }
    engine::Engine::new(
        model,
        coef,
        slo,
        mode,
        f64::INFINITY,
        DecodeRouting::LeastLoaded,
        prefill,
        decode,
        colocated,
    )
    .run(workload)
}
