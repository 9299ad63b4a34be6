//! Placement search: choose parallelism configurations and replica counts
//! that maximize per-GPU goodput, then map instances onto nodes.
//!
//! Two searches cover the two cluster regimes. With fast cross-node links
//! the prefill and decoding phases are sized independently and replicated
//! separately. Without them, paired prefill/decoding stage segments must
//! share a node so KV pulls ride the intra-node links, which couples the
//! two configurations and bounds each pair by the node's GPU count.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{Affinity, ClusterSpec, InstanceConfig, InstanceKind, SloSpec};
use crate::error::{Error, Result};
use crate::latency::LatencyCoefficients;
use crate::model::{parallelize, ModelSpec, ParallelConfig};
use crate::sim::goodput::{
    max_goodput, simu_decode, simu_prefill, GoodputResult, SearchParams, TrialConfig,
};
use crate::workload::Request;

/// Which placement family a plan belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementMode {
    HighAffinity,
    LowAffinity,
    /// Single-instance baseline that batches both phases together.
    Colocated,
}

/// Parallelism and replica count for one phase, in the TP/PP notation used
/// by placement tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhasePlan {
    /// Tensor-parallel (intra-operator) degree.
    pub tp: u32,
    /// Pipeline-parallel (inter-operator) degree.
    pub pp: u32,
    pub replicas: u32,
}

impl PhasePlan {
    pub fn new(cfg: ParallelConfig, replicas: u32) -> Self {
        PhasePlan {
            tp: cfg.intra_op,
            pp: cfg.inter_op,
            replicas,
        }
    }

    pub fn parallel(&self) -> ParallelConfig {
        ParallelConfig::new(self.pp, self.tp)
    }

    /// GPUs of one instance.
    pub fn gpus(&self) -> u32 {
        self.tp * self.pp
    }
}

/// One instance segment pinned to a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentAssignment {
    pub node: u32,
    pub gpu_start: u32,
    pub gpu_count: u32,
    pub kind: InstanceKind,
    pub replica: u32,
    pub stage: u32,
}

/// A complete serving plan: per-phase parallelism, replica counts, the
/// achieved per-GPU goodput at the target rate, and the node map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub mode: PlacementMode,
    pub prefill: PhasePlan,
    pub decode: PhasePlan,
    pub per_gpu_goodput_rps: f64,
    pub node_assignment: Vec<SegmentAssignment>,
}

impl Placement {
    /// Structural invariants against a model and cluster: shard
    /// divisibility, memory fit under the activation reserve, the per-node
    /// GPU budget for paired stages, and stage pairing in low-affinity mode.
    pub fn validate(&self, model: &ModelSpec, cluster: &ClusterSpec) -> Result<()> {
        model.validate()?;
        cluster.validate()?;
        let per_gpu_fit = |plan: &PhasePlan| -> Result<()> {
            parallelize(model, &plan.parallel()).map_err(|e| Error::Placement(e.to_string()))?;
            let share = model.weight_bytes as f64 / plan.gpus() as f64;
            if share >= cluster.usable_gpu_mem() {
                return Err(Error::Placement(format!(
                    "weight shard {share:.3e} B does not fit GPU memory under tp={} pp={}",
                    plan.tp, plan.pp
                )));
            }
            Ok(())
        };
        per_gpu_fit(&self.prefill)?;
        match self.mode {
            PlacementMode::Colocated => {
                if self.prefill != self.decode {
                    return Err(Error::Placement(
                        "colocated placements use one shared configuration".into(),
                    ));
                }
            }
            PlacementMode::HighAffinity => {
                per_gpu_fit(&self.decode)?;
                let limit = cluster.num_nodes_n * cluster.gpus_per_node_m;
                for plan in [&self.prefill, &self.decode] {
                    if plan.gpus() > limit {
                        return Err(Error::Placement(format!(
                            "instance needs {} GPUs but the per-instance limit is {limit}",
                            plan.gpus()
                        )));
                    }
                }
            }
            PlacementMode::LowAffinity => {
                per_gpu_fit(&self.decode)?;
                if self.prefill.pp != self.decode.pp {
                    return Err(Error::Placement(
                        "low-affinity placements pair stages: inter_op must match".into(),
                    ));
                }
                if self.prefill.tp + self.decode.tp > cluster.gpus_per_node_m {
                    return Err(Error::Placement(format!(
                        "paired segments need {} GPUs on a node of {}",
                        self.prefill.tp + self.decode.tp,
                        cluster.gpus_per_node_m
                    )));
                }
                if self.prefill.pp > cluster.num_nodes_n {
                    return Err(Error::Placement(
                        "pipeline depth exceeds the per-instance node limit".into(),
                    ));
                }
                if self.prefill.replicas != self.decode.replicas {
                    return Err(Error::Placement(
                        "low-affinity placements replicate prefill/decoding pairs".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Total GPUs provisioned across both phases.
    pub fn total_gpus(&self) -> u64 {
        let p = self.prefill.gpus() as u64 * self.prefill.replicas as u64;
        match self.mode {
            PlacementMode::Colocated => p,
            _ => p + self.decode.gpus() as u64 * self.decode.replicas as u64,
        }
    }
}

/// Replicas needed so `per_instance_goodput` covers `target_rate`.
pub fn replicate_to_rate(per_instance_goodput: f64, target_rate: f64) -> Result<u32> {
    if target_rate == 0.0 {
        return Ok(0);
    }
    if per_instance_goodput <= 0.0 || per_instance_goodput.is_nan() {
        return Err(Error::Placement(format!(
            "cannot replicate to rate {target_rate}: instance goodput is {per_instance_goodput}"
        )));
    }
    Ok((target_rate / per_instance_goodput).ceil() as u32)
}

/// Intra-node tensor-parallel degrees whose weight segment fits one GPU:
/// all `intra_op in 1..=gpus_per_node` dividing the head and FFN counts with
/// `(weight_bytes / inter_op) / intra_op` under the usable per-GPU memory.
pub fn get_intra_node_configs(
    model: &ModelSpec,
    gpus_per_node: u32,
    usable_gpu_mem_bytes: f64,
    inter_op: u32,
) -> Vec<ParallelConfig> {
    let stage_bytes = model.weight_bytes as f64 / inter_op as f64;
    (1..=gpus_per_node)
        .filter(|&tp| model.num_heads_n.is_multiple_of(tp) && model.ffn_m.is_multiple_of(tp))
        .filter(|&tp| stage_bytes / (tp as f64) < usable_gpu_mem_bytes)
        .map(|tp| ParallelConfig::new(inter_op, tp))
        .collect()
}

/// Search knobs shared by the planners.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlannerOptions {
    pub trial: TrialConfig,
    pub search: SearchParams,
}

/// A scored parallelism configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PhaseScore {
    pub tp: u32,
    pub pp: u32,
    pub goodput_rps: f64,
    pub per_gpu_rps: f64,
}

impl PhaseScore {
    fn new(cfg: ParallelConfig, goodput: f64) -> Self {
        PhaseScore {
            tp: cfg.intra_op,
            pp: cfg.inter_op,
            goodput_rps: goodput,
            per_gpu_rps: goodput / cfg.num_gpus() as f64,
        }
    }
}

/// Planner result: the placement plus search accounting.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub placement: Placement,
    pub prefill: PhaseScore,
    pub decode: PhaseScore,
    /// Rate the provisioned replicas actually sustain.
    pub system_goodput_rps: f64,
    pub configs_evaluated: u32,
    pub sim_trials: u64,
    pub planning_seconds: f64,
    pub capacity_limited: bool,
    pub notes: Vec<String>,
}

/// Deterministic preference among configs with equal per-GPU goodput:
/// fewest GPUs, then lowest inter_op, then lowest intra_op.
fn better(
    best: Option<(ParallelConfig, f64)>,
    candidate: (ParallelConfig, f64),
) -> Option<(ParallelConfig, f64)> {
    match best {
        None => Some(candidate),
        Some(cur) => {
            let key = |c: &(ParallelConfig, f64)| {
                (
                    c.1, // maximize
                    std::cmp::Reverse((c.0.num_gpus(), c.0.inter_op, c.0.intra_op)),
                )
            };
            let (cv, ck) = (key(&candidate).0, key(&candidate).1);
            let (bv, bk) = (key(&cur).0, key(&cur).1);
            if cv > bv || (cv == bv && ck > bk) {
                Some(candidate)
            } else {
                Some(cur)
            }
        }
    }
}

/// Feasible configs enumerated by the independent-phase search:
/// `intra_op in 1..=M`, `inter_op in 1..=(N*M)/intra_op`, subject to shard
/// divisibility and the per-GPU memory fit.
pub fn enumerate_instance_configs(model: &ModelSpec, cluster: &ClusterSpec) -> Vec<ParallelConfig> {
    let n = cluster.num_nodes_n;
    let m = cluster.gpus_per_node_m;
    let mut out = Vec::new();
    for intra in 1..=m {
        if !model.num_heads_n.is_multiple_of(intra) || !model.ffn_m.is_multiple_of(intra) {
            continue;
        }
        for inter in 1..=(n * m / intra) {
            if !model.num_layers.is_multiple_of(inter) {
                continue;
            }
            let share = model.weight_bytes as f64 / (inter as f64 * intra as f64);
            if share >= cluster.usable_gpu_mem() {
                continue;
            }
            out.push(ParallelConfig::new(inter, intra));
        }
    }
    out
}

/// Per-config search parameters: the seed ladder is keyed by the config
/// itself, so any enumeration order (or an external oracle) scores a config
/// identically.
fn seeded(search: &SearchParams, key: u64) -> SearchParams {
    let mut z = search.seed ^ key.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 33)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    SearchParams {
        seed: z ^ (z >> 33),
        ..*search
    }
}

/// Score one parallel config for the independent-phase search: prefill-only
/// and decoding-only goodput on a single instance.
pub fn score_config_high(
    model: &ModelSpec,
    cluster: &ClusterSpec,
    cfg: ParallelConfig,
    source: &[Request],
    slo: &SloSpec,
    coef: &LatencyCoefficients,
    opts: &PlannerOptions,
) -> Result<(GoodputResult, GoodputResult)> {
    let pcfg = InstanceConfig::derive(InstanceKind::Prefill, model, cfg, cluster, coef)?;
    let dcfg = InstanceConfig::derive(InstanceKind::Decoding, model, cfg, cluster, coef)?;
    let key = (cfg.inter_op as u64) << 32 | cfg.intra_op as u64;
    let params = seeded(&opts.search, key);
    let p = simu_prefill(model, &pcfg, source, slo, coef, &opts.trial, &params)?;
    let d = simu_decode(model, &dcfg, source, slo, coef, &opts.trial, &params)?;
    Ok((p, d))
}

/// Score one stage-colocated pair for the low-affinity search: goodput of a
/// single prefill/decoding pair simulated end to end.
#[allow(clippy::too_many_arguments)]
pub fn score_pair_low(
    model: &ModelSpec,
    cluster: &ClusterSpec,
    inter: u32,
    tp_prefill: u32,
    tp_decode: u32,
    source: &[Request],
    slo: &SloSpec,
    coef: &LatencyCoefficients,
    opts: &PlannerOptions,
) -> Result<GoodputResult> {
    let placement = Placement {
        mode: PlacementMode::LowAffinity,
        prefill: PhasePlan {
            tp: tp_prefill,
            pp: inter,
            replicas: 1,
        },
        decode: PhasePlan {
            tp: tp_decode,
            pp: inter,
            replicas: 1,
        },
        per_gpu_goodput_rps: 0.0,
        node_assignment: Vec::new(),
    };
    let key = (inter as u64) << 42 | (tp_prefill as u64) << 21 | tp_decode as u64;
    let params = seeded(&opts.search, key);
    max_goodput(
        model,
        &placement,
        source,
        slo,
        coef,
        cluster,
        &opts.trial,
        &params,
    )
}

/// Independent-phase placement search for clusters with fast cross-node
/// links: score every feasible config per phase, keep the per-GPU-goodput
/// winners, replicate each phase to the target rate, and pack instances onto
/// nodes first-fit-decreasing.
pub fn plan_high_affinity(
    model: &ModelSpec,
    cluster: &ClusterSpec,
    source: &[Request],
    slo: &SloSpec,
    coef: &LatencyCoefficients,
    target_rate: f64,
    opts: &PlannerOptions,
) -> Result<PlanOutcome> {
    if cluster.affinity != Affinity::High {
        return Err(Error::Config(
            "high-affinity planning requires a cluster with affinity = high".into(),
        ));
    }
    let started = Instant::now();
    let candidates = enumerate_instance_configs(model, cluster);
    if candidates.is_empty() {
        return Err(Error::Placement(
            "no parallel configuration fits the model in GPU memory".into(),
        ));
    }

    let scored: Vec<(ParallelConfig, GoodputResult, GoodputResult)> = candidates
        .par_iter()
        .map(|&cfg| -> Result<_> {
            let (p, d) = score_config_high(model, cluster, cfg, source, slo, coef, opts)?;
            Ok((cfg, p, d))
        })
        .collect::<Result<_>>()?;

    let mut best_p: Option<(ParallelConfig, f64)> = None;
    let mut best_d: Option<(ParallelConfig, f64)> = None;
    let mut trials = 0u64;
    let mut capacity_limited = false;
    for (cfg, p, d) in &scored {
        trials += (p.trials + d.trials) as u64;
        capacity_limited |= p.capacity_limited || d.capacity_limited;
        best_p = better(best_p, (*cfg, p.goodput_rps / cfg.num_gpus() as f64));
        best_d = better(best_d, (*cfg, d.goodput_rps / cfg.num_gpus() as f64));
    }
    let (cfg_p, _) = best_p.expect("candidates scored");
    let (cfg_d, _) = best_d.expect("candidates scored");
    let goodput_p = scored
        .iter()
        .find(|(c, ..)| *c == cfg_p)
        .map(|(_, p, _)| p.goodput_rps)
        .unwrap();
    let goodput_d = scored
        .iter()
        .find(|(c, ..)| *c == cfg_d)
        .map(|(.., d)| d.goodput_rps)
        .unwrap();
    if goodput_p <= 0.0 || goodput_d <= 0.0 {
        return Err(Error::Placement(format!(
            "no configuration reaches the attainment target \
             (best prefill {goodput_p:.3} rps, best decode {goodput_d:.3} rps)"
        )));
    }

    let n = replicate_to_rate(goodput_p, target_rate)?;
    let m = replicate_to_rate(goodput_d, target_rate)?;
    let prefill = PhasePlan::new(cfg_p, n);
    let decode = PhasePlan::new(cfg_d, m);
    let total_gpus = prefill.gpus() as f64 * n as f64 + decode.gpus() as f64 * m as f64;
    let per_gpu = if total_gpus > 0.0 {
        target_rate / total_gpus
    } else {
        0.0
    };
    let node_assignment = pack_first_fit_decreasing(
        cluster,
        &[
            (InstanceKind::Prefill, prefill),
            (InstanceKind::Decoding, decode),
        ],
    );

    let placement = Placement {
        mode: PlacementMode::HighAffinity,
        prefill,
        decode,
        per_gpu_goodput_rps: per_gpu,
        node_assignment,
    };
    let mut notes = vec![
        "decoding-phase goodput is probed with Poisson arrivals at the search rate".into(),
        "memory fit reserves activation headroom before counting KV budget".into(),
        "length pairs are resampled jointly from the source trace per trial".into(),
    ];
    if target_rate == 0.0 {
        notes.push("target rate 0: degenerate placement with zero replicas".into());
    }
    Ok(PlanOutcome {
        placement,
        prefill: PhaseScore::new(cfg_p, goodput_p),
        decode: PhaseScore::new(cfg_d, goodput_d),
        system_goodput_rps: (n as f64 * goodput_p).min(m as f64 * goodput_d),
        configs_evaluated: candidates.len() as u32,
        sim_trials: trials,
        planning_seconds: started.elapsed().as_secs_f64(),
        capacity_limited,
        notes,
    })
}

/// Stage-colocating placement search for clusters without fast cross-node
/// links: enumerate a shared pipeline depth and per-node tensor degrees for
/// both phases with `tp_p + tp_d <= M`, score each pair with a full
/// disaggregated simulation, and replicate the best pair.
pub fn plan_low_affinity(
    model: &ModelSpec,
    cluster: &ClusterSpec,
    source: &[Request],
    slo: &SloSpec,
    coef: &LatencyCoefficients,
    target_rate: f64,
    opts: &PlannerOptions,
) -> Result<PlanOutcome> {
    if cluster.affinity != Affinity::Low {
        return Err(Error::Config(
            "low-affinity planning requires a cluster with affinity = low".into(),
        ));
    }
    let started = Instant::now();
    let mut candidates: Vec<(u32, u32, u32)> = Vec::new();
    for inter in 1..=cluster.num_nodes_n {
        if !model.num_layers.is_multiple_of(inter) {
            continue;
        }
        let configs = get_intra_node_configs(
            model,
            cluster.gpus_per_node_m,
            cluster.usable_gpu_mem(),
            inter,
        );
        for p in &configs {
            for d in &configs {
                if p.intra_op + d.intra_op <= cluster.gpus_per_node_m {
                    candidates.push((inter, p.intra_op, d.intra_op));
                }
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::Placement(
            "no prefill/decoding pair fits on a node; the model is too large".into(),
        ));
    }

    let scored: Vec<GoodputResult> = candidates
        .par_iter()
        .map(|&(inter, tp_p, tp_d)| {
            score_pair_low(model, cluster, inter, tp_p, tp_d, source, slo, coef, opts)
        })
        .collect::<Result<_>>()?;

    let mut best: Option<((u32, u32, u32), f64, f64)> = None; // (cand, goodput, per_gpu)
    let mut trials = 0u64;
    let mut capacity_limited = false;
    for (&cand, result) in candidates.iter().zip(&scored) {
        trials += result.trials as u64;
        capacity_limited |= result.capacity_limited;
        let (inter, tp_p, tp_d) = cand;
        let gpus = inter * (tp_p + tp_d);
        let per_gpu = result.goodput_rps / gpus as f64;
        let replace = match &best {
            None => true,
            Some((bcand, _, bpg)) => {
                let bgpus = bcand.0 * (bcand.1 + bcand.2);
                per_gpu > *bpg
                    || (per_gpu == *bpg
                        && (gpus, inter, tp_p, tp_d) < (bgpus, bcand.0, bcand.1, bcand.2))
            }
        };
        if replace {
            best = Some((cand, result.goodput_rps, per_gpu));
        }
    }
    let ((inter, tp_p, tp_d), pair_goodput, _) = best.expect("candidates scored");
    if pair_goodput <= 0.0 {
        return Err(Error::Placement(
            "no stage-colocated pair reaches the attainment target".into(),
        ));
    }

    let replicas = replicate_to_rate(pair_goodput, target_rate)?;
    let prefill = PhasePlan {
        tp: tp_p,
        pp: inter,
        replicas,
    };
    let decode = PhasePlan {
        tp: tp_d,
        pp: inter,
        replicas,
    };
    let pair_gpus = inter * (tp_p + tp_d);
    let per_gpu = if replicas > 0 {
        target_rate / (replicas as f64 * pair_gpus as f64)
    } else {
        0.0
    };

    // Replica r, stage s lives on node r*pp + s: the prefill segment takes
    // the first tp_p GPUs, its paired decoding segment the next tp_d.
    let mut node_assignment = Vec::new();
    for r in 0..replicas {
        for s in 0..inter {
            let node = r * inter + s;
            node_assignment.push(SegmentAssignment {
                node,
                gpu_start: 0,
                gpu_count: tp_p,
                kind: InstanceKind::Prefill,
                replica: r,
                stage: s,
            });
            node_assignment.push(SegmentAssignment {
                node,
                gpu_start: tp_p,
                gpu_count: tp_d,
                kind: InstanceKind::Decoding,
                replica: r,
                stage: s,
            });
        }
    }

    let placement = Placement {
        mode: PlacementMode::LowAffinity,
        prefill,
        decode,
        per_gpu_goodput_rps: per_gpu,
        node_assignment,
    };
    let mut notes = vec![
        "paired stage segments share a node; KV pulls use intra-node links".into(),
        "decoding segments mirror the prefill stage boundaries".into(),
    ];
    if target_rate == 0.0 {
        notes.push("target rate 0: degenerate placement with zero replicas".into());
    }
    // the pair is scored as a unit: report per-GPU goodput over the pair
    let pair_per_gpu = pair_goodput / pair_gpus as f64;
    let phase_score = |tp| PhaseScore {
        tp,
        pp: inter,
        goodput_rps: pair_goodput,
        per_gpu_rps: pair_per_gpu,
    };
    Ok(PlanOutcome {
        placement,
        prefill: phase_score(tp_p),
        decode: phase_score(tp_d),
        system_goodput_rps: replicas as f64 * pair_goodput,
        configs_evaluated: candidates.len() as u32,
        sim_trials: trials,
        planning_seconds: started.elapsed().as_secs_f64(),
        capacity_limited,
        notes,
    })
}

/// Baseline search over colocated instances (both phases batched together),
/// mirroring the independent-phase enumeration bounds.
pub fn plan_colocated(
    model: &ModelSpec,
    cluster: &ClusterSpec,
    source: &[Request],
    slo: &SloSpec,
    coef: &LatencyCoefficients,
    target_rate: f64,
    opts: &PlannerOptions,
) -> Result<PlanOutcome> {
    let started = Instant::now();
    let candidates = enumerate_instance_configs(model, cluster);
    if candidates.is_empty() {
        return Err(Error::Placement(
            "no parallel configuration fits the model in GPU memory".into(),
        ));
    }
    let scored: Vec<GoodputResult> = candidates
        .par_iter()
        .map(|&cfg| -> Result<GoodputResult> {
            let placement = Placement {
                mode: PlacementMode::Colocated,
                prefill: PhasePlan::new(cfg, 1),
                decode: PhasePlan::new(cfg, 1),
                per_gpu_goodput_rps: 0.0,
                node_assignment: Vec::new(),
            };
            let key = 0x8000_0000_0000_0000 | (cfg.inter_op as u64) << 32 | cfg.intra_op as u64;
            let params = seeded(&opts.search, key);
            max_goodput(
                model,
                &placement,
                source,
                slo,
                coef,
                cluster,
                &opts.trial,
                &params,
            )
        })
        .collect::<Result<_>>()?;

    let mut best: Option<(ParallelConfig, f64)> = None;
    let mut goodput_of_best = 0.0;
    let mut trials = 0u64;
    let mut capacity_limited = false;
    for (&cfg, result) in candidates.iter().zip(&scored) {
        trials += result.trials as u64;
        capacity_limited |= result.capacity_limited;
        let per_gpu = result.goodput_rps / cfg.num_gpus() as f64;
        let next = better(best, (cfg, per_gpu));
        if next.map(|(c, _)| c) != best.map(|(c, _)| c) {
            goodput_of_best = result.goodput_rps;
        }
        best = next;
    }
    let (cfg, _) = best.expect("candidates scored");
    if goodput_of_best <= 0.0 {
        return Err(Error::Placement(
            "no colocated configuration reaches the attainment target".into(),
        ));
    }
    let replicas = replicate_to_rate(goodput_of_best, target_rate)?;
    let plan = PhasePlan::new(cfg, replicas);
    let per_gpu = if replicas > 0 {
        target_rate / (replicas as f64 * plan.gpus() as f64)
    } else {
        0.0
    };
    let node_assignment = pack_first_fit_decreasing(cluster, &[(InstanceKind::Colocated, plan)]);
    let placement = Placement {
        mode: PlacementMode::Colocated,
        prefill: plan,
        decode: plan,
        per_gpu_goodput_rps: per_gpu,
        node_assignment,
    };
    Ok(PlanOutcome {
        placement,
        prefill: PhaseScore::new(cfg, goodput_of_best),
        decode: PhaseScore::new(cfg, goodput_of_best),
        system_goodput_rps: replicas as f64 * goodput_of_best,
        configs_evaluated: candidates.len() as u32,
        sim_trials: trials,
        planning_seconds: started.elapsed().as_secs_f64(),
        capacity_limited,
        notes: vec!["single-instance baseline batching both phases".into()],
    })
}

/// Pack instance stages onto nodes, largest instances first, each stage kept
/// whole on one node. Nodes are appended as needed so replication beyond the
/// search cluster still yields a map.
fn pack_first_fit_decreasing(
    cluster: &ClusterSpec,
    phases: &[(InstanceKind, PhasePlan)],
) -> Vec<SegmentAssignment> {
    let mut instances: Vec<(InstanceKind, u32, PhasePlan)> = Vec::new();
    for &(kind, plan) in phases {
        for r in 0..plan.replicas {
            instances.push((kind, r, plan));
        }
    }
    instances.sort_by_key(|&(kind, r, plan)| (std::cmp::Reverse(plan.gpus()), kind as u8, r));

    let cap = cluster.gpus_per_node_m;
    let mut free: Vec<u32> = Vec::new();
    let mut out = Vec::new();
    for (kind, replica, plan) in instances {
        for stage in 0..plan.pp {
            let need = plan.tp;
            let node = match free.iter().position(|&f| f >= need) {
                Some(i) => i,
                None => {
                    free.push(cap);
                    free.len() - 1
                }
            };
            out.push(SegmentAssignment {
                node: node as u32,
                gpu_start: cap - free[node],
                gpu_count: need,
                kind,
                replica,
                stage,
            });
            free[node] -= need;
        }
    }
    out.sort_by_key(|s| (s.node, s.gpu_start));
    out
}
