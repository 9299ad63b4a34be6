//! Capacity planning for disaggregated LLM serving.
//!
//! The crate combines an analytical latency model for transformer inference
//! with a discrete-event simulator of prefill/decoding instances, and uses
//! them to search parallelism configurations and replica counts that
//! maximize per-GPU goodput under TTFT/TPOT latency objectives.
//!
//! The pieces compose in one direction:
//!
//! * [`model`] and [`latency`] describe a model shard and predict batch
//!   execution times from fitted coefficients ([`fit`]).
//! * [`queueing`] gives closed-form M/D/1 sanity baselines for the prefill
//!   phase.
//! * [`workload`] loads traces and resamples synthetic workloads.
//! * [`sim`] replays a workload against a placement at iteration-level
//!   granularity and reports TTFT/TPOT, SLO attainment, and the five-stage
//!   latency breakdown.
//! * [`placement`] enumerates parallelism configurations, scores them with
//!   simulated goodput, and replicates the winners to a target rate.

pub mod cluster;
pub mod error;
pub mod fit;
pub mod latency;
pub mod model;
pub mod placement;
pub mod queueing;
pub mod sim;
pub mod workload;

pub use cluster::{Affinity, ClusterSpec, InstanceConfig, InstanceKind, SloSpec};
pub use error::{Error, FitError, Result};
pub use fit::{fit_coefficients, parse_profile_csv, FitReport, Phase, ProfileRow};
pub use latency::{
    decode_iter_time, prefill_iter_time, saturation_length, BatchProfile, LatencyCoefficients,
};
pub use model::{kv_cache_bytes, parallelize, prefill_attention_ai, ModelSpec, ParallelConfig};
pub use placement::{
    get_intra_node_configs, plan_colocated, plan_high_affinity, plan_low_affinity,
    replicate_to_rate, PhasePlan, Placement, PlacementMode, PlanOutcome, PlannerOptions,
};
pub use queueing::{mdl_avg_ttft, mdl_avg_ttft_inter, mdl_avg_ttft_intra};
pub use sim::{
    max_goodput, simu_decode, simu_prefill, simulate, BatchLimits, GoodputResult, SearchParams,
    SimMode, SimResult, TrialConfig,
};
pub use workload::{
    detect_shift, load_trace, sample_workload, Request, WorkloadSpec, WorkloadStats,
};
