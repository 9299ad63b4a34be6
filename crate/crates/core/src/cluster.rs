//! Cluster descriptions, latency objectives, and per-instance resource
//! budgets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::{saturation_length, LatencyCoefficients};
use crate::model::{parallelize, ModelSpec, ParallelConfig};

/// Whether cross-node bandwidth is fast enough to place paired prefill and
/// decoding stages on different nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Affinity {
    High,
    Low,
}

/// Physical cluster shape and link bandwidths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    /// Node limit per instance (pipeline stages never span more nodes).
    pub num_nodes_n: u32,
    /// GPUs per node.
    pub gpus_per_node_m: u32,
    /// Memory capacity of one GPU.
    pub gpu_mem_bytes: u64,
    /// Bandwidth between GPUs on one node, bytes per second.
    pub intra_node_bw_bps: f64,
    /// Bandwidth between nodes, bytes per second.
    pub cross_node_bw_bps: f64,
    pub affinity: Affinity,
    /// Fraction of GPU memory reserved for activations; the rest of the
    /// non-weight memory is KV budget. Defaults to 0.10.
    #[serde(default = "default_activation_reserve")]
    pub activation_reserve_frac: f64,
}

fn default_activation_reserve() -> f64 {
    0.10
}

// NaN counts as invalid, like any non-positive value
fn is_nonpositive(x: f64) -> bool {
    x <= 0.0 || x.is_nan()
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_nodes_n == 0 || self.gpus_per_node_m == 0 {
            return Err(Error::Config("cluster shape counts must be > 0".into()));
        }
        if self.gpu_mem_bytes == 0 {
            return Err(Error::Config("gpu_mem_bytes must be > 0".into()));
        }
        if is_nonpositive(self.intra_node_bw_bps) || is_nonpositive(self.cross_node_bw_bps) {
            return Err(Error::Config("bandwidths must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.activation_reserve_frac) {
            return Err(Error::Config(format!(
                "activation_reserve_frac must be in [0, 1), got {}",
                self.activation_reserve_frac
            )));
        }
        Ok(())
    }

    /// Per-GPU memory usable for weights and KV after the activation reserve.
    pub fn usable_gpu_mem(&self) -> f64 {
        self.gpu_mem_bytes as f64 * (1.0 - self.activation_reserve_frac)
    }
}

/// Latency objectives: a request meets the SLO when both its TTFT and TPOT
/// fall under the scaled targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SloSpec {
    pub ttft_s: f64,
    pub tpot_s: f64,
    /// Required fraction of requests meeting both latency targets.
    pub attainment_target: f64,
    /// Multiplies both latency targets; < 1 tightens, > 1 loosens.
    pub slo_scale: f64,
}

impl SloSpec {
    pub fn new(ttft_s: f64, tpot_s: f64, attainment_target: f64) -> Self {
        SloSpec {
            ttft_s,
            tpot_s,
            attainment_target,
            slo_scale: 1.0,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.slo_scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if is_nonpositive(self.ttft_s) || is_nonpositive(self.tpot_s) {
            return Err(Error::Config("SLO latencies must be > 0".into()));
        }
        if !(self.attainment_target > 0.0 && self.attainment_target <= 1.0) {
            return Err(Error::Config(format!(
                "attainment_target must be in (0, 1], got {}",
                self.attainment_target
            )));
        }
        if is_nonpositive(self.slo_scale) {
            return Err(Error::Config("slo_scale must be > 0".into()));
        }
        Ok(())
    }

    pub fn scaled_ttft(&self) -> f64 {
        self.ttft_s * self.slo_scale
    }

    pub fn scaled_tpot(&self) -> f64 {
        self.tpot_s * self.slo_scale
    }
}

/// What work an instance performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    Prefill,
    Decoding,
    Colocated,
}

/// Resolved resources of one instance: its shard, batching limits, and KV
/// budget.
#[derive(Debug, Clone)]
pub struct InstanceConfig {
    pub kind: InstanceKind,
    pub parallel: ParallelConfig,
    /// Per-GPU shard (one pipeline stage).
    pub shard: ModelSpec,
    /// Prefill batch token budget; defaults to the saturation length.
    pub max_batch_tokens: u32,
    /// Decoding batch size cap per running batch.
    pub max_batch_size: u32,
    /// Instance-wide KV budget: total GPU memory minus weights and the
    /// activation reserve.
    pub kv_budget_bytes: u64,
}

impl InstanceConfig {
    /// Derive the instance resources for `parallel` on `cluster`. Fails when
    /// the shard does not divide or the weights exceed usable memory.
    pub fn derive(
        kind: InstanceKind,
        model: &ModelSpec,
        parallel: ParallelConfig,
        cluster: &ClusterSpec,
        coef: &LatencyCoefficients,
    ) -> Result<InstanceConfig> {
        let shard = parallelize(model, &parallel)?;
        let usable_total = cluster.usable_gpu_mem() * parallel.num_gpus() as f64;
        let kv_budget = usable_total - model.weight_bytes as f64;
        if kv_budget < 0.0 {
            return Err(Error::Placement(format!(
                "weights ({} B) exceed usable memory ({usable_total:.0} B) under {parallel}",
                model.weight_bytes
            )));
        }
        let sat = saturation_length(&shard, coef, parallel.intra_op);
        Ok(InstanceConfig {
            kind,
            parallel,
            shard,
            max_batch_tokens: sat,
            max_batch_size: sat,
            kv_budget_bytes: kv_budget as u64,
        })
    }

    pub fn with_max_batch_tokens(mut self, tokens: u32) -> Self {
        self.max_batch_tokens = tokens;
        self
    }

    pub fn with_max_batch_size(mut self, size: u32) -> Self {
        self.max_batch_size = size;
        self
    }
}
