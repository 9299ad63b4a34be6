//! Closed-form batch execution-time formulas.
//!
//! Prefill iterations are dominated by compute-bound GEMMs plus a
//! memory-bound attention kernel; decoding iterations are dominated by
//! weight loading plus KV-cache reads. Both are linear models over batch
//! features, with fitted constants `c1..c5` and a per-degree penalty table
//! for imperfect tensor-parallel speedup.
//!
//! All formulas are per transformer layer and get multiplied by the shard's
//! layer count, so evaluating them on a pipeline-parallel shard yields the
//! time of one pipeline stage.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// Token-level description of one execution batch.
///
/// For prefill batches `token_lens` are prompt lengths; for decoding batches
/// they are current context lengths (prompt + generated so far).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchProfile {
    pub batch_size_b: u32,
    pub token_lens: Vec<u32>,
    /// Number of new tokens this iteration processes: the prompt-length sum
    /// for prefill, the batch size for decoding.
    pub tokens_t: u64,
    /// Squared sum of `token_lens`.
    pub sq_sum_t2: u64,
}

impl BatchProfile {
    /// Batch of prompt lengths entering a prefill iteration.
    pub fn prefill(prompt_lens: &[u32]) -> Self {
        let t: u64 = prompt_lens.iter().map(|&l| l as u64).sum();
        let t2: u64 = prompt_lens.iter().map(|&l| l as u64 * l as u64).sum();
        BatchProfile {
            batch_size_b: prompt_lens.len() as u32,
            token_lens: prompt_lens.to_vec(),
            tokens_t: t,
            sq_sum_t2: t2,
        }
    }

    /// Batch of context lengths entering one decoding step (one new token
    /// per request).
    pub fn decode(context_lens: &[u32]) -> Self {
        let t2: u64 = context_lens.iter().map(|&l| l as u64 * l as u64).sum();
        BatchProfile {
            batch_size_b: context_lens.len() as u32,
            token_lens: context_lens.to_vec(),
            tokens_t: context_lens.len() as u64,
            sq_sum_t2: t2,
        }
    }

    /// Sum of the context lengths (the KV tokens a decode step reads).
    pub fn context_sum(&self) -> u64 {
        self.token_lens.iter().map(|&l| l as u64).sum()
    }
}

/// Fitted latency constants plus the tensor-parallel penalty table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyCoefficients {
    /// Seconds per prefill FLOP-unit (GEMM term).
    pub c1: f64,
    /// Seconds per prefill attention element moved.
    pub c2: f64,
    /// Constant per-layer overhead in seconds.
    pub c3: f64,
    /// Seconds per weight element loaded in a decode step.
    pub c4: f64,
    /// Seconds per KV element read in a decode step.
    pub c5: f64,
    /// Multiplicative slowdown per intra-op degree; `1 -> 1.0`, non-decreasing.
    pub intra_penalty: BTreeMap<u32, f64>,
}

impl LatencyCoefficients {
    pub fn new(c1: f64, c2: f64, c3: f64, c4: f64, c5: f64) -> Self {
        LatencyCoefficients {
            c1,
            c2,
            c3,
            c4,
            c5,
            intra_penalty: Self::default_penalty(),
        }
    }

    /// Placeholder penalty table; real deployments override it from profiles.
    pub fn default_penalty() -> BTreeMap<u32, f64> {
        BTreeMap::from([(1, 1.0), (2, 1.15), (4, 1.25), (8, 1.35)])
    }

    /// Synthetic constants in the vicinity of a modern 80 GB accelerator
    /// (FP16 tensor cores, ~1.6 TB/s effective memory bandwidth). Useful for
    /// desk-scale experiments; real deployments fit their own.
    pub fn synthetic_a100() -> Self {
        LatencyCoefficients::new(1.25e-14, 1.25e-12, 2.5e-5, 1.25e-12, 1.25e-12)
    }

    /// Look up a named coefficient preset.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "synthetic-a100" => Some(Self::synthetic_a100()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("c4", self.c4),
            ("c5", self.c5),
        ] {
            if v < 0.0 || v.is_nan() {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        let unit = self.intra_penalty.get(&1).copied();
        if unit != Some(1.0) {
            return Err(Error::Config(format!(
                "intra_penalty[1] must be 1.0, got {unit:?}"
            )));
        }
        let mut prev = 0.0;
        for (&d, &p) in &self.intra_penalty {
            if p < 1.0 {
                return Err(Error::Config(format!("intra_penalty[{d}] = {p} < 1")));
            }
            if p < prev {
                return Err(Error::Config(
                    "intra_penalty must be non-decreasing in degree".into(),
                ));
            }
            prev = p;
        }
        Ok(())
    }

    /// Penalty factor for an intra-op degree, linearly interpolating between
    /// table entries and clamping past the ends.
    pub fn penalty(&self, intra_op: u32) -> f64 {
        if let Some(&p) = self.intra_penalty.get(&intra_op) {
            return p;
        }
        let below = self.intra_penalty.range(..intra_op).next_back();
        let above = self.intra_penalty.range(intra_op + 1..).next();
        match (below, above) {
            (Some((&d0, &p0)), Some((&d1, &p1))) => {
                let frac = (intra_op - d0) as f64 / (d1 - d0) as f64;
                p0 + frac * (p1 - p0)
            }
            (Some((_, &p0)), None) => p0,
            (None, Some((_, &p1))) => p1,
            (None, None) => 1.0,
        }
    }

    /// Effective speedup of an intra-op degree: `degree / penalty(degree)`.
    pub fn speedup_k(&self, intra_op: u32) -> f64 {
        intra_op as f64 / self.penalty(intra_op)
    }
}

// Operator sharding splits every GEMM along one dimension, so per-GPU GEMM
// work is the full-model amount divided by the degree. Evaluating the
// quadratic terms on shard dimensions alone would divide them twice; one
// factor of `intra_op` restores the linear split (`h_shard * intra = h`).
// The attention and KV terms are linear in `h` and need no correction.
fn prefill_layer_seconds(
    shard: &ModelSpec,
    tokens_t: u64,
    sq_sum_t2: u64,
    coef: &LatencyCoefficients,
    intra_op: u32,
) -> f64 {
    let h = shard.hidden_h as f64;
    let m = shard.ffn_m as f64;
    let b = shard.attn_block_b as f64;
    let t = tokens_t as f64;
    let t2 = sq_sum_t2 as f64;
    coef.c1 * (4.0 * t * h * h + 2.0 * t * h * m) * intra_op as f64
        + coef.c2 * (3.0 * h * t2) / b
        + coef.c3
}

fn decode_layer_seconds(
    shard: &ModelSpec,
    context_sum: u64,
    coef: &LatencyCoefficients,
    intra_op: u32,
) -> f64 {
    let h = shard.hidden_h as f64;
    let m = shard.ffn_m as f64;
    coef.c4 * (4.0 * h * h + 2.0 * h * m) * intra_op as f64 + coef.c5 * 3.0 * h * context_sum as f64
}

/// Prefill iteration time from pre-aggregated batch features.
pub fn prefill_time_for_totals(
    shard: &ModelSpec,
    tokens_t: u64,
    sq_sum_t2: u64,
    coef: &LatencyCoefficients,
    intra_op: u32,
) -> f64 {
    coef.penalty(intra_op)
        * prefill_layer_seconds(shard, tokens_t, sq_sum_t2, coef, intra_op)
        * shard.num_layers as f64
}

/// Decoding iteration time from the summed context length.
pub fn decode_time_for_totals(
    shard: &ModelSpec,
    context_sum: u64,
    coef: &LatencyCoefficients,
    intra_op: u32,
) -> f64 {
    coef.penalty(intra_op)
        * decode_layer_seconds(shard, context_sum, coef, intra_op)
        * shard.num_layers as f64
}

/// Iteration time of a continuous batch that mixes prefill and decode
/// members: both phase formulas compose additively since they share the same
/// kernel launches. `prefill_t`/`prefill_t2` aggregate the prompt lengths of
/// prefill members; `decode_ctx_sum` sums the contexts of decode members.
pub fn mixed_time_for_totals(
    shard: &ModelSpec,
    prefill_t: u64,
    prefill_t2: u64,
    decode_ctx_sum: u64,
    coef: &LatencyCoefficients,
    intra_op: u32,
) -> f64 {
    let per_layer = prefill_layer_seconds(shard, prefill_t, prefill_t2, coef, intra_op)
        + decode_layer_seconds(shard, decode_ctx_sum, coef, intra_op);
    coef.penalty(intra_op) * per_layer * shard.num_layers as f64
}

/// Execution time of one prefill iteration over `batch` on `shard`.
///
/// An empty batch reduces to the constant overhead term.
pub fn prefill_iter_time(
    shard: &ModelSpec,
    batch: &BatchProfile,
    coef: &LatencyCoefficients,
    intra_op: u32,
) -> f64 {
    prefill_time_for_totals(shard, batch.tokens_t, batch.sq_sum_t2, coef, intra_op)
}

/// Execution time of one decoding step over `batch` on `shard`.
///
/// An empty batch reduces to the weight-load floor.
pub fn decode_iter_time(
    shard: &ModelSpec,
    batch: &BatchProfile,
    coef: &LatencyCoefficients,
    intra_op: u32,
) -> f64 {
    decode_time_for_totals(shard, batch.context_sum(), coef, intra_op)
}

/// Search grid for [`saturation_length`]: powers of two in `1..=8192` plus
/// their midpoints.
pub fn saturation_grid() -> Vec<u32> {
    let mut grid = Vec::new();
    let mut p = 1u32;
    while p <= 8192 {
        grid.push(p);
        let mid = p + p / 2;
        if p >= 2 && mid < 8192 {
            grid.push(mid);
        }
        p *= 2;
    }
    grid.sort_unstable();
    grid.dedup();
    grid
}

/// Shortest prompt length that saturates the accelerator: the smallest grid
/// length whose modeled single-request prefill throughput reaches 97% of the
/// grid-wide maximum. Ties resolve to the smallest length, so a flat
/// throughput curve returns the grid minimum.
pub fn saturation_length(shard: &ModelSpec, coef: &LatencyCoefficients, intra_op: u32) -> u32 {
    let grid = saturation_grid();
    let throughput = |len: u32| {
        let t = prefill_time_for_totals(shard, len as u64, (len as u64).pow(2), coef, intra_op);
        if t > 0.0 {
            len as f64 / t
        } else {
            f64::INFINITY
        }
    };
    let max = grid.iter().map(|&l| throughput(l)).fold(0.0f64, f64::max);
    for &l in &grid {
        if throughput(l) >= 0.97 * max {
            return l;
        }
    }
    *grid.last().expect("grid is non-empty")
}
