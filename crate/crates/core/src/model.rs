//! Transformer model descriptions and parallelism sharding.
//!
//! [`ModelSpec`] carries the architecture dimensions every latency formula
//! consumes. [`parallelize`] produces the per-GPU shard view under a
//! tensor-parallel / pipeline-parallel configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture dimensions and byte footprints of a transformer model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// Number of transformer layers.
    pub num_layers: u32,
    /// Model hidden size.
    pub hidden_h: u32,
    /// Number of attention heads.
    pub num_heads_n: u32,
    /// Per-head dimension; `hidden_h = num_heads_n * head_size_s`.
    pub head_size_s: u32,
    /// FFN intermediate size.
    pub ffn_m: u32,
    /// Total parameter footprint in bytes.
    pub weight_bytes: u64,
    /// Bytes per KV-cache scalar (2 for FP16).
    pub kv_elem_bytes: u32,
    /// Attention kernel block size.
    pub attn_block_b: u32,
}

impl ModelSpec {
    /// Validate the structural invariants of the description.
    pub fn validate(&self) -> Result<()> {
        if self.hidden_h != self.num_heads_n * self.head_size_s {
            return Err(Error::Config(format!(
                "hidden_h ({}) != num_heads_n ({}) * head_size_s ({})",
                self.hidden_h, self.num_heads_n, self.head_size_s
            )));
        }
        let counts = [
            ("num_layers", self.num_layers),
            ("hidden_h", self.hidden_h),
            ("num_heads_n", self.num_heads_n),
            ("head_size_s", self.head_size_s),
            ("ffn_m", self.ffn_m),
            ("kv_elem_bytes", self.kv_elem_bytes),
            ("attn_block_b", self.attn_block_b),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        if self.weight_bytes == 0 {
            return Err(Error::Config("weight_bytes must be > 0".into()));
        }
        Ok(())
    }

    /// A 13B-parameter dense model (40 layers, hidden 5120), FP16.
    pub fn preset_13b() -> Self {
        ModelSpec {
            name: "opt-13b".into(),
            num_layers: 40,
            hidden_h: 5120,
            num_heads_n: 40,
            head_size_s: 128,
            ffn_m: 20480,
            weight_bytes: 26_000_000_000,
            kv_elem_bytes: 2,
            attn_block_b: 16,
        }
    }

    /// A 66B-parameter dense model (64 layers, hidden 9216), FP16.
    pub fn preset_66b() -> Self {
        ModelSpec {
            name: "opt-66b".into(),
            num_layers: 64,
            hidden_h: 9216,
            num_heads_n: 72,
            head_size_s: 128,
            ffn_m: 36864,
            weight_bytes: 132_000_000_000,
            kv_elem_bytes: 2,
            attn_block_b: 16,
        }
    }

    /// A 175B-parameter dense model (96 layers, hidden 12288), FP16.
    pub fn preset_175b() -> Self {
        ModelSpec {
            name: "opt-175b".into(),
            num_layers: 96,
            hidden_h: 12288,
            num_heads_n: 96,
            head_size_s: 128,
            ffn_m: 49152,
            weight_bytes: 350_000_000_000,
            kv_elem_bytes: 2,
            attn_block_b: 16,
        }
    }

    /// Look up a named preset.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "13b" | "opt-13b" => Some(Self::preset_13b()),
            "66b" | "opt-66b" => Some(Self::preset_66b()),
            "175b" | "opt-175b" => Some(Self::preset_175b()),
            _ => None,
        }
    }
}

/// A (pipeline-parallel, tensor-parallel) degree pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParallelConfig {
    /// Pipeline-parallel degree (layer stages).
    pub inter_op: u32,
    /// Tensor-parallel degree (operator sharding).
    pub intra_op: u32,
}

impl ParallelConfig {
    pub fn new(inter_op: u32, intra_op: u32) -> Self {
        ParallelConfig { inter_op, intra_op }
    }

    /// Total GPUs occupied by one instance under this config.
    pub fn num_gpus(&self) -> u32 {
        self.inter_op * self.intra_op
    }
}

impl std::fmt::Display for ParallelConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "pp{}xtp{}", self.inter_op, self.intra_op)
    }
}

/// Per-GPU shard view of `model` under `cfg`: hidden size, head count, and
/// FFN size divide by the tensor-parallel degree; layer count divides by the
/// pipeline-parallel degree; weights divide by the total GPU count.
///
/// The returned spec describes one pipeline stage on one GPU, so latency
/// formulas evaluated on it yield per-stage times.
pub fn parallelize(model: &ModelSpec, cfg: &ParallelConfig) -> Result<ModelSpec> {
    if cfg.inter_op < 1 || cfg.intra_op < 1 {
        return Err(Error::Config("parallel degrees must be >= 1".into()));
    }
    if !model.num_heads_n.is_multiple_of(cfg.intra_op) {
        return Err(Error::Config(format!(
            "num_heads {} not divisible by intra_op {}",
            model.num_heads_n, cfg.intra_op
        )));
    }
    if !model.ffn_m.is_multiple_of(cfg.intra_op) {
        return Err(Error::Config(format!(
            "ffn_m {} not divisible by intra_op {}",
            model.ffn_m, cfg.intra_op
        )));
    }
    if !model.num_layers.is_multiple_of(cfg.inter_op) {
        return Err(Error::Config(format!(
            "num_layers {} not divisible by inter_op {}",
            model.num_layers, cfg.inter_op
        )));
    }
    Ok(ModelSpec {
        name: model.name.clone(),
        num_layers: model.num_layers / cfg.inter_op,
        hidden_h: model.hidden_h / cfg.intra_op,
        num_heads_n: model.num_heads_n / cfg.intra_op,
        head_size_s: model.head_size_s,
        ffn_m: model.ffn_m / cfg.intra_op,
        weight_bytes: model.weight_bytes / (cfg.inter_op as u64 * cfg.intra_op as u64),
        kv_elem_bytes: model.kv_elem_bytes,
        attn_block_b: model.attn_block_b,
    })
}

/// KV-cache footprint of `num_tokens` tokens for the full (unsharded) model:
/// K and V, every layer, `kv_elem_bytes` per scalar.
pub fn kv_cache_bytes(model: &ModelSpec, num_tokens: u64) -> u64 {
    2 * model.num_layers as u64 * num_tokens * model.hidden_h as u64 * model.kv_elem_bytes as u64
}

/// Arithmetic intensity of the prefill attention kernel for block size `b`:
/// `2b/3` FLOPs per element moved.
pub fn prefill_attention_ai(block_b: u32) -> f64 {
    2.0 * block_b as f64 / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(h: u32, n: u32, m: u32, layers: u32) -> ModelSpec {
        ModelSpec {
            name: "toy".into(),
            num_layers: layers,
            hidden_h: h,
            num_heads_n: n,
            head_size_s: h / n,
            ffn_m: m,
            weight_bytes: 1_000_000,
            kv_elem_bytes: 2,
            attn_block_b: 16,
        }
    }

    #[test]
    fn parallelize_identity() {
        let m = toy(9216, 72, 36864, 64);
        let shard = parallelize(&m, &ParallelConfig::new(1, 1)).unwrap();
        assert_eq!(shard, m);
    }

    #[test]
    fn parallelize_divides_exactly() {
        let m = toy(9216, 72, 36864, 64);
        let shard = parallelize(&m, &ParallelConfig::new(1, 4)).unwrap();
        assert_eq!(shard.hidden_h, 2304);
        assert_eq!(shard.num_heads_n, 18);
        assert_eq!(shard.ffn_m, 9216);
        assert_eq!(shard.num_layers, 64);
        assert_eq!(shard.weight_bytes, 250_000);
    }

    #[test]
    fn parallelize_rejects_indivisible_heads() {
        let m = toy(9216, 72, 36864, 64);
        let err = parallelize(&m, &ParallelConfig::new(1, 5)).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err:?}");
    }

    #[test]
    fn parallelize_rejects_indivisible_layers() {
        let m = toy(9216, 72, 36864, 64);
        assert!(parallelize(&m, &ParallelConfig::new(3, 1)).is_err());
    }

    #[test]
    fn parallelize_splits_stages_and_weights() {
        let m = toy(9216, 72, 36864, 64);
        let shard = parallelize(&m, &ParallelConfig::new(2, 4)).unwrap();
        assert_eq!(shard.num_layers, 32);
        assert_eq!(shard.weight_bytes, 125_000);
    }

    #[test]
    fn kv_bytes_zero_tokens() {
        assert_eq!(kv_cache_bytes(&ModelSpec::preset_66b(), 0), 0);
    }

    #[test]
    fn kv_bytes_matches_66b_512_tokens() {
        // 2 * 64 layers * 512 tokens * 9216 hidden * 2 B = 1,207,959,552 B
        let bytes = kv_cache_bytes(&ModelSpec::preset_66b(), 512);
        assert_eq!(bytes, 1_207_959_552);
    }

    #[test]
    fn kv_bytes_linear_in_tokens() {
        let m = ModelSpec::preset_13b();
        for n in [1u64, 7, 100, 4096] {
            assert_eq!(kv_cache_bytes(&m, 2 * n), 2 * kv_cache_bytes(&m, n));
        }
    }

    #[test]
    fn attention_ai_constants() {
        assert!((prefill_attention_ai(16) - 32.0 / 3.0).abs() < 1e-12);
        assert!((prefill_attention_ai(32) - 64.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn presets_validate() {
        for m in [
            ModelSpec::preset_13b(),
            ModelSpec::preset_66b(),
            ModelSpec::preset_175b(),
        ] {
            m.validate().unwrap();
        }
    }
}
