//! Model-architecture catalog, tensor-parallel sharding, and per-device
//! memory footprints.
//!
//! All sizes are plain byte counts. Weights and activations default to one
//! byte per element (int8).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("cannot read model config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse model config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid model config `{model}`: field `{field}`: {reason}")]
    Validation {
        model: String,
        field: &'static str,
        reason: String,
    },
    #[error("cannot shard `{model}` to tp={tp}: `{dimension}` = {value} is not divisible")]
    Indivisible {
        model: String,
        tp: u64,
        dimension: &'static str,
        value: u64,
    },
    #[error(
        "invalid workload: prefill_len {prefill} + decode_len {decode} != max_seq_len {max_seq}"
    )]
    WorkloadSplit {
        prefill: u64,
        decode: u64,
        max_seq: u64,
    },
    #[error("unknown model `{0}`")]
    UnknownModel(String),
}

fn default_one() -> u64 {
    1
}

/// Transformer architecture dimensions for one model.
///
/// `num_experts`/`experts_per_token` are 1 for dense models. Byte widths
/// default to 1 (int8 weights and activations).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub hidden_size: u64,
    pub num_layers: u64,
    pub num_q_heads: u64,
    pub num_kv_heads: u64,
    pub head_dim: u64,
    pub intermediate_size: u64,
    #[serde(default = "default_one")]
    pub num_experts: u64,
    #[serde(default = "default_one")]
    pub experts_per_token: u64,
    pub vocab_size: u64,
    #[serde(default = "default_one")]
    pub weight_bytes_per_param: u64,
    #[serde(default = "default_one")]
    pub activation_bytes_per_elem: u64,
}

impl ModelConfig {
    #[allow(clippy::too_many_arguments)]
    fn dense(
        name: &str,
        hidden_size: u64,
        num_layers: u64,
        num_q_heads: u64,
        num_kv_heads: u64,
        head_dim: u64,
        intermediate_size: u64,
        vocab_size: u64,
    ) -> Self {
        ModelConfig {
            name: name.to_string(),
            hidden_size,
            num_layers,
            num_q_heads,
            num_kv_heads,
            head_dim,
            intermediate_size,
            num_experts: 1,
            experts_per_token: 1,
            vocab_size,
            weight_bytes_per_param: 1,
            activation_bytes_per_elem: 1,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn moe(
        name: &str,
        hidden_size: u64,
        num_layers: u64,
        num_q_heads: u64,
        num_kv_heads: u64,
        head_dim: u64,
        intermediate_size: u64,
        num_experts: u64,
        experts_per_token: u64,
        vocab_size: u64,
    ) -> Self {
        ModelConfig {
            num_experts,
            experts_per_token,
            ..Self::dense(
                name,
                hidden_size,
                num_layers,
                num_q_heads,
                num_kv_heads,
                head_dim,
                intermediate_size,
                vocab_size,
            )
        }
    }

    /// Check every structural invariant, naming the offending field on failure.
    pub fn validate(&self) -> Result<(), ArchError> {
        let err = |field: &'static str, reason: String| ArchError::Validation {
            model: self.name.clone(),
            field,
            reason,
        };
        if self.name.is_empty() {
            return Err(err("name", "must be non-empty".into()));
        }
        for (field, value) in [
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
            ("num_q_heads", self.num_q_heads),
            ("num_kv_heads", self.num_kv_heads),
            ("head_dim", self.head_dim),
            ("intermediate_size", self.intermediate_size),
            ("num_experts", self.num_experts),
            ("experts_per_token", self.experts_per_token),
            ("vocab_size", self.vocab_size),
            ("weight_bytes_per_param", self.weight_bytes_per_param),
            ("activation_bytes_per_elem", self.activation_bytes_per_elem),
        ] {
            if value == 0 {
                return Err(err(field, "must be > 0".into()));
            }
        }
        if !self.num_q_heads.is_multiple_of(self.num_kv_heads) {
            return Err(err(
                "num_q_heads",
                format!(
                    "{} is not a multiple of num_kv_heads {} (grouped-query attention)",
                    self.num_q_heads, self.num_kv_heads
                ),
            ));
        }
        if self.hidden_size != self.num_q_heads * self.head_dim {
            return Err(err(
                "hidden_size",
                format!(
                    "{} != num_q_heads {} * head_dim {}",
                    self.hidden_size, self.num_q_heads, self.head_dim
                ),
            ));
        }
        if self.experts_per_token > self.num_experts {
            return Err(err(
                "experts_per_token",
                format!(
                    "{} exceeds num_experts {}",
                    self.experts_per_token, self.num_experts
                ),
            ));
        }
        Ok(())
    }
}

/// Load and validate a model config from a JSON file.
pub fn load_model_config(path: impl AsRef<Path>) -> Result<ModelConfig, ArchError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ArchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let config: ModelConfig = serde_json::from_str(&text).map_err(|source| ArchError::Parse {
        path: path.display().to_string(),
        source,
    })?;
    config.validate()?;
    Ok(config)
}

/// The twelve built-in model configurations used by the sweep drivers.
///
/// Dimensions come from the published model cards; weights and activations
/// are int8 (one byte per element).
pub fn builtin_catalog() -> Vec<ModelConfig> {
    vec![
        ModelConfig::dense("Llama3-8B", 4096, 32, 32, 8, 128, 14336, 128256),
        ModelConfig::dense("Llama3-70B", 8192, 80, 64, 8, 128, 28672, 128256),
        ModelConfig::dense("Llama3-405B", 16384, 126, 128, 8, 128, 53248, 128256),
        ModelConfig::dense("Qwen2-7B", 3584, 28, 28, 4, 128, 18944, 152064),
        ModelConfig::dense("Qwen2-72B", 8192, 80, 64, 8, 128, 29568, 152064),
        ModelConfig::dense("Qwen1.5-110B", 8192, 80, 64, 8, 128, 49152, 152064),
        ModelConfig::dense("Phi3-small", 4096, 32, 32, 8, 128, 14336, 100352),
        ModelConfig::dense("Phi3-medium", 5120, 40, 40, 10, 128, 17920, 32064),
        ModelConfig::moe("Phi3.5-MoE", 4096, 32, 32, 8, 128, 6400, 16, 2, 32064),
        ModelConfig::dense("Mistral-7B", 4096, 32, 32, 8, 128, 14336, 32000),
        ModelConfig::moe("Mixtral-8x7B", 4096, 32, 32, 8, 128, 14336, 8, 2, 32000),
        ModelConfig::moe("Mixtral-8x22B", 6144, 56, 48, 8, 128, 16384, 8, 2, 32768),
    ]
}

/// Look up a catalog model by name, case-insensitively.
pub fn find_model(name: &str) -> Result<ModelConfig, ArchError> {
    builtin_catalog()
        .into_iter()
        .find(|m| m.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| ArchError::UnknownModel(name.to_string()))
}

/// One tensor-parallel shard of a model.
///
/// Attention is partitioned along the head dimension and the MLP along the
/// intermediate dimension. When the tensor-parallel degree exceeds the
/// number of KV heads, KV heads are replicated (one per device) instead of
/// divided.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardedModel {
    pub base: ModelConfig,
    pub tp_degree: u64,
    pub local_q_heads: u64,
    pub local_kv_heads: u64,
    pub local_intermediate: u64,
    pub kv_replicated: bool,
}

/// Partition a model across `tp_degree` devices.
pub fn shard(config: &ModelConfig, tp_degree: u64) -> Result<ShardedModel, ArchError> {
    config.validate()?;
    if tp_degree == 0 {
        return Err(ArchError::Validation {
            model: config.name.clone(),
            field: "tp_degree",
            reason: "must be >= 1".into(),
        });
    }
    let indivisible = |dimension: &'static str, value: u64| ArchError::Indivisible {
        model: config.name.clone(),
        tp: tp_degree,
        dimension,
        value,
    };
    if !config.num_q_heads.is_multiple_of(tp_degree) {
        return Err(indivisible("num_q_heads", config.num_q_heads));
    }
    if !config.intermediate_size.is_multiple_of(tp_degree) {
        return Err(indivisible("intermediate_size", config.intermediate_size));
    }
    let (local_kv_heads, kv_replicated) = if tp_degree <= config.num_kv_heads {
        if !config.num_kv_heads.is_multiple_of(tp_degree) {
            return Err(indivisible("num_kv_heads", config.num_kv_heads));
        }
        (config.num_kv_heads / tp_degree, false)
    } else {
        (1, true)
    };
    Ok(ShardedModel {
        base: config.clone(),
        tp_degree,
        local_q_heads: config.num_q_heads / tp_degree,
        local_kv_heads,
        kv_replicated,
        local_intermediate: config.intermediate_size / tp_degree,
    })
}

impl ShardedModel {
    /// Width of the local query projection output (local heads x head_dim).
    pub fn local_q_dim(&self) -> u64 {
        self.local_q_heads * self.base.head_dim
    }

    /// Width of the local key/value projection output.
    pub fn local_kv_dim(&self) -> u64 {
        self.local_kv_heads * self.base.head_dim
    }
}

/// Static-batching workload: every request shares one maximum sequence
/// length, split into a prompt (prefill) part and a generated (decode) part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub batch: u64,
    pub max_seq_len: u64,
    pub prefill_len: u64,
    pub decode_len: u64,
}

impl Workload {
    /// Standard split: prefill takes round(2/3) of the sequence, decode the
    /// rest. Sequences of at least two tokens get one of each.
    pub fn standard(batch: u64, max_seq_len: u64) -> Workload {
        let prefill_len = ((2.0 * max_seq_len as f64) / 3.0).round() as u64;
        let prefill_len = if max_seq_len < 2 {
            max_seq_len
        } else {
            prefill_len.clamp(1, max_seq_len - 1)
        };
        Workload {
            batch,
            max_seq_len,
            prefill_len,
            decode_len: max_seq_len - prefill_len,
        }
    }

    pub fn new(
        batch: u64,
        max_seq_len: u64,
        prefill_len: u64,
        decode_len: u64,
    ) -> Result<Workload, ArchError> {
        if prefill_len + decode_len != max_seq_len {
            return Err(ArchError::WorkloadSplit {
                prefill: prefill_len,
                decode: decode_len,
                max_seq: max_seq_len,
            });
        }
        Ok(Workload {
            batch,
            max_seq_len,
            prefill_len,
            decode_len,
        })
    }
}

/// Per-device byte counts for one decoder layer, plus the whole-model total
/// used for HBM capacity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FootprintReport {
    pub attn_weight_bytes: u64,
    pub kv_cache_bytes: u64,
    pub mlp_weight_bytes: u64,
    pub attn_total_bytes: u64,
    pub total_model_bytes_per_device: u64,
}

/// Per-device memory footprint of one decoder layer under `workload`.
///
/// The KV cache is sized at the workload's maximum sequence length. MLP
/// weights count only the experts active per token (the bytes actually read
/// each decode step); `total_model_bytes_per_device` counts all experts and
/// all layers, plus the embedding table, for capacity checks.
pub fn layer_footprint(sharded: &ShardedModel, workload: &Workload) -> FootprintReport {
    let m = &sharded.base;
    let w = m.weight_bytes_per_param;
    let a = m.activation_bytes_per_elem;

    // Wq and Wo are hidden x (hidden/tp); Wk and Wv are hidden x local_kv_dim.
    let attn_weight_bytes = (2 * m.hidden_size * sharded.local_q_dim()
        + 2 * m.hidden_size * sharded.local_kv_dim())
        * w;
    let kv_cache_bytes = 2 * workload.batch * workload.max_seq_len * sharded.local_kv_dim() * a;
    let mlp_weight_bytes = 3 * m.hidden_size * sharded.local_intermediate * m.experts_per_token * w;

    let mlp_all_experts = 3 * m.hidden_size * sharded.local_intermediate * m.num_experts * w;
    let embedding = m.hidden_size * m.vocab_size * w;
    let total_model_bytes_per_device =
        m.num_layers * (attn_weight_bytes + mlp_all_experts) + embedding;

    FootprintReport {
        attn_weight_bytes,
        kv_cache_bytes,
        mlp_weight_bytes,
        attn_total_bytes: attn_weight_bytes + kv_cache_bytes,
        total_model_bytes_per_device,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn llama3_8b() -> ModelConfig {
        find_model("llama3-8b").unwrap()
    }

    #[test]
    fn catalog_has_twelve_valid_models() {
        let catalog = builtin_catalog();
        assert_eq!(catalog.len(), 12);
        for model in &catalog {
            model.validate().unwrap();
        }
    }

    #[test]
    fn catalog_round_trips_through_json() {
        for model in builtin_catalog() {
            let text = serde_json::to_string(&model).unwrap();
            let back: ModelConfig = serde_json::from_str(&text).unwrap();
            back.validate().unwrap();
            assert_eq!(model, back);
        }
    }

    #[test]
    fn defaults_fill_missing_expert_fields() {
        let text = r#"{
            "name": "tiny", "hidden_size": 256, "num_layers": 2,
            "num_q_heads": 4, "num_kv_heads": 2, "head_dim": 64,
            "intermediate_size": 512, "vocab_size": 1000
        }"#;
        let config: ModelConfig = serde_json::from_str(text).unwrap();
        config.validate().unwrap();
        assert_eq!(config.num_experts, 1);
        assert_eq!(config.experts_per_token, 1);
        assert_eq!(config.weight_bytes_per_param, 1);
        assert_eq!(config.activation_bytes_per_elem, 1);
    }

    #[test]
    fn gqa_divisibility_is_enforced() {
        let mut config = llama3_8b();
        config.num_q_heads = 30;
        config.hidden_size = 30 * 128;
        let err = config.validate().unwrap_err();
        match err {
            ArchError::Validation { field, .. } => assert_eq!(field, "num_q_heads"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn mixtral_has_moe_fields() {
        let config = find_model("Mixtral-8x7B").unwrap();
        assert_eq!(config.num_experts, 8);
        assert_eq!(config.experts_per_token, 2);
    }

    #[test]
    fn shard_llama3_8b_tp4() {
        let sharded = shard(&llama3_8b(), 4).unwrap();
        assert_eq!(sharded.local_q_heads, 8);
        assert_eq!(sharded.local_kv_heads, 2);
        assert_eq!(sharded.local_intermediate, 3584);
        assert!(!sharded.kv_replicated);
    }

    #[test]
    fn shard_tp1_is_identity() {
        for model in builtin_catalog() {
            let sharded = shard(&model, 1).unwrap();
            assert_eq!(sharded.local_q_heads, model.num_q_heads);
            assert_eq!(sharded.local_kv_heads, model.num_kv_heads);
            assert_eq!(sharded.local_intermediate, model.intermediate_size);
            assert!(!sharded.kv_replicated);
        }
    }

    #[test]
    fn kv_heads_replicate_beyond_their_count() {
        let sharded = shard(&llama3_8b(), 32).unwrap();
        assert_eq!(sharded.local_kv_heads, 1);
        assert!(sharded.kv_replicated);
        // Llama3-70B at tp=8 lands exactly at one KV head per device.
        let seventy = find_model("Llama3-70B").unwrap();
        let sharded = shard(&seventy, 8).unwrap();
        assert_eq!(sharded.local_kv_heads, 1);
        assert!(!sharded.kv_replicated);
    }

    #[test]
    fn shard_rejects_indivisible_heads() {
        let err = shard(&llama3_8b(), 3).unwrap_err();
        match err {
            ArchError::Indivisible { dimension, .. } => assert_eq!(dimension, "num_q_heads"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn footprint_llama3_8b_tp4_matches_hand_derivation() {
        let sharded = shard(&llama3_8b(), 4).unwrap();
        let workload = Workload::standard(8, 16384);
        let report = layer_footprint(&sharded, &workload);
        assert_eq!(report.attn_weight_bytes, 10_485_760);
        assert_eq!(report.kv_cache_bytes, 67_108_864);
        assert_eq!(report.mlp_weight_bytes, 44_040_192);
        assert_eq!(report.attn_total_bytes, 10_485_760 + 67_108_864);
    }

    #[test]
    fn zero_batch_zeroes_kv_only() {
        let sharded = shard(&llama3_8b(), 4).unwrap();
        let with_batch = layer_footprint(&sharded, &Workload::standard(8, 16384));
        let without = layer_footprint(&sharded, &Workload::standard(0, 16384));
        assert_eq!(without.kv_cache_bytes, 0);
        assert_eq!(without.attn_weight_bytes, with_batch.attn_weight_bytes);
        assert_eq!(without.mlp_weight_bytes, with_batch.mlp_weight_bytes);
    }

    #[test]
    fn doubling_tp_halves_per_device_footprints() {
        let workload = Workload::standard(8, 16384);
        for model in builtin_catalog() {
            for tp in [1u64, 2, 4] {
                let double = tp * 2;
                if double > model.num_kv_heads
                    || model.num_q_heads % double != 0
                    || model.num_kv_heads % double != 0
                    || model.intermediate_size % double != 0
                {
                    continue;
                }
                let coarse = layer_footprint(&shard(&model, tp).unwrap(), &workload);
                let fine = layer_footprint(&shard(&model, double).unwrap(), &workload);
                assert_eq!(coarse.attn_weight_bytes, fine.attn_weight_bytes * 2);
                assert_eq!(coarse.kv_cache_bytes, fine.kv_cache_bytes * 2);
                assert_eq!(coarse.mlp_weight_bytes, fine.mlp_weight_bytes * 2);
            }
        }
    }

    #[test]
    fn kv_grows_with_batch_and_seq() {
        let sharded = shard(&llama3_8b(), 4).unwrap();
        let base = layer_footprint(&sharded, &Workload::standard(8, 8192));
        let more_batch = layer_footprint(&sharded, &Workload::standard(16, 8192));
        let more_seq = layer_footprint(&sharded, &Workload::standard(8, 16384));
        assert!(more_batch.kv_cache_bytes > base.kv_cache_bytes);
        assert!(more_seq.kv_cache_bytes > base.kv_cache_bytes);
        assert_eq!(more_batch.attn_weight_bytes, base.attn_weight_bytes);
        assert_eq!(more_seq.mlp_weight_bytes, base.mlp_weight_bytes);
    }

    #[test]
    fn workload_standard_split() {
        let workload = Workload::standard(4, 16384);
        assert_eq!(workload.prefill_len, 10923);
        assert_eq!(workload.decode_len, 5461);
        assert_eq!(workload.prefill_len + workload.decode_len, 16384);
        assert!(Workload::new(4, 100, 60, 30).is_err());
        for degenerate in [0, 1, 2] {
            let workload = Workload::standard(4, degenerate);
            assert_eq!(workload.prefill_len + workload.decode_len, degenerate);
        }
    }

    #[test]
    fn load_model_config_reads_files() {
        let dir = std::env::temp_dir().join("preserve-arch-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("llama3-8b.json");
        std::fs::write(&path, serde_json::to_string(&llama3_8b()).unwrap()).unwrap();
        let loaded = load_model_config(&path).unwrap();
        assert_eq!(loaded, llama3_8b());

        let bad = dir.join("bad.json");
        std::fs::write(&bad, "{not json").unwrap();
        assert!(matches!(
            load_model_config(&bad),
            Err(ArchError::Parse { .. })
        ));

        let mut invalid = llama3_8b();
        invalid.num_q_heads = 30;
        let path = dir.join("invalid.json");
        std::fs::write(&path, serde_json::to_string(&invalid).unwrap()).unwrap();
        assert!(matches!(
            load_model_config(&path),
            Err(ArchError::Validation {
                field: "num_q_heads",
                ..
            })
        ));
    }
}
