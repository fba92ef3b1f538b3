//! Shared fixtures for the pipeline benchmarks.

use preserve_core::arch::{find_model, shard, ModelConfig, ShardedModel, Workload};
use preserve_core::graph::{build_decode_layer, Graph};
use preserve_core::hw::{default_spec, ClusterSpec, HardwareSpec};
use preserve_core::pass::{insert_prefetch_ops, PassConfig};

pub struct Fixture {
    pub model: ModelConfig,
    pub sharded: ShardedModel,
    pub workload: Workload,
    pub spec: HardwareSpec,
    pub cluster: ClusterSpec,
    pub decode_graph: Graph,
    pub prefetched_graph: Graph,
}

/// Llama3-70B on 32 devices, batch 16, 8k tokens: the reference sweep point.
pub fn reference_point() -> Fixture {
    let model = find_model("Llama3-70B").expect("catalog model");
    let sharded = shard(&model, 32).expect("divisible");
    let workload = Workload::standard(16, 8192);
    let spec = default_spec();
    let decode_graph = build_decode_layer(&sharded, workload.batch, workload.max_seq_len);
    let (prefetched_graph, _) =
        insert_prefetch_ops(&decode_graph, &PassConfig::new(spec.l2_capacity))
            .expect("fresh graph");
    Fixture {
        model,
        sharded,
        workload,
        spec,
        cluster: ClusterSpec::ring(32),
        decode_graph,
        prefetched_graph,
    }
}
