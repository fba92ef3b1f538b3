//! Shared deterministic generators for randomized structural tests.
//!
//! Not every test target uses every generator.
#![allow(dead_code)]

use preserve_core::arch::{builtin_catalog, shard, ModelConfig, ShardedModel};
use preserve_core::graph::{Graph, NodeId, NodeKind, Stream};

/// Small, dependency-free xorshift generator so randomized tests replay
/// identically everywhere.
pub struct XorShift(u64);

impl XorShift {
    pub fn new(seed: u64) -> XorShift {
        XorShift((seed + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }

    pub fn chance(&mut self, one_in: u64) -> bool {
        self.below(one_in) == 0
    }
}

pub const MB: u64 = 1_000_000;

fn random_body_kind(rng: &mut XorShift, max_tensor: u64) -> NodeKind {
    match rng.below(3) {
        0 => NodeKind::MatMul {
            weight_bytes: rng.below(max_tensor),
            flops: rng.below(1 << 30),
            activation_bytes: rng.below(1 << 20),
        },
        1 => NodeKind::SelfAttention {
            kv_bytes: rng.below(max_tensor),
            flops: rng.below(1 << 30),
        },
        _ => NodeKind::Elementwise {
            bytes: rng.below(1 << 22),
            flops: rng.below(1 << 22),
        },
    }
}

/// A randomized decoder-layer-shaped graph: one to four allreduce-anchored
/// windows whose bodies are chains with occasional two-wide diamonds.
pub fn random_layer_graph(rng: &mut XorShift) -> Graph {
    let mut g = Graph::new();
    let windows = 1 + rng.below(4);
    let mut prev: Option<NodeId> = None;
    let mut next_label = 0usize;
    let mut label = |prefix: &str| {
        next_label += 1;
        format!("{prefix}{next_label}")
    };
    for _ in 0..windows {
        let ar = g.add_node(
            NodeKind::AllReduce {
                payload_bytes: rng.below(1 << 20),
            },
            Stream::Main,
            label("ar"),
        );
        if let Some(p) = prev {
            g.add_edge(p, ar);
        }
        let mut tail = ar;
        for _ in 0..1 + rng.below(5) {
            if rng.chance(4) {
                let a = g.add_node(random_body_kind(rng, 200 * MB), Stream::Main, label("n"));
                let b = g.add_node(random_body_kind(rng, 200 * MB), Stream::Main, label("n"));
                let join = g.add_node(random_body_kind(rng, 200 * MB), Stream::Main, label("n"));
                g.add_edge(tail, a);
                g.add_edge(tail, b);
                g.add_edge(a, join);
                g.add_edge(b, join);
                tail = join;
            } else {
                let n = g.add_node(random_body_kind(rng, 200 * MB), Stream::Main, label("n"));
                g.add_edge(tail, n);
                tail = n;
            }
        }
        prev = Some(tail);
    }
    g
}

/// A random main-stream DAG with at most seven nodes and at most five
/// prefetchable ones, so a pass output stays within the brute-force
/// scheduler's twelve-node cap. Extra forward edges create parallel slack.
pub fn random_small_graph(rng: &mut XorShift) -> Graph {
    let nodes = 3 + rng.below(5);
    let mut g = Graph::new();
    let mut prefetchable = 0;
    let mut ids = Vec::new();
    for i in 0..nodes {
        let kind = if i > 0 && rng.chance(4) {
            NodeKind::AllReduce {
                payload_bytes: rng.below(1 << 22),
            }
        } else {
            let mut kind = random_body_kind(rng, 64 * MB);
            if prefetchable >= 5 && kind.is_prefetchable() {
                kind = NodeKind::Elementwise {
                    bytes: rng.below(1 << 22),
                    flops: rng.below(1 << 22),
                };
            }
            if kind.is_prefetchable() {
                prefetchable += 1;
            }
            kind
        };
        let id = g.add_node(kind, Stream::Main, format!("n{i}"));
        ids.push(id);
    }
    for i in 1..ids.len() {
        g.add_edge(ids[i - 1], ids[i]);
    }
    for i in 0..ids.len() {
        for j in i + 2..ids.len() {
            if rng.chance(5) {
                g.add_edge(ids[i], ids[j]);
            }
        }
    }
    g
}

/// Sum of all prefetchable tensor bytes in a graph.
pub fn total_prefetchable_bytes(g: &Graph) -> u64 {
    g.nodes()
        .filter_map(|(_, n)| preserve_core::pass::mem_size(&n.kind).ok())
        .sum()
}

/// The largest tensor-parallel degree in {8, 4, 2, 1} a model shards to
/// cleanly (including its KV heads).
pub fn test_tp(model: &ModelConfig) -> ShardedModel {
    for tp in [8, 4, 2, 1] {
        if let Ok(sharded) = shard(model, tp) {
            return sharded;
        }
    }
    unreachable!("every model shards at tp=1")
}

/// Catalog decode-layer graphs at a representative shardable degree.
pub fn catalog_decode_graphs() -> Vec<(String, Graph)> {
    builtin_catalog()
        .iter()
        .map(|model| {
            let sharded = test_tp(model);
            let graph = preserve_core::graph::build_decode_layer(&sharded, 8, 16384);
            (model.name.clone(), graph)
        })
        .collect()
}
