//! Computation-graph IR for one tensor-parallel device: typed nodes,
//! dependency edges, and stream annotations, plus builders for decode and
//! prefill decoder layers.

use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::collections::VecDeque;
use thiserror::Error;

use crate::arch::ShardedModel;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph contains a cycle through nodes {0:?}")]
    Cycle(Vec<NodeId>),
    #[error("edge references missing node {0:?}")]
    MissingNode(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Execution stream a node is scheduled on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Main,
    Prefetch,
}

/// Operator kinds. Byte fields count the data the operator reads from
/// memory; flops count multiply-accumulates times two.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeKind {
    MatMul {
        weight_bytes: u64,
        flops: u64,
        activation_bytes: u64,
    },
    SelfAttention {
        kv_bytes: u64,
        flops: u64,
    },
    AllReduce {
        payload_bytes: u64,
    },
    /// Covers normalization, rotary embedding, and activation functions.
    Elementwise {
        bytes: u64,
        flops: u64,
    },
    Prefetch {
        target: NodeId,
        bytes: u64,
    },
}

impl NodeKind {
    pub fn is_allreduce(&self) -> bool {
        matches!(self, NodeKind::AllReduce { .. })
    }

    pub fn is_prefetch(&self) -> bool {
        matches!(self, NodeKind::Prefetch { .. })
    }

    /// True for the node kinds the prefetch pass targets.
    pub fn is_prefetchable(&self) -> bool {
        matches!(
            self,
            NodeKind::MatMul { .. } | NodeKind::SelfAttention { .. }
        )
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            NodeKind::MatMul { .. } => "mat_mul",
            NodeKind::SelfAttention { .. } => "self_attention",
            NodeKind::AllReduce { .. } => "all_reduce",
            NodeKind::Elementwise { .. } => "elementwise",
            NodeKind::Prefetch { .. } => "prefetch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    pub stream: Stream,
    pub label: String,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    nodes: Vec<Node>,
    edges: Vec<(NodeId, NodeId)>,
}

/// A DAG of operators. Edges run from producer to consumer; child lists
/// keep edge-insertion order, which the prefetch pass relies on for
/// deterministic breadth-first traversal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "GraphRepr", try_from = "GraphRepr")]
pub struct Graph {
    nodes: Vec<Node>,
    edges: Vec<(NodeId, NodeId)>,
    children: Vec<Vec<NodeId>>,
    parents: Vec<Vec<NodeId>>,
}

impl From<Graph> for GraphRepr {
    fn from(g: Graph) -> GraphRepr {
        GraphRepr {
            nodes: g.nodes,
            edges: g.edges,
        }
    }
}

impl TryFrom<GraphRepr> for Graph {
    type Error = GraphError;

    fn try_from(repr: GraphRepr) -> Result<Graph, GraphError> {
        let mut g = Graph::new();
        for node in repr.nodes {
            g.push_node(node);
        }
        for (p, c) in repr.edges {
            if p.0 >= g.nodes.len() {
                return Err(GraphError::MissingNode(p));
            }
            if c.0 >= g.nodes.len() {
                return Err(GraphError::MissingNode(c));
            }
            g.add_edge(p, c);
        }
        Ok(g)
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph {
            nodes: Vec::new(),
            edges: Vec::new(),
            children: Vec::new(),
            parents: Vec::new(),
        }
    }

    pub fn add_node(&mut self, kind: NodeKind, stream: Stream, label: impl Into<String>) -> NodeId {
        self.push_node(Node {
            kind,
            stream,
            label: label.into(),
        })
    }

    fn push_node(&mut self, node: Node) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(node);
        self.children.push(Vec::new());
        self.parents.push(Vec::new());
        id
    }

    pub fn add_edge(&mut self, producer: NodeId, consumer: NodeId) {
        assert!(
            producer.0 < self.nodes.len(),
            "producer {producer} out of bounds"
        );
        assert!(
            consumer.0 < self.nodes.len(),
            "consumer {consumer} out of bounds"
        );
        self.edges.push((producer, consumer));
        self.children[producer.0].push(consumer);
        self.parents[consumer.0].push(producer);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeId(i), n))
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.children[id.0]
    }

    pub fn parents(&self, id: NodeId) -> &[NodeId] {
        &self.parents[id.0]
    }

    /// Ids of all allreduce nodes, in id order.
    pub fn allreduce_ids(&self) -> Vec<NodeId> {
        self.nodes()
            .filter(|(_, n)| n.kind.is_allreduce())
            .map(|(id, _)| id)
            .collect()
    }

    pub fn find_label(&self, label: &str) -> Option<NodeId> {
        self.nodes()
            .find(|(_, n)| n.label == label)
            .map(|(id, _)| id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Graph, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Deterministic topological order: producers before consumers, ties broken
/// by ascending node id.
pub fn topo_order(graph: &Graph) -> Result<Vec<NodeId>, GraphError> {
    let mut indegree: Vec<usize> = graph.ids().map(|id| graph.parents(id).len()).collect();
    let mut ready: BinaryHeap<Reverse<usize>> = indegree
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(i, _)| Reverse(i))
        .collect();
    let mut order = Vec::with_capacity(graph.len());
    while let Some(Reverse(i)) = ready.pop() {
        let id = NodeId(i);
        order.push(id);
        for &child in graph.children(id) {
            indegree[child.0] -= 1;
            if indegree[child.0] == 0 {
                ready.push(Reverse(child.0));
            }
        }
    }
    if order.len() == graph.len() {
        Ok(order)
    } else {
        Err(GraphError::Cycle(find_cycle(graph)))
    }
}

/// Walk forward from an unfinished node until a node repeats, then return
/// the repeating segment.
fn find_cycle(graph: &Graph) -> Vec<NodeId> {
    let mut done = vec![false; graph.len()];
    let mut indegree: Vec<usize> = graph.ids().map(|id| graph.parents(id).len()).collect();
    let mut queue: VecDeque<NodeId> = graph
        .ids()
        .filter(|id| graph.parents(*id).is_empty())
        .collect();
    while let Some(id) = queue.pop_front() {
        done[id.0] = true;
        for &child in graph.children(id) {
            indegree[child.0] -= 1;
            if indegree[child.0] == 0 {
                queue.push_back(child);
            }
        }
    }
    let start = graph.ids().find(|id| !done[id.0]).expect("a cycle exists");
    let mut path = vec![start];
    let mut seen = vec![false; graph.len()];
    seen[start.0] = true;
    let mut current = start;
    loop {
        let next = graph
            .children(current)
            .iter()
            .copied()
            .find(|c| !done[c.0])
            .expect("cycle nodes have an unfinished child");
        if seen[next.0] {
            let pos = path.iter().position(|&n| n == next).unwrap();
            return path.split_off(pos);
        }
        seen[next.0] = true;
        path.push(next);
        current = next;
    }
}

/// A prefetch window: the main-stream nodes visited breadth-first from one
/// allreduce until the next allreduce (or the end of the graph).
#[derive(Debug, Clone)]
pub struct Window {
    pub allreduce: NodeId,
    /// Main-stream nodes in breadth-first visit order.
    pub members: Vec<NodeId>,
    /// The allreduce that terminated the window, if any.
    pub terminator: Option<NodeId>,
}

/// Compute the prefetch window of every allreduce node, in id order.
/// Prefetch nodes are transparent to the traversal.
pub fn allreduce_windows(graph: &Graph) -> Vec<Window> {
    graph
        .allreduce_ids()
        .into_iter()
        .map(|allreduce| {
            let mut members = Vec::new();
            let mut terminator = None;
            let mut visited = vec![false; graph.len()];
            let mut queue: VecDeque<NodeId> = VecDeque::new();
            for &child in graph.children(allreduce) {
                if graph.node(child).stream == Stream::Main && !visited[child.0] {
                    visited[child.0] = true;
                    queue.push_back(child);
                }
            }
            while let Some(id) = queue.pop_front() {
                if graph.node(id).kind.is_allreduce() {
                    terminator = Some(id);
                    break;
                }
                members.push(id);
                for &child in graph.children(id) {
                    if graph.node(child).stream == Stream::Main && !visited[child.0] {
                        visited[child.0] = true;
                        queue.push_back(child);
                    }
                }
            }
            Window {
                allreduce,
                members,
                terminator,
            }
        })
        .collect()
}

enum Phase {
    /// One autoregressive step over a cache of `kv_len` tokens.
    Decode { kv_len: u64 },
    /// Prompt processing over `prompt_len` tokens at once.
    Prefill { prompt_len: u64 },
}

/// Build the graph of one decode-step decoder layer (attention + MLP, two
/// allreduces).
pub fn build_decode_layer(sharded: &ShardedModel, batch: u64, kv_len: u64) -> Graph {
    assert!(kv_len >= 1, "kv_len must be >= 1");
    build_layer(sharded, batch, Phase::Decode { kv_len })
}

/// Build the graph of one prefill decoder layer: same topology as decode
/// with matmul flops and activation sizes scaled by the prompt length.
pub fn build_prefill_layer(sharded: &ShardedModel, batch: u64, prompt_len: u64) -> Graph {
    assert!(prompt_len >= 1, "prompt_len must be >= 1");
    build_layer(sharded, batch, Phase::Prefill { prompt_len })
}

fn build_layer(sharded: &ShardedModel, batch: u64, phase: Phase) -> Graph {
    let m = &sharded.base;
    let w = m.weight_bytes_per_param;
    let a = m.activation_bytes_per_elem;
    let hidden = m.hidden_size;
    let q_dim = sharded.local_q_dim();
    let kv_dim = sharded.local_kv_dim();
    let inter = sharded.local_intermediate;
    let experts = m.experts_per_token;

    // Tokens processed per step and the attention span.
    let (tokens, span) = match phase {
        Phase::Decode { kv_len } => (1, kv_len),
        Phase::Prefill { prompt_len } => (prompt_len, prompt_len),
    };

    let matmul = |in_dim: u64, out_dim: u64, expert_factor: u64| NodeKind::MatMul {
        weight_bytes: in_dim * out_dim * w * expert_factor,
        flops: 2 * batch * tokens * in_dim * out_dim * expert_factor,
        activation_bytes: batch * tokens * (in_dim + out_dim) * a,
    };
    let elementwise = |elems: u64| NodeKind::Elementwise {
        bytes: elems * a,
        flops: 10 * elems,
    };

    let mut g = Graph::new();
    let payload = batch * tokens * hidden * a;

    let ar_attn = g.add_node(
        NodeKind::AllReduce {
            payload_bytes: payload,
        },
        Stream::Main,
        "allreduce.attn",
    );
    let wq = g.add_node(matmul(hidden, q_dim, 1), Stream::Main, "attn.wq");
    let wk = g.add_node(matmul(hidden, kv_dim, 1), Stream::Main, "attn.wk");
    let wv = g.add_node(matmul(hidden, kv_dim, 1), Stream::Main, "attn.wv");
    let rotary = g.add_node(
        elementwise(batch * tokens * (q_dim + kv_dim)),
        Stream::Main,
        "attn.rotary",
    );
    let kernel = g.add_node(
        NodeKind::SelfAttention {
            kv_bytes: 2 * batch * span * kv_dim * a,
            flops: 2 * 2 * batch * sharded.local_q_heads * tokens * span * m.head_dim,
        },
        Stream::Main,
        "attn.kernel",
    );
    let wo = g.add_node(matmul(q_dim, hidden, 1), Stream::Main, "attn.wo");
    let ar_mlp = g.add_node(
        NodeKind::AllReduce {
            payload_bytes: payload,
        },
        Stream::Main,
        "allreduce.mlp",
    );
    let gate = g.add_node(matmul(hidden, inter, experts), Stream::Main, "mlp.gate");
    let up = g.add_node(matmul(hidden, inter, experts), Stream::Main, "mlp.up");
    let act = g.add_node(
        elementwise(2 * batch * tokens * inter * experts),
        Stream::Main,
        "mlp.act",
    );
    let down = g.add_node(matmul(inter, hidden, experts), Stream::Main, "mlp.down");

    g.add_edge(ar_attn, wq);
    g.add_edge(ar_attn, wk);
    g.add_edge(ar_attn, wv);
    g.add_edge(wq, rotary);
    g.add_edge(wk, rotary);
    g.add_edge(rotary, kernel);
    g.add_edge(wv, kernel);
    g.add_edge(kernel, wo);
    g.add_edge(wo, ar_mlp);
    g.add_edge(ar_mlp, gate);
    g.add_edge(ar_mlp, up);
    g.add_edge(gate, act);
    g.add_edge(up, act);
    g.add_edge(act, down);

    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{builtin_catalog, find_model, layer_footprint, shard, Workload};

    fn llama3_8b_tp4() -> ShardedModel {
        shard(&find_model("Llama3-8B").unwrap(), 4).unwrap()
    }

    #[test]
    fn decode_layer_structure() {
        let g = build_decode_layer(&llama3_8b_tp4(), 4, 8192);
        assert_eq!(g.len(), 12);
        assert_eq!(g.allreduce_ids().len(), 2);
        let gate = g.find_label("mlp.gate").unwrap();
        match g.node(gate).kind {
            NodeKind::MatMul { weight_bytes, .. } => assert_eq!(weight_bytes, 14_680_064),
            _ => panic!("mlp.gate is not a matmul"),
        }
        assert!(g.nodes().all(|(_, n)| n.stream == Stream::Main));
    }

    #[test]
    fn decode_kv_bytes_minimal_cache() {
        let sharded = llama3_8b_tp4();
        let g = build_decode_layer(&sharded, 1, 1);
        let kernel = g.find_label("attn.kernel").unwrap();
        match g.node(kernel).kind {
            NodeKind::SelfAttention { kv_bytes, .. } => {
                assert_eq!(kv_bytes, 2 * sharded.local_kv_heads * sharded.base.head_dim);
            }
            _ => panic!("attn.kernel is not self-attention"),
        }
    }

    #[test]
    fn topo_order_is_fig1_left_to_right() {
        let g = build_decode_layer(&llama3_8b_tp4(), 4, 8192);
        let order = topo_order(&g).unwrap();
        let labels: Vec<&str> = order.iter().map(|&id| g.node(id).label.as_str()).collect();
        assert_eq!(
            labels,
            [
                "allreduce.attn",
                "attn.wq",
                "attn.wk",
                "attn.wv",
                "attn.rotary",
                "attn.kernel",
                "attn.wo",
                "allreduce.mlp",
                "mlp.gate",
                "mlp.up",
                "mlp.act",
                "mlp.down"
            ]
        );
    }

    #[test]
    fn topo_order_empty_and_deterministic() {
        assert!(topo_order(&Graph::new()).unwrap().is_empty());

        // Same DAG assembled with edges in a different order sorts identically.
        let mut a = Graph::new();
        let n0 = a.add_node(
            NodeKind::Elementwise { bytes: 0, flops: 0 },
            Stream::Main,
            "a",
        );
        let n1 = a.add_node(
            NodeKind::Elementwise { bytes: 0, flops: 0 },
            Stream::Main,
            "b",
        );
        let n2 = a.add_node(
            NodeKind::Elementwise { bytes: 0, flops: 0 },
            Stream::Main,
            "c",
        );
        let mut b = a.clone();
        a.add_edge(n0, n2);
        a.add_edge(n1, n2);
        b.add_edge(n1, n2);
        b.add_edge(n0, n2);
        assert_eq!(topo_order(&a).unwrap(), topo_order(&b).unwrap());
    }

    #[test]
    fn topo_order_reports_cycles() {
        let mut g = Graph::new();
        let n0 = g.add_node(
            NodeKind::Elementwise { bytes: 0, flops: 0 },
            Stream::Main,
            "a",
        );
        let n1 = g.add_node(
            NodeKind::Elementwise { bytes: 0, flops: 0 },
            Stream::Main,
            "b",
        );
        g.add_edge(n0, n1);
        g.add_edge(n1, n0);
        match topo_order(&g) {
            Err(GraphError::Cycle(cycle)) => {
                assert_eq!(cycle.len(), 2);
            }
            other => panic!("expected cycle error, got {other:?}"),
        }
    }

    #[test]
    fn prefill_at_one_token_matches_decode_at_kv_one() {
        let sharded = llama3_8b_tp4();
        let decode = build_decode_layer(&sharded, 4, 1);
        let prefill = build_prefill_layer(&sharded, 4, 1);
        assert_eq!(decode, prefill);
    }

    #[test]
    fn prefill_flops_and_payload_scale_with_prompt() {
        let sharded = llama3_8b_tp4();
        let g = build_prefill_layer(&sharded, 1, 1024);
        let wq = g.find_label("attn.wq").unwrap();
        match g.node(wq).kind {
            NodeKind::MatMul { flops, .. } => {
                assert_eq!(flops, 2 * 1024 * 4096 * 1024);
            }
            _ => panic!("attn.wq is not a matmul"),
        }
        let ar = g.find_label("allreduce.attn").unwrap();
        match g.node(ar).kind {
            NodeKind::AllReduce { payload_bytes } => assert_eq!(payload_bytes, 1024 * 4096),
            _ => panic!("not an allreduce"),
        }
    }

    #[test]
    fn decode_weights_match_layer_footprint() {
        let workload = Workload::standard(8, 16384);
        for model in builtin_catalog() {
            let Ok(sharded) = shard(&model, 4) else {
                continue;
            };
            let g = build_decode_layer(&sharded, workload.batch, workload.max_seq_len);
            let report = layer_footprint(&sharded, &workload);
            let mut weights = 0;
            let mut kv = 0;
            for (_, node) in g.nodes() {
                match node.kind {
                    NodeKind::MatMul { weight_bytes, .. } => weights += weight_bytes,
                    NodeKind::SelfAttention { kv_bytes, .. } => kv += kv_bytes,
                    _ => {}
                }
            }
            assert_eq!(
                weights + kv,
                report.attn_total_bytes + report.mlp_weight_bytes,
                "graph/footprint mismatch for {}",
                model.name
            );
        }
    }

    #[test]
    fn windows_cover_the_layer() {
        let g = build_decode_layer(&llama3_8b_tp4(), 4, 8192);
        let windows = allreduce_windows(&g);
        assert_eq!(windows.len(), 2);
        let first: Vec<&str> = windows[0]
            .members
            .iter()
            .map(|&id| g.node(id).label.as_str())
            .collect();
        assert_eq!(
            first,
            [
                "attn.wq",
                "attn.wk",
                "attn.wv",
                "attn.rotary",
                "attn.kernel",
                "attn.wo"
            ]
        );
        assert_eq!(windows[0].terminator, g.find_label("allreduce.mlp"));
        let second: Vec<&str> = windows[1]
            .members
            .iter()
            .map(|&id| g.node(id).label.as_str())
            .collect();
        assert_eq!(second, ["mlp.gate", "mlp.up", "mlp.act", "mlp.down"]);
        assert_eq!(windows[1].terminator, None);
    }

    #[test]
    fn graph_json_round_trip() {
        let g = build_decode_layer(&llama3_8b_tp4(), 4, 8192);
        let text = g.to_json();
        let back = Graph::from_json(&text).unwrap();
        assert_eq!(g, back);
    }
}
