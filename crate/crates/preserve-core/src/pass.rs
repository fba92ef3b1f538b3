//! The prefetch-insertion graph rewrite: for every allreduce, walk its
//! window breadth-first and insert prefetch operators on the prefetch
//! stream while the accumulated tensor bytes stay under the L2 budget.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{allreduce_windows, topo_order, Graph, NodeId, NodeKind, Stream};

#[derive(Debug, Error)]
pub enum PassError {
    #[error("graph already contains prefetch nodes (node {0})")]
    AlreadyProcessed(NodeId),
    #[error("mem_size is only defined for matmul and self-attention nodes, got {0}")]
    NotPrefetchable(&'static str),
    #[error("pass verification failed: {0}")]
    Verify(String),
}

fn default_enabled() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassConfig {
    /// L2 budget in bytes available for prefetched tensors per window.
    pub l2_capacity: u64,
    #[serde(default = "default_enabled")]
    pub enabled: bool,
}

impl PassConfig {
    pub fn new(l2_capacity: u64) -> PassConfig {
        PassConfig {
            l2_capacity,
            enabled: true,
        }
    }

    pub fn disabled() -> PassConfig {
        PassConfig {
            l2_capacity: 0,
            enabled: false,
        }
    }
}

/// Why a window stopped accepting prefetches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NextAllreduce,
    EndOfGraph,
    Budget,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrefetchedNode {
    pub target: NodeId,
    pub target_label: String,
    pub prefetch: NodeId,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowReport {
    pub allreduce: NodeId,
    pub allreduce_label: String,
    pub prefetched: Vec<PrefetchedNode>,
    /// Sum of bytes over the inserted prefetches; strictly below the budget.
    pub cache_sum: u64,
    pub stopped: StopReason,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PassReport {
    pub windows: Vec<WindowReport>,
}

impl PassReport {
    /// All prefetched target ids across windows, in insertion order.
    pub fn targets(&self) -> Vec<NodeId> {
        self.windows
            .iter()
            .flat_map(|w| w.prefetched.iter().map(|p| p.target))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Bytes a prefetch of this node would move: weights for a matmul, the KV
/// cache for self-attention.
pub fn mem_size(kind: &NodeKind) -> Result<u64, PassError> {
    match kind {
        NodeKind::MatMul { weight_bytes, .. } => Ok(*weight_bytes),
        NodeKind::SelfAttention { kv_bytes, .. } => Ok(*kv_bytes),
        other => Err(PassError::NotPrefetchable(other.kind_name())),
    }
}

/// Insert prefetch operators into a copy of `graph`.
///
/// For each allreduce the window members are visited breadth-first. Every
/// matmul/self-attention node adds its bytes to the running window sum; a
/// prefetch operator is inserted while the sum stays strictly below the
/// budget, and the first overflow closes the window. Prefetch nodes are
/// anchored to the allreduce's producers so they become runnable exactly
/// when the allreduce does, and each target waits on its own prefetch.
pub fn insert_prefetch_ops(
    graph: &Graph,
    cfg: &PassConfig,
) -> Result<(Graph, PassReport), PassError> {
    if let Some((id, _)) = graph.nodes().find(|(_, n)| n.kind.is_prefetch()) {
        return Err(PassError::AlreadyProcessed(id));
    }
    let mut out = graph.clone();
    let mut report = PassReport::default();
    if !cfg.enabled {
        return Ok((out, report));
    }

    for window in allreduce_windows(graph) {
        let mut cache_sum_inserted = 0u64;
        let mut cache_sum = 0u64;
        let mut prefetched = Vec::new();
        let mut stopped = match window.terminator {
            Some(_) => StopReason::NextAllreduce,
            None => StopReason::EndOfGraph,
        };
        for &member in &window.members {
            let kind = &graph.node(member).kind;
            if !kind.is_prefetchable() {
                continue;
            }
            let bytes = mem_size(kind).expect("prefetchable kinds have a mem size");
            cache_sum += bytes;
            if cache_sum >= cfg.l2_capacity {
                stopped = StopReason::Budget;
                break;
            }
            let label = format!("prefetch.{}", graph.node(member).label);
            let prefetch = out.add_node(
                NodeKind::Prefetch {
                    target: member,
                    bytes,
                },
                Stream::Prefetch,
                label.clone(),
            );
            for &anchor in graph.parents(window.allreduce) {
                out.add_edge(anchor, prefetch);
            }
            out.add_edge(prefetch, member);
            cache_sum_inserted += bytes;
            prefetched.push(PrefetchedNode {
                target: member,
                target_label: graph.node(member).label.clone(),
                prefetch,
                bytes,
            });
        }
        report.windows.push(WindowReport {
            allreduce: window.allreduce,
            allreduce_label: graph.node(window.allreduce).label.clone(),
            prefetched,
            cache_sum: cache_sum_inserted,
            stopped,
        });
    }
    Ok((out, report))
}

/// Structural summary returned by a successful verification.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PassCheck {
    pub windows: usize,
    pub prefetches: usize,
}

/// Check that a pass output is sound with respect to its input:
/// the budget holds strictly per window, every prefetch precedes its target,
/// the graph stays acyclic, and erasing the prefetch stream recovers the
/// input graph exactly.
pub fn verify_pass(
    input: &Graph,
    output: &Graph,
    cfg: &PassConfig,
) -> Result<PassCheck, PassError> {
    let fail = |msg: String| Err(PassError::Verify(msg));

    if topo_order(output).is_err() {
        return fail("output graph contains a cycle".into());
    }

    // Main-stream preservation: output must contain the input nodes verbatim,
    // and the edges among them must be exactly the input edges.
    if output.len() < input.len() {
        return fail(format!(
            "output has {} nodes, fewer than the input's {}",
            output.len(),
            input.len()
        ));
    }
    for id in input.ids() {
        if input.node(id) != output.node(id) {
            return fail(format!("node {id} was modified by the pass"));
        }
    }
    for id in output.ids().skip(input.len()) {
        if !output.node(id).kind.is_prefetch() {
            return fail(format!("inserted node {id} is not a prefetch"));
        }
    }
    let mut input_edges: Vec<_> = input.edges().to_vec();
    let mut main_edges: Vec<_> = output
        .edges()
        .iter()
        .copied()
        .filter(|&(p, c)| p.0 < input.len() && c.0 < input.len())
        .collect();
    input_edges.sort();
    main_edges.sort();
    if input_edges != main_edges {
        return fail("edges among main nodes differ from the input graph".into());
    }

    // Per-prefetch checks.
    let mut prefetches = Vec::new();
    for (id, node) in output.nodes() {
        let NodeKind::Prefetch { target, bytes } = node.kind else {
            continue;
        };
        if node.stream != Stream::Prefetch {
            return fail(format!("prefetch {id} is not on the prefetch stream"));
        }
        let outgoing = output.children(id);
        if outgoing != [target] {
            return fail(format!(
                "prefetch {id} must have exactly one outgoing edge to its target {target}, found {outgoing:?}"
            ));
        }
        let target_kind = &output.node(target).kind;
        if !target_kind.is_prefetchable() {
            return fail(format!(
                "prefetch {id} targets a {} node",
                target_kind.kind_name()
            ));
        }
        let expected = mem_size(target_kind).expect("prefetchable");
        if bytes != expected {
            return fail(format!(
                "prefetch {id} carries {bytes} bytes but its target reads {expected}"
            ));
        }
        prefetches.push((id, target, bytes));
    }

    // Window budget and isolation, recomputed from the main-stream structure.
    let windows = allreduce_windows(output);
    let mut window_of = vec![None; output.len()];
    for (w, window) in windows.iter().enumerate() {
        for &member in &window.members {
            window_of[member.0].get_or_insert(w);
        }
    }
    let mut sums = vec![0u64; windows.len()];
    for &(id, target, bytes) in &prefetches {
        match window_of[target.0] {
            Some(w) => sums[w] += bytes,
            None => {
                return fail(format!(
                    "prefetch {id} targets {target}, which lies outside every allreduce window"
                ))
            }
        }
    }
    for (w, window) in windows.iter().enumerate() {
        if sums[w] > 0 && sums[w] >= cfg.l2_capacity {
            return fail(format!(
                "window of allreduce {} prefetches {} bytes, not strictly below the budget {}",
                window.allreduce, sums[w], cfg.l2_capacity
            ));
        }
    }

    Ok(PassCheck {
        windows: windows.len(),
        prefetches: prefetches.len(),
    })
}
