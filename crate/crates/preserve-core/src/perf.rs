//! Analytical per-operation latency (roofline), ring-allreduce latency, and
//! a deterministic two-stream timeline scheduler with L2 residency tracking.
//!
//! Compute time is flops over peak throughput; data movement is bytes over
//! the effective bandwidth, which is the L2 bus for resident tensors and HBM
//! otherwise. Whole-layer timelines compose into end-to-end inference
//! latency by layer count and decode-step integration.

use serde::Serialize;
use thiserror::Error;

use crate::arch::{shard, ArchError, ModelConfig, Workload};
use crate::graph::{
    allreduce_windows, build_decode_layer, build_prefill_layer, topo_order, Graph, GraphError,
    NodeId, NodeKind, Stream,
};
use crate::hw::{check_capacity, ClusterSpec, Feasibility, HardwareSpec};
use crate::pass::{insert_prefetch_ops, PassConfig, PassError};

#[derive(Debug, Error)]
pub enum PerfError {
    #[error("op_latency is undefined for allreduce nodes")]
    AllReduceOpLatency,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Pass(#[from] PassError),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error("infeasible configuration: {0}")]
    Infeasible(Feasibility),
    #[error("L2 residency overflow: peak {peak} bytes exceeds capacity {capacity}")]
    ResidencyOverflow { peak: u64, capacity: u64 },
    #[error("brute-force oracle is capped at {max} nodes, graph has {actual}")]
    GraphTooLarge { max: usize, actual: usize },
    #[error("brute-force oracle found schedules that disagree")]
    DivergentSchedules,
}

/// Modeling knobs that the reference numbers do not pin down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Allreduce transfer-volume factor. `None` applies the ring factor
    /// 2(N-1)/N; `Some(f)` uses `f` (1.0 recovers plain size/bandwidth).
    pub ring_factor: Option<f64>,
    /// Activation traffic folded into the memory term of compute ops.
    pub activation_overhead: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            ring_factor: None,
            activation_overhead: 0.10,
        }
    }
}

/// Prefetched tensors currently held in L2.
#[derive(Debug, Default, Clone)]
pub struct Residency {
    resident: std::collections::BTreeMap<NodeId, u64>,
    used: u64,
    peak: u64,
}

impl Residency {
    pub fn insert(&mut self, target: NodeId, bytes: u64) {
        if let Some(prev) = self.resident.insert(target, bytes) {
            self.used -= prev;
        }
        self.used += bytes;
        self.peak = self.peak.max(self.used);
    }

    pub fn evict(&mut self, target: NodeId) {
        if let Some(bytes) = self.resident.remove(&target) {
            self.used -= bytes;
        }
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn peak(&self) -> u64 {
        self.peak
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub stream: Stream,
}

/// Per-window latency decomposition of a scheduled layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowTiming {
    pub window: String,
    pub allreduce_s: f64,
    pub prefetch_s: f64,
    pub compute_s: f64,
}

/// One trace event per node, in microseconds, for trace viewers.
#[derive(Debug, Clone, Serialize)]
pub struct TraceEvent {
    pub name: String,
    pub start_us: f64,
    pub dur_us: f64,
    pub stream: Stream,
}

/// Scheduled intervals for every node of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub intervals: Vec<Interval>,
    pub total: f64,
    pub windows: Vec<WindowTiming>,
    pub peak_residency: u64,
}

impl Timeline {
    pub fn duration(&self, id: NodeId) -> f64 {
        let iv = &self.intervals[id.0];
        iv.end - iv.start
    }

    pub fn trace_events(&self, graph: &Graph) -> Vec<TraceEvent> {
        graph
            .nodes()
            .map(|(id, node)| TraceEvent {
                name: node.label.clone(),
                start_us: self.intervals[id.0].start * 1e6,
                dur_us: self.duration(id) * 1e6,
                stream: node.stream,
            })
            .collect()
    }

    pub fn trace_json(&self, graph: &Graph) -> String {
        serde_json::to_string_pretty(&self.trace_events(graph))
            .expect("trace serialization cannot fail")
    }

    /// Per-window CSV: window,allreduce_us,prefetch_us,compute_us.
    pub fn decomposition_csv(&self) -> String {
        let mut out = String::from("window,allreduce_us,prefetch_us,compute_us\n");
        for w in &self.windows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                w.window,
                crate::report::fmt_sig6(w.allreduce_s * 1e6),
                crate::report::fmt_sig6(w.prefetch_s * 1e6),
                crate::report::fmt_sig6(w.compute_s * 1e6),
            ));
        }
        out
    }

    pub fn window(&self, name: &str) -> Option<&WindowTiming> {
        self.windows.iter().find(|w| w.window == name)
    }
}

/// Latency evaluator for one accelerator/cluster design point.
#[derive(Debug, Clone)]
pub struct PerfModel {
    pub spec: HardwareSpec,
    pub cluster: ClusterSpec,
    pub opts: SimOptions,
}

impl PerfModel {
    pub fn new(spec: HardwareSpec, cluster: ClusterSpec) -> PerfModel {
        PerfModel {
            spec,
            cluster,
            opts: SimOptions::default(),
        }
    }

    pub fn with_options(mut self, opts: SimOptions) -> PerfModel {
        self.opts = opts;
        self
    }

    /// Roofline latency of one non-allreduce operator.
    ///
    /// `resident` selects the L2 bus bandwidth over HBM for the tensor a
    /// matmul or self-attention reads. Prefetches always stream from HBM
    /// and carry no activation overhead.
    pub fn op_latency(&self, kind: &NodeKind, resident: bool) -> Result<f64, PerfError> {
        let overhead = 1.0 + self.opts.activation_overhead;
        let (read_bytes, flops, overheaded, always_hbm) = match kind {
            NodeKind::AllReduce { .. } => return Err(PerfError::AllReduceOpLatency),
            NodeKind::MatMul {
                weight_bytes,
                flops,
                ..
            } => (*weight_bytes, *flops, true, false),
            NodeKind::SelfAttention { kv_bytes, flops } => (*kv_bytes, *flops, true, false),
            NodeKind::Elementwise { bytes, flops } => (*bytes, *flops, true, false),
            NodeKind::Prefetch { bytes, .. } => (*bytes, 0, false, true),
        };
        let bw = if resident && !always_hbm {
            self.spec.l2_bw
        } else {
            self.spec.hbm_bw
        };
        let mem = read_bytes as f64 / bw * if overheaded { overhead } else { 1.0 };
        let compute = flops as f64 / self.spec.peak_throughput;
        Ok(compute.max(mem))
    }

    /// Ring-allreduce latency: zero on a single device, otherwise the link
    /// latency plus the transfer volume over the link bandwidth.
    pub fn allreduce_latency(&self, payload_bytes: u64) -> f64 {
        let n = self.cluster.num_devices;
        if n <= 1 {
            return 0.0;
        }
        let factor = self
            .opts
            .ring_factor
            .unwrap_or(2.0 * (n as f64 - 1.0) / n as f64);
        self.spec.link_latency + factor * payload_bytes as f64 / self.spec.link_bw
    }

    fn node_latency(&self, kind: &NodeKind, resident: bool) -> Result<f64, PerfError> {
        match kind {
            NodeKind::AllReduce { payload_bytes } => Ok(self.allreduce_latency(*payload_bytes)),
            other => self.op_latency(other, resident),
        }
    }

    /// True for nodes whose tensor is resident when they start: exactly the
    /// targets of prefetch nodes, whose completion each target waits on.
    fn resident_targets(&self, graph: &Graph) -> Vec<bool> {
        let mut resident = vec![false; graph.len()];
        for (_, node) in graph.nodes() {
            if let NodeKind::Prefetch { target, .. } = node.kind {
                resident[target.0] = true;
            }
        }
        resident
    }

    /// Deterministic list scheduling: each stream runs its nodes in
    /// topological order; a node starts once its stream is free and all its
    /// producers have finished.
    pub fn simulate_layer(&self, graph: &Graph) -> Result<Timeline, PerfError> {
        let order = topo_order(graph)?;
        let resident = self.resident_targets(graph);
        let mut intervals = vec![
            Interval {
                start: 0.0,
                end: 0.0,
                stream: Stream::Main
            };
            graph.len()
        ];
        let mut tails = [0.0f64; 2];
        for id in order {
            let node = graph.node(id);
            let lane = match node.stream {
                Stream::Main => 0,
                Stream::Prefetch => 1,
            };
            let mut start = tails[lane];
            for &p in graph.parents(id) {
                start = start.max(intervals[p.0].end);
            }
            let end = start + self.node_latency(&node.kind, resident[id.0])?;
            intervals[id.0] = Interval {
                start,
                end,
                stream: node.stream,
            };
            tails[lane] = end;
        }
        self.assemble_timeline(graph, intervals)
    }

    /// Exhaustive event-driven oracle for small graphs: explores every order
    /// in which ready stream heads can be committed and checks that all of
    /// them produce the same schedule.
    pub fn brute_force_schedule(&self, graph: &Graph) -> Result<Timeline, PerfError> {
        const MAX_NODES: usize = 12;
        if graph.len() > MAX_NODES {
            return Err(PerfError::GraphTooLarge {
                max: MAX_NODES,
                actual: graph.len(),
            });
        }
        let order = topo_order(graph)?;
        let resident = self.resident_targets(graph);
        let mut durations = vec![0.0f64; graph.len()];
        for id in graph.ids() {
            durations[id.0] = self.node_latency(&graph.node(id).kind, resident[id.0])?;
        }
        let queues: [Vec<NodeId>; 2] = [
            order
                .iter()
                .copied()
                .filter(|&id| graph.node(id).stream == Stream::Main)
                .collect(),
            order
                .iter()
                .copied()
                .filter(|&id| graph.node(id).stream == Stream::Prefetch)
                .collect(),
        ];

        struct Search<'a> {
            graph: &'a Graph,
            queues: &'a [Vec<NodeId>; 2],
            durations: &'a [f64],
            ends: Vec<Option<f64>>,
            starts: Vec<f64>,
            tails: [f64; 2],
            heads: [usize; 2],
            outcomes: Vec<(Vec<f64>, Vec<f64>)>,
        }

        impl Search<'_> {
            fn ready(&self, lane: usize) -> bool {
                let Some(&id) = self.queues[lane].get(self.heads[lane]) else {
                    return false;
                };
                self.graph
                    .parents(id)
                    .iter()
                    .all(|p| self.ends[p.0].is_some())
            }

            fn run(&mut self) {
                let candidates: Vec<usize> = (0..2).filter(|&lane| self.ready(lane)).collect();
                if candidates.is_empty() {
                    debug_assert!(
                        self.heads[0] == self.queues[0].len()
                            && self.heads[1] == self.queues[1].len(),
                        "two-stream schedule deadlocked"
                    );
                    self.outcomes.push((
                        self.starts.clone(),
                        self.ends.iter().map(|e| e.unwrap()).collect(),
                    ));
                    return;
                }
                for lane in candidates {
                    let id = self.queues[lane][self.heads[lane]];
                    let mut start = self.tails[lane];
                    for &p in self.graph.parents(id) {
                        start = start.max(self.ends[p.0].unwrap());
                    }
                    let end = start + self.durations[id.0];
                    let saved_tail = self.tails[lane];
                    self.tails[lane] = end;
                    self.heads[lane] += 1;
                    self.ends[id.0] = Some(end);
                    self.starts[id.0] = start;
                    self.run();
                    self.ends[id.0] = None;
                    self.heads[lane] -= 1;
                    self.tails[lane] = saved_tail;
                }
            }
        }

        let mut search = Search {
            graph,
            queues: &queues,
            durations: &durations,
            ends: vec![None; graph.len()],
            starts: vec![0.0; graph.len()],
            tails: [0.0; 2],
            heads: [0, 0],
            outcomes: Vec::new(),
        };
        search.run();

        let (starts, ends) = search.outcomes.first().cloned().unwrap_or_default();
        let agree = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-30);
        for (s, e) in &search.outcomes {
            let same = s.iter().zip(&starts).all(|(&a, &b)| agree(a, b))
                && e.iter().zip(&ends).all(|(&a, &b)| agree(a, b));
            if !same {
                return Err(PerfError::DivergentSchedules);
            }
        }
        let intervals = graph
            .ids()
            .map(|id| Interval {
                start: starts[id.0],
                end: ends[id.0],
                stream: graph.node(id).stream,
            })
            .collect();
        self.assemble_timeline(graph, intervals)
    }

    /// Shared residency accounting, window decomposition, and invariant
    /// checks over a set of scheduled intervals.
    fn assemble_timeline(
        &self,
        graph: &Graph,
        intervals: Vec<Interval>,
    ) -> Result<Timeline, PerfError> {
        for &(p, c) in graph.edges() {
            debug_assert!(
                intervals[p.0].end <= intervals[c.0].start,
                "dependency violated: {p} ends after {c} starts"
            );
        }

        // Replay prefetch arrivals and single-use evictions in time order;
        // evictions precede insertions at equal timestamps.
        let mut events: Vec<(f64, i64, NodeId)> = Vec::new();
        for (id, node) in graph.nodes() {
            if let NodeKind::Prefetch { target, bytes } = node.kind {
                events.push((intervals[id.0].end, bytes as i64, target));
                events.push((intervals[target.0].end, -(bytes as i64), target));
            }
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut residency = Residency::default();
        for (_, delta, target) in events {
            if delta >= 0 {
                residency.insert(target, delta as u64);
            } else {
                residency.evict(target);
            }
        }
        if residency.peak() > self.spec.l2_capacity {
            return Err(PerfError::ResidencyOverflow {
                peak: residency.peak(),
                capacity: self.spec.l2_capacity,
            });
        }

        let mut prefetch_of_target: Vec<Vec<NodeId>> = vec![Vec::new(); graph.len()];
        for (id, node) in graph.nodes() {
            if let NodeKind::Prefetch { target, .. } = node.kind {
                prefetch_of_target[target.0].push(id);
            }
        }
        let duration = |id: NodeId| intervals[id.0].end - intervals[id.0].start;
        let windows = allreduce_windows(graph)
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let label = graph.node(w.allreduce).label.as_str();
                let window = match label.strip_prefix("allreduce.") {
                    Some("attn") => "attn".to_string(),
                    Some("mlp") => "ffn".to_string(),
                    Some(other) => other.to_string(),
                    None => format!("w{i}"),
                };
                WindowTiming {
                    window,
                    allreduce_s: duration(w.allreduce),
                    prefetch_s: w
                        .members
                        .iter()
                        .flat_map(|m| prefetch_of_target[m.0].iter())
                        .map(|&p| duration(p))
                        .fold(0.0, |acc, d| acc + d),
                    compute_s: w
                        .members
                        .iter()
                        .map(|&m| duration(m))
                        .fold(0.0, |acc, d| acc + d),
                }
            })
            .collect();

        let total = intervals.iter().map(|iv| iv.end).fold(0.0, f64::max);
        Ok(Timeline {
            intervals,
            total,
            windows,
            peak_residency: residency.peak(),
        })
    }
}

/// End-to-end inference latency and its phase breakdown.
#[derive(Debug, Clone)]
pub struct EndToEnd {
    pub total_s: f64,
    pub prefill_s: f64,
    pub decode_s: f64,
    /// Timeline of a single prefill layer.
    pub prefill_layer: Timeline,
    /// Timeline of a single decode layer at the final (largest) KV length.
    pub last_decode_layer: Timeline,
}

/// Latency of one full inference: prefill over the prompt, then
/// `decode_len` autoregressive steps with a growing KV cache.
///
/// Layers are structurally identical, so one layer is simulated and scaled
/// by the layer count. Decode steps are sampled at 16 evenly spaced KV
/// lengths and trapezoid-integrated; short generations are summed exactly.
pub fn end_to_end_latency(
    model: &ModelConfig,
    cluster: &ClusterSpec,
    spec: &HardwareSpec,
    workload: &Workload,
    prefetch_enabled: bool,
    opts: &SimOptions,
) -> Result<EndToEnd, PerfError> {
    let feasibility = check_capacity(model, cluster, workload, spec);
    if !feasibility.is_feasible() {
        return Err(PerfError::Infeasible(feasibility));
    }
    let sharded = shard(model, cluster.num_devices)?;
    let perf = PerfModel::new(spec.clone(), *cluster).with_options(*opts);
    let pass_cfg = PassConfig {
        l2_capacity: spec.l2_capacity,
        enabled: prefetch_enabled,
    };
    let layers = model.num_layers as f64;

    let simulate = |graph: &Graph| -> Result<Timeline, PerfError> {
        let (with_prefetch, _) = insert_prefetch_ops(graph, &pass_cfg)?;
        perf.simulate_layer(&with_prefetch)
    };

    let prefill_layer = simulate(&build_prefill_layer(
        &sharded,
        workload.batch,
        workload.prefill_len,
    ))?;
    let prefill_s = layers * prefill_layer.total;

    let decode_step = |step: u64| -> Result<f64, PerfError> {
        let graph = build_decode_layer(&sharded, workload.batch, workload.prefill_len + step);
        Ok(layers * simulate(&graph)?.total)
    };

    let steps = workload.decode_len;
    let decode_s = if steps == 0 {
        0.0
    } else if steps <= 16 {
        let mut sum = 0.0;
        for step in 1..=steps {
            sum += decode_step(step)?;
        }
        sum
    } else {
        // 16 samples over step in [1, steps]; the trapezoid approximates the
        // integral and the half-weight end terms correct it to the discrete
        // per-step sum.
        let span = (steps - 1) as f64;
        let mut samples = Vec::with_capacity(16);
        for k in 0..16u32 {
            let step = 1.0 + span * k as f64 / 15.0;
            samples.push(decode_step(step.round() as u64)?);
        }
        let h = span / 15.0;
        let interior: f64 = samples[1..15].iter().sum();
        let trapezoid = h * (samples[0] / 2.0 + interior + samples[15] / 2.0);
        trapezoid + (samples[0] + samples[15]) / 2.0
    };

    let last_decode_layer = simulate(&build_decode_layer(
        &sharded,
        workload.batch,
        workload.max_seq_len,
    ))?;

    Ok(EndToEnd {
        total_s: prefill_s + decode_s,
        prefill_s,
        decode_s,
        prefill_layer,
        last_decode_layer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::find_model;
    use crate::hw::default_spec;

    const MB: u64 = 1_000_000;

    fn model_at(n: u64) -> PerfModel {
        PerfModel::new(default_spec(), ClusterSpec::ring(n))
    }

    #[test]
    fn op_latency_roofline_cases() {
        let perf = model_at(4);
        let matmul = NodeKind::MatMul {
            weight_bytes: 14_680_064,
            flops: 117_440_512,
            activation_bytes: 0,
        };
        let hbm = perf.op_latency(&matmul, false).unwrap();
        assert_eq!(
            hbm,
            (117_440_512.0f64 / 800e12).max(14_680_064.0 / 1.84e12 * 1.1)
        );
        assert!((hbm - 8.776e-6).abs() < 0.01e-6);
        let l2 = perf.op_latency(&matmul, true).unwrap();
        assert_eq!(
            l2,
            (117_440_512.0f64 / 800e12).max(14_680_064.0 / 12e12 * 1.1)
        );
        assert!((l2 - 1.346e-6).abs() < 0.01e-6);

        let nothing = NodeKind::Elementwise { bytes: 0, flops: 0 };
        assert_eq!(perf.op_latency(&nothing, false).unwrap(), 0.0);
        assert!(matches!(
            perf.op_latency(&NodeKind::AllReduce { payload_bytes: 1 }, false),
            Err(PerfError::AllReduceOpLatency)
        ));
    }

    #[test]
    fn prefetch_reads_raw_hbm_bandwidth() {
        let perf = model_at(4);
        let prefetch = NodeKind::Prefetch {
            target: NodeId(0),
            bytes: 1_840_000,
        };
        let lat = perf.op_latency(&prefetch, true).unwrap();
        assert_eq!(lat, 1_840_000.0 / 1.84e12);
    }

    #[test]
    fn allreduce_latency_cases() {
        let perf = model_at(4);
        assert_eq!(perf.allreduce_latency(0), 25e-6);
        assert_eq!(model_at(1).allreduce_latency(123_456), 0.0);
        let lat = perf.allreduce_latency(16_384);
        assert_eq!(lat, 25e-6 + 1.5 * 16_384.0 / 2.5e10);
        assert!((lat - 25.98e-6).abs() < 0.01e-6);

        let fixed = PerfModel::new(default_spec(), ClusterSpec::ring(4)).with_options(SimOptions {
            ring_factor: Some(1.0),
            activation_overhead: 0.10,
        });
        assert_eq!(fixed.allreduce_latency(16_384), 25e-6 + 16_384.0 / 2.5e10);
    }

    #[test]
    fn serial_graph_sums_main_latencies() {
        let sharded = shard(&find_model("Llama3-8B").unwrap(), 4).unwrap();
        let graph = build_decode_layer(&sharded, 4, 8192);
        let perf = model_at(4);
        let timeline = perf.simulate_layer(&graph).unwrap();
        let sum: f64 = graph.ids().map(|id| timeline.duration(id)).sum();
        assert!((timeline.total - sum).abs() < 1e-15 * sum.abs().max(1.0));
        assert_eq!(timeline.peak_residency, 0);
    }

    #[test]
    fn consumer_waits_for_allreduce_or_its_prefetch() {
        // One window: allreduce, one matmul consumer, prefetch inserted.
        let mut g = Graph::new();
        let ar = g.add_node(
            NodeKind::AllReduce { payload_bytes: 0 },
            Stream::Main,
            "allreduce.attn",
        );
        let bytes_small = 18_400_000u64; // 10 us prefetch
        let m = g.add_node(
            NodeKind::MatMul {
                weight_bytes: bytes_small,
                flops: 0,
                activation_bytes: 0,
            },
            Stream::Main,
            "m",
        );
        g.add_edge(ar, m);
        let cfg = PassConfig::new(400 * MB);
        let (with_prefetch, _) = insert_prefetch_ops(&g, &cfg).unwrap();
        let perf = model_at(4);
        let timeline = perf.simulate_layer(&with_prefetch).unwrap();
        // Prefetch (10 us) finishes inside the 25 us allreduce.
        assert_eq!(timeline.intervals[m.0].start, 25e-6);
        let resident_read = 1.1 * bytes_small as f64 / 12e12;
        assert!((timeline.total - (25e-6 + resident_read)).abs() < 1e-18);

        // A prefetch longer than the allreduce delays its consumer.
        let bytes_large = 73_600_000u64; // 40 us prefetch
        let mut g2 = Graph::new();
        let ar = g2.add_node(
            NodeKind::AllReduce { payload_bytes: 0 },
            Stream::Main,
            "allreduce.attn",
        );
        let m2 = g2.add_node(
            NodeKind::MatMul {
                weight_bytes: bytes_large,
                flops: 0,
                activation_bytes: 0,
            },
            Stream::Main,
            "m",
        );
        g2.add_edge(ar, m2);
        let (with_prefetch, _) = insert_prefetch_ops(&g2, &cfg).unwrap();
        let timeline = perf.simulate_layer(&with_prefetch).unwrap();
        assert_eq!(timeline.intervals[m2.0].start, 40e-6);
    }

    #[test]
    fn residency_is_tracked_and_bounded() {
        let sharded = shard(&find_model("Llama3-8B").unwrap(), 4).unwrap();
        let graph = build_decode_layer(&sharded, 4, 8192);
        let (with_prefetch, report) =
            insert_prefetch_ops(&graph, &PassConfig::new(192 * MB)).unwrap();
        let perf = model_at(4);
        let timeline = perf.simulate_layer(&with_prefetch).unwrap();
        let max_window = report
            .windows
            .iter()
            .map(|w| w.cache_sum)
            .max()
            .unwrap_or(0);
        assert!(timeline.peak_residency > 0);
        assert!(timeline.peak_residency <= max_window);
    }

    #[test]
    fn windows_are_labeled_attn_and_ffn() {
        let sharded = shard(&find_model("Llama3-8B").unwrap(), 4).unwrap();
        let graph = build_decode_layer(&sharded, 4, 8192);
        let perf = model_at(4);
        let timeline = perf.simulate_layer(&graph).unwrap();
        let names: Vec<&str> = timeline.windows.iter().map(|w| w.window.as_str()).collect();
        assert_eq!(names, ["attn", "ffn"]);
        assert!(timeline.window("attn").unwrap().allreduce_s > 0.0);
    }

    #[test]
    fn brute_force_matches_on_a_chain_and_a_prefetch_window() {
        let perf = model_at(4);
        let mut chain = Graph::new();
        let a = chain.add_node(
            NodeKind::Elementwise {
                bytes: 1000,
                flops: 5,
            },
            Stream::Main,
            "a",
        );
        let b = chain.add_node(
            NodeKind::Elementwise {
                bytes: 2000,
                flops: 5,
            },
            Stream::Main,
            "b",
        );
        let c = chain.add_node(
            NodeKind::Elementwise {
                bytes: 3000,
                flops: 5,
            },
            Stream::Main,
            "c",
        );
        chain.add_edge(a, b);
        chain.add_edge(b, c);
        let fast = perf.simulate_layer(&chain).unwrap();
        let oracle = perf.brute_force_schedule(&chain).unwrap();
        assert_eq!(fast.intervals, oracle.intervals);

        let sharded = shard(&find_model("Llama3-8B").unwrap(), 4).unwrap();
        let graph = build_decode_layer(&sharded, 1, 64);
        let (with_prefetch, _) = insert_prefetch_ops(&graph, &PassConfig::new(0)).unwrap();
        let fast = perf.simulate_layer(&with_prefetch).unwrap();
        let oracle = perf.brute_force_schedule(&with_prefetch).unwrap();
        assert_eq!(fast.intervals, oracle.intervals);
    }

    #[test]
    fn brute_force_rejects_large_graphs() {
        let sharded = shard(&find_model("Llama3-8B").unwrap(), 4).unwrap();
        let graph = build_decode_layer(&sharded, 4, 8192);
        let (with_prefetch, _) = insert_prefetch_ops(&graph, &PassConfig::new(192 * MB)).unwrap();
        assert!(matches!(
            model_at(4).brute_force_schedule(&with_prefetch),
            Err(PerfError::GraphTooLarge { .. })
        ));
    }

    #[test]
    fn window_duration_bounds() {
        // A window lasts at least as long as its allreduce, its prefetch
        // stream, and the serial resident-speed compute of its members.
        let sharded = shard(&find_model("Llama3-70B").unwrap(), 8).unwrap();
        let graph = build_decode_layer(&sharded, 16, 8192);
        let (with_prefetch, _) = insert_prefetch_ops(&graph, &PassConfig::new(104 * MB)).unwrap();
        let perf = model_at(8);
        let timeline = perf.simulate_layer(&with_prefetch).unwrap();
        for (i, window) in crate::graph::allreduce_windows(&with_prefetch)
            .iter()
            .enumerate()
        {
            let start = timeline.intervals[window.allreduce.0].start;
            let end = window
                .members
                .iter()
                .map(|m| timeline.intervals[m.0].end)
                .fold(0.0, f64::max);
            let duration = end - start;
            let timing = &timeline.windows[i];
            assert!(duration >= timing.allreduce_s - 1e-15);
            assert!(duration >= timing.prefetch_s - 1e-15);
            assert!(duration >= timing.compute_s - 1e-15);
        }
    }

    #[test]
    fn equal_l2_and_hbm_bandwidth_erases_the_residency_advantage() {
        let mut spec = default_spec();
        spec.l2_bw = spec.hbm_bw;
        let perf = PerfModel::new(spec, ClusterSpec::ring(4));
        let matmul = NodeKind::MatMul {
            weight_bytes: 40 * MB,
            flops: 1_000_000,
            activation_bytes: 0,
        };
        assert_eq!(
            perf.op_latency(&matmul, true).unwrap(),
            perf.op_latency(&matmul, false).unwrap()
        );
    }

    #[test]
    fn end_to_end_single_decode_step_is_exact() {
        let model = find_model("Llama3-8B").unwrap();
        let spec = default_spec();
        let cluster = ClusterSpec::ring(4);
        let workload = Workload::new(4, 129, 128, 1).unwrap();
        let opts = SimOptions::default();
        let result = end_to_end_latency(&model, &cluster, &spec, &workload, true, &opts).unwrap();
        let sharded = shard(&model, 4).unwrap();
        let perf = PerfModel::new(spec.clone(), cluster);
        let pass_cfg = PassConfig::new(spec.l2_capacity);
        let decode = build_decode_layer(&sharded, 4, 129);
        let (decode, _) = insert_prefetch_ops(&decode, &pass_cfg).unwrap();
        let expected_decode = 32.0 * perf.simulate_layer(&decode).unwrap().total;
        assert!((result.decode_s - expected_decode).abs() < 1e-15);
        assert!((result.total_s - (result.prefill_s + result.decode_s)).abs() < 1e-15);
    }

    #[test]
    fn sampled_decode_integration_tracks_the_exact_sum() {
        let model = find_model("Llama3-8B").unwrap();
        let spec = default_spec();
        let cluster = ClusterSpec::ring(8);
        // 100 decode steps: long enough to take the 16-sample path.
        let workload = Workload::new(8, 300, 200, 100).unwrap();
        let opts = SimOptions::default();
        let result = end_to_end_latency(&model, &cluster, &spec, &workload, true, &opts).unwrap();

        let sharded = shard(&model, 8).unwrap();
        let perf = PerfModel::new(spec.clone(), cluster);
        let pass_cfg = PassConfig::new(spec.l2_capacity);
        let mut exact = 0.0;
        for step in 1..=workload.decode_len {
            let graph = build_decode_layer(&sharded, workload.batch, workload.prefill_len + step);
            let (graph, _) = insert_prefetch_ops(&graph, &pass_cfg).unwrap();
            exact += model.num_layers as f64 * perf.simulate_layer(&graph).unwrap().total;
        }
        let rel = (result.decode_s - exact).abs() / exact;
        assert!(rel < 0.01, "sampled decode time off by {rel} relative");
    }

    #[test]
    fn end_to_end_flags_infeasible_configurations() {
        let model = find_model("Llama3-405B").unwrap();
        let err = end_to_end_latency(
            &model,
            &ClusterSpec::ring(1),
            &default_spec(),
            &Workload::standard(1, 2048),
            true,
            &SimOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, PerfError::Infeasible(_)));
    }

    #[test]
    fn prefetch_does_not_hurt_a_real_layer_stack() {
        let model = find_model("Llama3-8B").unwrap();
        let spec = default_spec();
        let cluster = ClusterSpec::ring(4);
        let workload = Workload::standard(4, 4096);
        let opts = SimOptions::default();
        let enabled = end_to_end_latency(&model, &cluster, &spec, &workload, true, &opts).unwrap();
        let disabled =
            end_to_end_latency(&model, &cluster, &spec, &workload, false, &opts).unwrap();
        assert!(enabled.total_s <= disabled.total_s);
        assert!(disabled.total_s / enabled.total_s >= 1.0);
    }
}
