//! Analytical toolkit for overlapping weight and KV-cache prefetching with
//! allreduce in distributed LLM inference.
//!
//! The crate models one tensor-parallel device of a decoder-only
//! transformer: [`arch`] holds the model catalog, sharding rules, and
//! memory footprints; [`graph`] builds per-layer computation graphs;
//! [`pass`] inserts prefetch operators under an L2 budget; [`hw`] describes
//! accelerator design points and their silicon area; [`perf`] schedules the
//! two-stream timeline and composes end-to-end latency; [`dse`] sweeps
//! design parameters for throughput-density optima; [`report`] renders
//! deterministic CSV and SVG artifacts.
//!
//! ```
//! use preserve_core::{
//!     build_decode_layer, default_spec, find_model, insert_prefetch_ops, shard,
//!     ClusterSpec, PassConfig, PerfModel,
//! };
//!
//! let model = find_model("Llama3-8B").unwrap();
//! let sharded = shard(&model, 8).unwrap();
//! let layer = build_decode_layer(&sharded, 4, 4096);
//! let (layer, report) = insert_prefetch_ops(&layer, &PassConfig::new(104_000_000)).unwrap();
//! assert!(!report.targets().is_empty());
//!
//! let perf = PerfModel::new(default_spec(), ClusterSpec::ring(8));
//! let timeline = perf.simulate_layer(&layer).unwrap();
//! assert!(timeline.total > 0.0);
//! ```

pub mod arch;
pub mod dse;
pub mod graph;
pub mod hw;
pub mod pass;
pub mod perf;
pub mod report;

pub use arch::{
    builtin_catalog, find_model, layer_footprint, load_model_config, shard, ArchError,
    FootprintReport, ModelConfig, ShardedModel, Workload,
};
pub use dse::{
    l2_latency_curves, optimal_l2, sweep_bandwidth, sweep_cluster, sweep_compute_l2bw, sweep_l2,
    DseError, OptimalL2, SweepResult, SweepRow, SweepSpec, WorkloadGrid,
};
pub use graph::{
    allreduce_windows, build_decode_layer, build_prefill_layer, topo_order, Graph, GraphError,
    Node, NodeId, NodeKind, Stream,
};
pub use hw::{check_capacity, default_spec, die_area, ClusterSpec, Feasibility, HardwareSpec, MB};
pub use pass::{insert_prefetch_ops, mem_size, verify_pass, PassConfig, PassError, PassReport};
pub use perf::{
    end_to_end_latency, EndToEnd, PerfError, PerfModel, SimOptions, Timeline, WindowTiming,
};
pub use report::{emit_svg, fmt_sig6, Axes, ReportError, Series};
