//! Design-space exploration: sweeps over L2 capacity, cluster size, link
//! bandwidth, and compute/L2-bus throughput, with a throughput-density
//! objective (tokens per second per mm² of total silicon).

use serde::Serialize;
use thiserror::Error;

use crate::arch::{ModelConfig, Workload};
use crate::hw::{die_area, ClusterSpec, HardwareSpec, MB};
use crate::perf::{end_to_end_latency, PerfError, SimOptions};
use crate::report::fmt_sig6;

#[derive(Debug, Error)]
pub enum DseError {
    #[error("swept values must be non-empty and strictly increasing ({0})")]
    InvalidValues(&'static str),
    #[error("l2 grid must cover at least [8 MB, 160 MB], got [{lo}, {hi}] bytes")]
    GridCoverage { lo: u64, hi: u64 },
    #[error("l2 grid step must be at most 8 MB for the optimum search, found {0} bytes")]
    GridStep(u64),
    #[error("every design point in the sweep is infeasible")]
    AllInfeasible,
    #[error(transparent)]
    Perf(#[from] PerfError),
}

/// The workload grid: batch sizes crossed with maximum sequence lengths,
/// each split 2/3 prefill and 1/3 decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadGrid {
    pub batches: Vec<u64>,
    pub seqs: Vec<u64>,
}

impl Default for WorkloadGrid {
    fn default() -> Self {
        WorkloadGrid {
            batches: vec![8, 16, 24, 32],
            seqs: vec![2048, 4096, 8192, 16384],
        }
    }
}

impl WorkloadGrid {
    pub fn single(batch: u64, seq: u64) -> WorkloadGrid {
        WorkloadGrid {
            batches: vec![batch],
            seqs: vec![seq],
        }
    }

    pub fn workloads(&self) -> Vec<Workload> {
        let mut out = Vec::new();
        for &batch in &self.batches {
            for &seq in &self.seqs {
                out.push(Workload::standard(batch, seq));
            }
        }
        out
    }
}

/// Models, workloads, and cluster size shared by every swept design point.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub models: Vec<ModelConfig>,
    pub grid: WorkloadGrid,
    pub num_devices: u64,
}

impl SweepSpec {
    /// Full catalog on the standard grid with a 32-device ring.
    pub fn catalog_default() -> SweepSpec {
        SweepSpec {
            models: crate::arch::builtin_catalog(),
            grid: WorkloadGrid::default(),
            num_devices: 32,
        }
    }
}

/// Attention/FFN window latencies of the final decode step, microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowLatencies {
    pub attn_allreduce_us: f64,
    pub attn_prefetch_us: f64,
    pub attn_compute_us: f64,
    pub ffn_allreduce_us: f64,
    pub ffn_prefetch_us: f64,
    pub ffn_compute_us: f64,
}

/// One design point evaluated with and without prefetching.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub model: String,
    pub batch: u64,
    pub seq_len: u64,
    pub tp: u64,
    pub l2_mb: f64,
    pub link_gbps: f64,
    pub tops: f64,
    pub l2_tbps: f64,
    pub latency_base_s: f64,
    pub latency_prefetch_s: f64,
    pub speedup: f64,
    pub tokens_per_s: f64,
    pub die_area_mm2: f64,
    pub density: f64,
    pub feasible: bool,
    /// Density of the baseline (prefetch disabled) at the same design point.
    #[serde(skip)]
    pub density_base: f64,
    #[serde(skip)]
    pub windows: Option<WindowLatencies>,
}

/// Per-swept-value arithmetic means over the feasible (model, workload)
/// points.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AggregatePoint {
    /// Swept value in its CSV unit (l2_mb, tp, link_gbps, or tops).
    pub value: f64,
    /// Secondary swept value (l2_tbps) for two-parameter sweeps, else 0.
    pub value2: f64,
    pub points: usize,
    pub mean_speedup: f64,
    pub mean_latency_base_s: f64,
    pub mean_latency_prefetch_s: f64,
    pub mean_density: f64,
    pub mean_density_base: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<AggregatePoint>,
}

pub const CSV_HEADER: &str = "model,batch,seq_len,tp,l2_mb,link_gbps,tops,l2_tbps,\
latency_base_s,latency_prefetch_s,speedup,tokens_per_s,die_area_mm2,density,feasible";

impl SweepResult {
    pub fn feasible_rows(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.feasible)
    }

    /// Tabular CSV with the fixed schema, rows sorted by design-point key.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<&SweepRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| {
            a.model
                .cmp(&b.model)
                .then(a.batch.cmp(&b.batch))
                .then(a.seq_len.cmp(&b.seq_len))
                .then(a.tp.cmp(&b.tp))
                .then(a.l2_mb.total_cmp(&b.l2_mb))
                .then(a.link_gbps.total_cmp(&b.link_gbps))
                .then(a.tops.total_cmp(&b.tops))
                .then(a.l2_tbps.total_cmp(&b.l2_tbps))
        });
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.model,
                r.batch,
                r.seq_len,
                r.tp,
                fmt_sig6(r.l2_mb),
                fmt_sig6(r.link_gbps),
                fmt_sig6(r.tops),
                fmt_sig6(r.l2_tbps),
                fmt_sig6(r.latency_base_s),
                fmt_sig6(r.latency_prefetch_s),
                fmt_sig6(r.speedup),
                fmt_sig6(r.tokens_per_s),
                fmt_sig6(r.die_area_mm2),
                fmt_sig6(r.density),
                r.feasible,
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows).expect("rows serialize")
    }
}

fn require_increasing<T: PartialOrd>(values: &[T], what: &'static str) -> Result<(), DseError> {
    if values.is_empty() || values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DseError::InvalidValues(what));
    }
    Ok(())
}

/// Evaluate one (model, workload, design point), with and without the pass.
///
/// `cached_base` short-circuits the baseline simulation when the caller
/// already knows it (the baseline never depends on the L2 capacity).
fn evaluate_point(
    model: &ModelConfig,
    spec: &HardwareSpec,
    num_devices: u64,
    workload: &Workload,
    opts: &SimOptions,
    cached_base: Option<f64>,
) -> Result<SweepRow, DseError> {
    let cluster = ClusterSpec::ring(num_devices);
    let area = die_area(spec);
    let mut row = SweepRow {
        model: model.name.clone(),
        batch: workload.batch,
        seq_len: workload.max_seq_len,
        tp: num_devices,
        l2_mb: spec.l2_capacity as f64 / MB as f64,
        link_gbps: spec.link_bw * 8.0 / 1e9,
        tops: spec.peak_throughput / 1e12,
        l2_tbps: spec.l2_bw / 1e12,
        latency_base_s: 0.0,
        latency_prefetch_s: 0.0,
        speedup: 0.0,
        tokens_per_s: 0.0,
        die_area_mm2: area,
        density: 0.0,
        feasible: false,
        density_base: 0.0,
        windows: None,
    };
    let enabled = match end_to_end_latency(model, &cluster, spec, workload, true, opts) {
        Ok(e) => e,
        Err(PerfError::Infeasible(_)) => return Ok(row),
        Err(other) => return Err(other.into()),
    };
    let base_total = match cached_base {
        Some(t) => t,
        None => end_to_end_latency(model, &cluster, spec, workload, false, opts)?.total_s,
    };
    let tokens = (workload.batch * workload.decode_len) as f64;
    row.feasible = true;
    row.latency_prefetch_s = enabled.total_s;
    row.latency_base_s = base_total;
    row.speedup = base_total / enabled.total_s;
    row.tokens_per_s = tokens / enabled.total_s;
    row.density = row.tokens_per_s / (area * num_devices as f64);
    row.density_base = tokens / base_total / (area * num_devices as f64);
    row.windows = match (
        enabled.last_decode_layer.window("attn"),
        enabled.last_decode_layer.window("ffn"),
    ) {
        (Some(attn), Some(ffn)) => Some(WindowLatencies {
            attn_allreduce_us: attn.allreduce_s * 1e6,
            attn_prefetch_us: attn.prefetch_s * 1e6,
            attn_compute_us: attn.compute_s * 1e6,
            ffn_allreduce_us: ffn.allreduce_s * 1e6,
            ffn_prefetch_us: ffn.prefetch_s * 1e6,
            ffn_compute_us: ffn.compute_s * 1e6,
        }),
        _ => None,
    };
    Ok(row)
}

fn aggregate(rows: &[SweepRow], value: f64, value2: f64) -> AggregatePoint {
    let feasible: Vec<&SweepRow> = rows.iter().filter(|r| r.feasible).collect();
    let n = feasible.len().max(1) as f64;
    let mean = |f: &dyn Fn(&SweepRow) -> f64| feasible.iter().map(|r| f(r)).sum::<f64>() / n;
    AggregatePoint {
        value,
        value2,
        points: feasible.len(),
        mean_speedup: mean(&|r| r.speedup),
        mean_latency_base_s: mean(&|r| r.latency_base_s),
        mean_latency_prefetch_s: mean(&|r| r.latency_prefetch_s),
        mean_density: mean(&|r| r.density),
        mean_density_base: mean(&|r| r.density_base),
    }
}

fn finish(result: SweepResult) -> Result<SweepResult, DseError> {
    if result.rows.iter().any(|r| r.feasible) {
        Ok(result)
    } else {
        Err(DseError::AllInfeasible)
    }
}

fn run_l2_sweep(
    template: &HardwareSpec,
    sweep: &SweepSpec,
    l2_values: &[u64],
    opts: &SimOptions,
) -> Result<SweepResult, DseError> {
    require_increasing(l2_values, "l2_capacity")?;
    let mut result = SweepResult::default();
    let mut by_value: Vec<Vec<SweepRow>> = vec![Vec::new(); l2_values.len()];
    for model in &sweep.models {
        for workload in sweep.grid.workloads() {
            // The baseline latency and feasibility do not depend on the L2
            // capacity, so evaluate them once per (model, workload).
            let probe = template.with_l2_capacity(l2_values[0]);
            let cluster = ClusterSpec::ring(sweep.num_devices);
            let base = match end_to_end_latency(model, &cluster, &probe, &workload, false, opts) {
                Ok(e) => Some(e.total_s),
                Err(PerfError::Infeasible(_)) => None,
                Err(other) => return Err(other.into()),
            };
            for (i, &l2) in l2_values.iter().enumerate() {
                let spec = template.with_l2_capacity(l2);
                let row = match base {
                    Some(base_total) => evaluate_point(
                        model,
                        &spec,
                        sweep.num_devices,
                        &workload,
                        opts,
                        Some(base_total),
                    )?,
                    None => evaluate_point(model, &spec, sweep.num_devices, &workload, opts, None)?,
                };
                by_value[i].push(row);
            }
        }
    }
    for (i, &l2) in l2_values.iter().enumerate() {
        let rows = std::mem::take(&mut by_value[i]);
        result
            .aggregates
            .push(aggregate(&rows, l2 as f64 / MB as f64, 0.0));
        result.rows.extend(rows);
    }
    finish(result)
}

/// Latency against L2 capacity for every model, plus the grid mean.
///
/// The grid must cover at least [8 MB, 160 MB].
pub fn sweep_l2(
    template: &HardwareSpec,
    sweep: &SweepSpec,
    l2_values: &[u64],
    opts: &SimOptions,
) -> Result<SweepResult, DseError> {
    require_increasing(l2_values, "l2_capacity")?;
    let (lo, hi) = (l2_values[0], *l2_values.last().unwrap());
    if lo > 8 * MB || hi < 160 * MB {
        return Err(DseError::GridCoverage { lo, hi });
    }
    run_l2_sweep(template, sweep, l2_values, opts)
}

/// Per-model latency-vs-L2 curves normalized to the smallest L2 value, and
/// their arithmetic mean. Models with no feasible point are omitted.
#[derive(Debug, Clone, Default)]
pub struct L2Curves {
    pub per_model: Vec<(String, Vec<(f64, f64)>)>,
    pub mean: Vec<(f64, f64)>,
}

pub fn l2_latency_curves(result: &SweepResult) -> L2Curves {
    let mut model_order: Vec<String> = Vec::new();
    for row in &result.rows {
        if row.feasible && !model_order.contains(&row.model) {
            model_order.push(row.model.clone());
        }
    }
    let mut l2_values: Vec<f64> = Vec::new();
    for row in &result.rows {
        if row.feasible && !l2_values.contains(&row.l2_mb) {
            l2_values.push(row.l2_mb);
        }
    }
    l2_values.sort_by(f64::total_cmp);

    let mut per_model = Vec::new();
    for model in &model_order {
        let mut curve = Vec::new();
        for &l2 in &l2_values {
            let latencies: Vec<f64> = result
                .rows
                .iter()
                .filter(|r| r.feasible && r.model == *model && r.l2_mb == l2)
                .map(|r| r.latency_prefetch_s)
                .collect();
            if !latencies.is_empty() {
                curve.push((l2, latencies.iter().sum::<f64>() / latencies.len() as f64));
            }
        }
        if let Some(&(_, first)) = curve.first() {
            let normalized: Vec<(f64, f64)> = curve.iter().map(|&(x, y)| (x, y / first)).collect();
            per_model.push((model.clone(), normalized));
        }
    }
    let mean = l2_values
        .iter()
        .enumerate()
        .map(|(i, &l2)| {
            let values: Vec<f64> = per_model.iter().map(|(_, c)| c[i].1).collect();
            (l2, values.iter().sum::<f64>() / values.len().max(1) as f64)
        })
        .collect();
    L2Curves { per_model, mean }
}

/// Throughput-density optima over the L2 grid, with and without prefetching.
#[derive(Debug, Clone, Serialize)]
pub struct OptimalL2 {
    /// (L2 capacity in bytes, tokens/s/mm²) at the with-prefetch optimum.
    pub with_prefetch: (u64, f64),
    pub without_prefetch: (u64, f64),
    pub density_ratio: f64,
    #[serde(skip)]
    pub result: SweepResult,
}

/// Argmax of mean throughput density over the L2 grid, computed for the
/// prefetch-enabled and baseline designs. The grid step must not exceed
/// 8 MB.
pub fn optimal_l2(
    template: &HardwareSpec,
    sweep: &SweepSpec,
    l2_values: &[u64],
    opts: &SimOptions,
) -> Result<OptimalL2, DseError> {
    require_increasing(l2_values, "l2_capacity")?;
    for pair in l2_values.windows(2) {
        if pair[1] - pair[0] > 8 * MB {
            return Err(DseError::GridStep(pair[1] - pair[0]));
        }
    }
    let result = run_l2_sweep(template, sweep, l2_values, opts)?;
    let argmax = |density_of: &dyn Fn(&AggregatePoint) -> f64| {
        let best = result
            .aggregates
            .iter()
            .max_by(|a, b| {
                density_of(a)
                    .total_cmp(&density_of(b))
                    // Prefer the smaller capacity on exact ties.
                    .then(b.value.total_cmp(&a.value))
            })
            .expect("grid is non-empty");
        ((best.value * MB as f64).round() as u64, density_of(best))
    };
    let with_prefetch = argmax(&|a| a.mean_density);
    let without_prefetch = argmax(&|a| a.mean_density_base);
    Ok(OptimalL2 {
        with_prefetch,
        without_prefetch,
        density_ratio: with_prefetch.1 / without_prefetch.1,
        result,
    })
}

/// Speedup and window latencies against the tensor-parallel cluster size
/// for one model and workload.
pub fn sweep_cluster(
    template: &HardwareSpec,
    model: &ModelConfig,
    sizes: &[u64],
    workload: &Workload,
    opts: &SimOptions,
) -> Result<SweepResult, DseError> {
    require_increasing(sizes, "num_devices")?;
    let mut result = SweepResult::default();
    for &n in sizes {
        let row = evaluate_point(model, template, n, workload, opts, None)?;
        let rows = vec![row];
        result.aggregates.push(aggregate(&rows, n as f64, 0.0));
        result.rows.extend(rows);
    }
    finish(result)
}

/// Speedup against device-to-device link bandwidth (Gbit/s).
pub fn sweep_bandwidth(
    template: &HardwareSpec,
    models: &[ModelConfig],
    num_devices: u64,
    bandwidths_gbps: &[f64],
    workload: &Workload,
    opts: &SimOptions,
) -> Result<SweepResult, DseError> {
    require_increasing(bandwidths_gbps, "link_bandwidth")?;
    let mut result = SweepResult::default();
    for &gbps in bandwidths_gbps {
        let mut spec = template.clone();
        spec.link_bw = gbps * 1e9 / 8.0;
        let mut rows = Vec::new();
        for model in models {
            rows.push(evaluate_point(
                model,
                &spec,
                num_devices,
                workload,
                opts,
                None,
            )?);
        }
        result.aggregates.push(aggregate(&rows, gbps, 0.0));
        result.rows.extend(rows);
    }
    finish(result)
}

/// Mean speedup over a grid of peak compute throughput (TeraOps/s) crossed
/// with L2 bus bandwidth (TB/s).
pub fn sweep_compute_l2bw(
    template: &HardwareSpec,
    models: &[ModelConfig],
    num_devices: u64,
    tops_values: &[f64],
    l2_tbps_values: &[f64],
    workload: &Workload,
    opts: &SimOptions,
) -> Result<SweepResult, DseError> {
    require_increasing(tops_values, "peak_throughput")?;
    require_increasing(l2_tbps_values, "l2_bw")?;
    let mut result = SweepResult::default();
    for &l2_tbps in l2_tbps_values {
        for &tops in tops_values {
            let mut spec = template.clone();
            spec.peak_throughput = tops * 1e12;
            spec.l2_bw = l2_tbps * 1e12;
            let mut rows = Vec::new();
            for model in models {
                rows.push(evaluate_point(
                    model,
                    &spec,
                    num_devices,
                    workload,
                    opts,
                    None,
                )?);
            }
            result.aggregates.push(aggregate(&rows, tops, l2_tbps));
            result.rows.extend(rows);
        }
    }
    finish(result)
}
