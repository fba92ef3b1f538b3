//! Command-line surface: configuration loading, sweep drivers, and CSV/SVG
//! report emission.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use preserve_core::arch::{
    builtin_catalog, find_model, layer_footprint, shard, ModelConfig, Workload,
};
use preserve_core::dse::{
    l2_latency_curves, optimal_l2, sweep_bandwidth, sweep_cluster, sweep_compute_l2bw, DseError,
    SweepResult, SweepSpec, WorkloadGrid,
};
use preserve_core::graph::build_decode_layer;
use preserve_core::hw::{default_spec, ClusterSpec, HardwareSpec, MB};
use preserve_core::pass::{insert_prefetch_ops, PassConfig};
use preserve_core::perf::{end_to_end_latency, EndToEnd, PerfError, SimOptions};
use preserve_core::report::{emit_svg, fmt_sig6, Axes, Series};

/// Environment variable naming a hardware-spec JSON file used as the base
/// template before flag overrides.
const SPEC_ENV: &str = "PRESERVE_SPEC";

const EXIT_UNKNOWN_MODEL: u8 = 10;
const EXIT_INFEASIBLE: u8 = 11;
const EXIT_OUTPUT: u8 = 12;

#[derive(Debug)]
enum CliError {
    UnknownModel(String),
    Infeasible(String),
    Output(PathBuf, std::io::Error),
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::UnknownModel(_) => EXIT_UNKNOWN_MODEL,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Output(..) => EXIT_OUTPUT,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::UnknownModel(name) => {
                let known: Vec<String> = builtin_catalog().iter().map(|m| m.name.clone()).collect();
                write!(
                    f,
                    "unknown model `{name}`; known models: {}",
                    known.join(", ")
                )
            }
            CliError::Infeasible(detail) => write!(f, "no feasible design point: {detail}"),
            CliError::Output(path, err) => {
                write!(f, "cannot write output under {}: {err}", path.display())
            }
            CliError::Other(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<DseError> for CliError {
    fn from(err: DseError) -> CliError {
        match err {
            DseError::AllInfeasible => CliError::Infeasible(err.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Parser, Debug)]
#[command(
    name = "preserve",
    version,
    about = "Analytical prefetch-overlap model for distributed LLM inference",
    long_about = "Builds per-layer computation graphs for tensor-parallel LLM decode and \
prefill, inserts weight/KV-cache prefetches overlapped with allreduce under an L2 budget, \
schedules them on a two-stream accelerator model, and sweeps hardware design parameters."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Catalog model name or model-config JSON path; repeatable. Defaults
    /// to the whole catalog (simulate/pass-explain: Llama3-8B, dse-cluster:
    /// Llama3-405B).
    #[arg(short, long = "model", global = true)]
    model: Vec<String>,

    /// Tensor-parallel degree / cluster size.
    #[arg(long, global = true)]
    tp: Option<u64>,

    /// Batch size.
    #[arg(long, global = true)]
    batch: Option<u64>,

    /// Maximum sequence length in tokens (2/3 prefill, 1/3 decode).
    #[arg(long, global = true)]
    seq: Option<u64>,

    /// L2 cache capacity in MB (1 MB = 1e6 bytes).
    #[arg(long, global = true)]
    l2_mb: Option<f64>,

    /// Device-to-device link bandwidth in Gbit/s.
    #[arg(long, global = true)]
    link_gbps: Option<f64>,

    /// Peak int8 compute throughput in TeraOps/s.
    #[arg(long, global = true)]
    tops: Option<f64>,

    /// L2 bus bandwidth in TB/s.
    #[arg(long, global = true)]
    l2_tbps: Option<f64>,

    /// HBM bandwidth in TB/s.
    #[arg(long, global = true)]
    hbm_tbps: Option<f64>,

    /// Fixed allreduce volume factor (default: ring factor 2(N-1)/N).
    #[arg(long, global = true)]
    ring_factor: Option<f64>,

    /// Activation traffic folded into each op's memory term.
    #[arg(long, global = true, default_value_t = 0.10)]
    activation_overhead: f64,

    /// Disable prefetch insertion (simulate emits baseline artifacts).
    #[arg(long, global = true)]
    no_prefetch: bool,

    /// Output directory for generated artifacts.
    #[arg(short, long, global = true, default_value = "out")]
    out: PathBuf,

    /// Tabular artifact format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// List the built-in model catalog.
    Catalog,
    /// Per-layer memory footprints across tensor-parallel degrees 1..64.
    Footprint,
    /// Dump the prefetch-insertion report for one decode layer as JSON.
    PassExplain,
    /// Simulate one configuration end to end; emit a trace and breakdown.
    Simulate,
    /// Sweep the L2 capacity: latency curves and density optima.
    DseL2 {
        /// L2 grid as start:stop:step in MB.
        #[arg(long, default_value = "8:160:8")]
        grid: String,
    },
    /// Sweep the tensor-parallel cluster size.
    DseCluster {
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128")]
        sizes: Vec<u64>,
    },
    /// Sweep the link bandwidth in Gbit/s on a 128-device cluster.
    DseBandwidth {
        #[arg(long, value_delimiter = ',', default_value = "200,400,600,800,1000")]
        bandwidths: Vec<f64>,
    },
    /// Sweep peak compute throughput crossed with L2 bus bandwidth.
    DseCompute {
        /// Compute throughput values in TeraOps/s.
        #[arg(long, value_delimiter = ',', default_value = "200,400,800,1600")]
        tops_list: Vec<f64>,
        /// L2 bus bandwidth values in TB/s.
        #[arg(long, value_delimiter = ',', default_value = "6,12,24")]
        l2_list: Vec<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let spec = hardware_spec(cli)?;
    let opts = SimOptions {
        ring_factor: cli.ring_factor,
        activation_overhead: cli.activation_overhead,
    };
    match &cli.command {
        Command::Catalog => catalog(cli),
        Command::Footprint => footprint(cli, &spec),
        Command::PassExplain => pass_explain(cli, &spec),
        Command::Simulate => simulate(cli, &spec, &opts),
        Command::DseL2 { grid } => dse_l2(cli, &spec, &opts, grid),
        Command::DseCluster { sizes } => dse_cluster(cli, &spec, &opts, sizes),
        Command::DseBandwidth { bandwidths } => dse_bandwidth(cli, &spec, &opts, bandwidths),
        Command::DseCompute { tops_list, l2_list } => {
            dse_compute(cli, &spec, &opts, tops_list, l2_list)
        }
    }
}

/// Base template from PRESERVE_SPEC (when set) with flag overrides applied.
fn hardware_spec(cli: &Cli) -> Result<HardwareSpec, CliError> {
    let mut spec = match std::env::var_os(SPEC_ENV) {
        Some(path) => {
            let path = PathBuf::from(path);
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::Other(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Other(format!("cannot parse {}: {e}", path.display())))?
        }
        None => default_spec(),
    };
    if let Some(mb) = cli.l2_mb {
        spec.l2_capacity = (mb * MB as f64).round() as u64;
    }
    if let Some(gbps) = cli.link_gbps {
        spec.link_bw = gbps * 1e9 / 8.0;
    }
    if let Some(tops) = cli.tops {
        spec.peak_throughput = tops * 1e12;
    }
    if let Some(tbps) = cli.l2_tbps {
        spec.l2_bw = tbps * 1e12;
    }
    if let Some(tbps) = cli.hbm_tbps {
        spec.hbm_bw = tbps * 1e12;
    }
    spec.validate()
        .map_err(|e| CliError::Other(e.to_string()))?;
    Ok(spec)
}

/// Resolve a --model argument: a catalog name, or a path to a model
/// config JSON file.
fn resolve_model(name: &str) -> Result<ModelConfig, CliError> {
    if name.ends_with(".json") || Path::new(name).exists() {
        return preserve_core::arch::load_model_config(name)
            .map_err(|e| CliError::Other(e.to_string()));
    }
    find_model(name).map_err(|_| CliError::UnknownModel(name.to_string()))
}

fn selected_models(cli: &Cli, default_all: bool) -> Result<Vec<ModelConfig>, CliError> {
    if cli.model.is_empty() {
        if default_all {
            return Ok(builtin_catalog());
        }
        return Ok(vec![find_model("Llama3-8B").expect("catalog model")]);
    }
    cli.model.iter().map(|name| resolve_model(name)).collect()
}

fn out_dir(cli: &Cli) -> Result<&Path, CliError> {
    fs::create_dir_all(&cli.out).map_err(|e| CliError::Output(cli.out.clone(), e))?;
    Ok(&cli.out)
}

fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Output(path.clone(), e))?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Write sweep rows as fig<N>.csv or fig<N>.json depending on --format.
fn write_rows(cli: &Cli, dir: &Path, basename: &str, result: &SweepResult) -> Result<(), CliError> {
    match cli.format {
        Format::Csv => write_artifact(dir, &format!("{basename}.csv"), &result.to_csv()),
        Format::Json => write_artifact(dir, &format!("{basename}.json"), &result.to_json()),
    }
}

fn workload(cli: &Cli, default_batch: u64, default_seq: u64) -> Result<Workload, CliError> {
    let seq = cli.seq.unwrap_or(default_seq);
    if seq < 2 {
        return Err(CliError::Other(format!(
            "--seq must be at least 2 (one prefill and one decode token), got {seq}"
        )));
    }
    Ok(Workload::standard(cli.batch.unwrap_or(default_batch), seq))
}

fn catalog(cli: &Cli) -> Result<(), CliError> {
    let models = builtin_catalog();
    if cli.format == Format::Json {
        println!(
            "{}",
            serde_json::to_string_pretty(&models).expect("serializable")
        );
        return Ok(());
    }
    println!(
        "{:<14} {:>7} {:>7} {:>8} {:>9} {:>9} {:>13} {:>8} {:>7}",
        "model",
        "hidden",
        "layers",
        "q_heads",
        "kv_heads",
        "head_dim",
        "intermediate",
        "experts",
        "vocab"
    );
    for m in &models {
        println!(
            "{:<14} {:>7} {:>7} {:>8} {:>9} {:>9} {:>13} {:>8} {:>7}",
            m.name,
            m.hidden_size,
            m.num_layers,
            m.num_q_heads,
            m.num_kv_heads,
            m.head_dim,
            m.intermediate_size,
            format!("{}/{}", m.experts_per_token, m.num_experts),
            m.vocab_size,
        );
    }
    Ok(())
}

const FOOTPRINT_TPS: [u64; 7] = [1, 2, 4, 8, 16, 32, 64];

fn footprint(cli: &Cli, _spec: &HardwareSpec) -> Result<(), CliError> {
    let models = selected_models(cli, true)?;
    let dir = out_dir(cli)?;
    let wl = workload(cli, 8, 16384)?;

    let mut rows: Vec<serde_json::Value> = Vec::new();
    let mut csv = String::from(
        "model,tp,attn_weight_bytes,kv_cache_bytes,attn_total_bytes,mlp_weight_bytes,\
total_model_bytes,attn_total_mib,mlp_weight_mib\n",
    );
    for model in &models {
        for &tp in &FOOTPRINT_TPS {
            let Ok(sharded) = shard(model, tp) else {
                continue;
            };
            let fp = layer_footprint(&sharded, &wl);
            let mib = 1024.0 * 1024.0;
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                model.name,
                tp,
                fp.attn_weight_bytes,
                fp.kv_cache_bytes,
                fp.attn_total_bytes,
                fp.mlp_weight_bytes,
                fp.total_model_bytes_per_device,
                fmt_sig6(fp.attn_total_bytes as f64 / mib),
                fmt_sig6(fp.mlp_weight_bytes as f64 / mib),
            ));
            rows.push(serde_json::json!({
                "model": model.name,
                "tp": tp,
                "attn_weight_bytes": fp.attn_weight_bytes,
                "kv_cache_bytes": fp.kv_cache_bytes,
                "attn_total_bytes": fp.attn_total_bytes,
                "mlp_weight_bytes": fp.mlp_weight_bytes,
                "total_model_bytes": fp.total_model_bytes_per_device,
            }));
        }
    }
    match cli.format {
        Format::Csv => write_artifact(dir, "footprint.csv", &csv)?,
        Format::Json => write_artifact(
            dir,
            "footprint.json",
            &serde_json::to_string_pretty(&rows).expect("serializable"),
        )?,
    }
    Ok(())
}

fn pass_explain(cli: &Cli, spec: &HardwareSpec) -> Result<(), CliError> {
    let model = &selected_models(cli, false)?[0];
    let tp = cli.tp.unwrap_or(8);
    let wl = workload(cli, 8, 16384)?;
    let sharded = shard(model, tp).map_err(|e| CliError::Other(e.to_string()))?;
    let graph = build_decode_layer(&sharded, wl.batch, wl.max_seq_len);
    let (_, report) = insert_prefetch_ops(&graph, &PassConfig::new(spec.l2_capacity))
        .map_err(|e| CliError::Other(e.to_string()))?;
    println!("{}", report.to_json());
    Ok(())
}

fn simulate(cli: &Cli, spec: &HardwareSpec, opts: &SimOptions) -> Result<(), CliError> {
    let model = &selected_models(cli, false)?[0];
    let tp = cli.tp.unwrap_or(8);
    let wl = workload(cli, 8, 16384)?;
    let cluster = ClusterSpec::ring(tp);

    let simulate_with = |enabled: bool| -> Result<EndToEnd, CliError> {
        end_to_end_latency(model, &cluster, spec, &wl, enabled, opts).map_err(|e| match e {
            PerfError::Infeasible(f) => {
                CliError::Infeasible(format!("{} at tp={tp}: {f}", model.name))
            }
            other => CliError::Other(other.to_string()),
        })
    };
    let enabled = simulate_with(true)?;
    let baseline = simulate_with(false)?;
    let speedup = baseline.total_s / enabled.total_s;

    println!(
        "model {} tp {} batch {} seq {} (prefill {} + decode {}) l2 {} MB",
        model.name,
        tp,
        wl.batch,
        wl.max_seq_len,
        wl.prefill_len,
        wl.decode_len,
        fmt_sig6(spec.l2_capacity as f64 / MB as f64),
    );
    println!(
        "prefill_s  baseline {:<12} prefetch {}",
        fmt_sig6(baseline.prefill_s),
        fmt_sig6(enabled.prefill_s)
    );
    println!(
        "decode_s   baseline {:<12} prefetch {}",
        fmt_sig6(baseline.decode_s),
        fmt_sig6(enabled.decode_s)
    );
    println!(
        "total_s    baseline {:<12} prefetch {}",
        fmt_sig6(baseline.total_s),
        fmt_sig6(enabled.total_s)
    );
    println!("speedup    {}", fmt_sig6(speedup));
    let traced = if cli.no_prefetch { &baseline } else { &enabled };
    for w in &traced.last_decode_layer.windows {
        println!(
            "window {:<5} allreduce_us {:<10} prefetch_us {:<10} compute_us {}",
            w.window,
            fmt_sig6(w.allreduce_s * 1e6),
            fmt_sig6(w.prefetch_s * 1e6),
            fmt_sig6(w.compute_s * 1e6),
        );
    }

    let dir = out_dir(cli)?;
    // The trace covers one decode layer at the final KV length.
    let sharded = shard(model, tp).map_err(|e| CliError::Other(e.to_string()))?;
    let graph = build_decode_layer(&sharded, wl.batch, wl.max_seq_len);
    let (graph, _) = insert_prefetch_ops(
        &graph,
        &PassConfig {
            l2_capacity: spec.l2_capacity,
            enabled: !cli.no_prefetch,
        },
    )
    .map_err(|e| CliError::Other(e.to_string()))?;
    write_artifact(
        dir,
        "trace.json",
        &traced.last_decode_layer.trace_json(&graph),
    )?;
    write_artifact(
        dir,
        "decomposition.csv",
        &traced.last_decode_layer.decomposition_csv(),
    )?;
    Ok(())
}

fn parse_grid(grid: &str) -> Result<Vec<u64>, CliError> {
    let parts: Vec<&str> = grid.split(':').collect();
    let err = || {
        CliError::Other(format!(
            "invalid --grid `{grid}`; expected start:stop:step in MB"
        ))
    };
    if parts.len() != 3 {
        return Err(err());
    }
    let nums: Vec<u64> = parts
        .iter()
        .map(|p| p.parse::<u64>().map_err(|_| err()))
        .collect::<Result<_, _>>()?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if step == 0 || start == 0 || stop < start {
        return Err(err());
    }
    Ok((start..=stop)
        .step_by(step as usize)
        .map(|mb| mb * MB)
        .collect())
}

fn sweep_grid(cli: &Cli) -> Result<WorkloadGrid, CliError> {
    let mut grid = WorkloadGrid::default();
    if let Some(batch) = cli.batch {
        grid.batches = vec![batch];
    }
    if let Some(seq) = cli.seq {
        if seq < 2 {
            return Err(CliError::Other(format!(
                "--seq must be at least 2 (one prefill and one decode token), got {seq}"
            )));
        }
        grid.seqs = vec![seq];
    }
    Ok(grid)
}

fn dse_l2(cli: &Cli, spec: &HardwareSpec, opts: &SimOptions, grid: &str) -> Result<(), CliError> {
    let l2_values = parse_grid(grid)?;
    let sweep = SweepSpec {
        models: selected_models(cli, true)?,
        grid: sweep_grid(cli)?,
        num_devices: cli.tp.unwrap_or(32),
    };
    let optima = optimal_l2(spec, &sweep, &l2_values, opts)?;
    let curves = l2_latency_curves(&optima.result);
    let dir = out_dir(cli)?;

    write_rows(cli, dir, "fig4", &optima.result)?;
    let mut series: Vec<Series> = curves
        .per_model
        .iter()
        .map(|(name, points)| Series::new(name.clone(), points.clone()))
        .collect();
    series.push(Series::new("mean", curves.mean.clone()));
    write_artifact(
        dir,
        "fig4.svg",
        &emit_svg(
            &series,
            &Axes::new(
                "Inference latency vs L2 cache size",
                "L2 cache size (MB)",
                "Latency normalized to the smallest L2",
            ),
        )
        .map_err(|e| CliError::Other(e.to_string()))?,
    )?;

    let mut density_csv = String::from("l2_mb,density_prefetch,density_baseline\n");
    let mut with_curve = Vec::new();
    let mut without_curve = Vec::new();
    for agg in &optima.result.aggregates {
        density_csv.push_str(&format!(
            "{},{},{}\n",
            fmt_sig6(agg.value),
            fmt_sig6(agg.mean_density),
            fmt_sig6(agg.mean_density_base)
        ));
        with_curve.push((agg.value, agg.mean_density));
        without_curve.push((agg.value, agg.mean_density_base));
    }
    write_artifact(dir, "fig5.csv", &density_csv)?;
    write_artifact(
        dir,
        "fig5.svg",
        &emit_svg(
            &[
                Series::new("with prefetching", with_curve),
                Series::new("without prefetching", without_curve),
            ],
            &Axes::new(
                "Throughput density vs L2 cache size",
                "L2 cache size (MB)",
                "Throughput density (token/s/mm^2)",
            ),
        )
        .map_err(|e| CliError::Other(e.to_string()))?,
    )?;

    println!(
        "optimal L2 with prefetching: {} MB (density {})",
        optima.with_prefetch.0 / MB,
        fmt_sig6(optima.with_prefetch.1)
    );
    println!(
        "optimal L2 without prefetching: {} MB (density {})",
        optima.without_prefetch.0 / MB,
        fmt_sig6(optima.without_prefetch.1)
    );
    println!("density ratio: {}", fmt_sig6(optima.density_ratio));
    Ok(())
}

fn dse_cluster(
    cli: &Cli,
    spec: &HardwareSpec,
    opts: &SimOptions,
    sizes: &[u64],
) -> Result<(), CliError> {
    let model = if cli.model.is_empty() {
        find_model("Llama3-405B").expect("catalog model")
    } else {
        selected_models(cli, false)?[0].clone()
    };
    let wl = workload(cli, 16, 8192)?;
    let result = sweep_cluster(spec, &model, sizes, &wl, opts)?;
    let dir = out_dir(cli)?;
    write_rows(cli, dir, "fig6", &result)?;

    let speedups: Vec<(f64, f64)> = result
        .rows
        .iter()
        .filter(|r| r.feasible)
        .map(|r| (r.tp as f64, r.speedup))
        .collect();
    write_artifact(
        dir,
        "fig6.svg",
        &emit_svg(
            &[Series::new("speedup", speedups)],
            &Axes::new(
                &format!("Speedup vs cluster size ({})", model.name),
                "Number of devices",
                "Speedup",
            ),
        )
        .map_err(|e| CliError::Other(e.to_string()))?,
    )?;

    let mut windows_csv = String::from("tp,window,allreduce_us,prefetch_us,compute_us\n");
    let mut window_series: Vec<(&str, Vec<(f64, f64)>)> = vec![
        ("attn allreduce", Vec::new()),
        ("attn prefetch", Vec::new()),
        ("ffn allreduce", Vec::new()),
        ("ffn prefetch", Vec::new()),
    ];
    for row in result.rows.iter().filter(|r| r.feasible) {
        let Some(w) = row.windows else { continue };
        for (name, allreduce_us, prefetch_us, compute_us) in [
            (
                "attn",
                w.attn_allreduce_us,
                w.attn_prefetch_us,
                w.attn_compute_us,
            ),
            (
                "ffn",
                w.ffn_allreduce_us,
                w.ffn_prefetch_us,
                w.ffn_compute_us,
            ),
        ] {
            windows_csv.push_str(&format!(
                "{},{},{},{},{}\n",
                row.tp,
                name,
                fmt_sig6(allreduce_us),
                fmt_sig6(prefetch_us),
                fmt_sig6(compute_us)
            ));
        }
        let x = row.tp as f64;
        window_series[0].1.push((x, w.attn_allreduce_us));
        window_series[1].1.push((x, w.attn_prefetch_us));
        window_series[2].1.push((x, w.ffn_allreduce_us));
        window_series[3].1.push((x, w.ffn_prefetch_us));
    }
    write_artifact(dir, "fig6_windows.csv", &windows_csv)?;
    let series: Vec<Series> = window_series
        .into_iter()
        .map(|(name, points)| Series::new(name, points))
        .collect();
    write_artifact(
        dir,
        "fig6_windows.svg",
        &emit_svg(
            &series,
            &Axes::new(
                &format!(
                    "Allreduce and prefetch latency vs cluster size ({})",
                    model.name
                ),
                "Number of devices",
                "Latency (us)",
            ),
        )
        .map_err(|e| CliError::Other(e.to_string()))?,
    )?;
    Ok(())
}

fn dse_bandwidth(
    cli: &Cli,
    spec: &HardwareSpec,
    opts: &SimOptions,
    bandwidths: &[f64],
) -> Result<(), CliError> {
    let models = selected_models(cli, true)?;
    let wl = workload(cli, 16, 8192)?;
    let num_devices = cli.tp.unwrap_or(128);
    let result = sweep_bandwidth(spec, &models, num_devices, bandwidths, &wl, opts)?;
    let dir = out_dir(cli)?;
    write_rows(cli, dir, "fig7", &result)?;

    let mut series = Vec::new();
    for model in &models {
        let points: Vec<(f64, f64)> = result
            .rows
            .iter()
            .filter(|r| r.feasible && r.model == model.name)
            .map(|r| (r.link_gbps, r.speedup))
            .collect();
        if !points.is_empty() {
            series.push(Series::new(model.name.clone(), points));
        }
    }
    series.push(Series::new(
        "mean",
        result
            .aggregates
            .iter()
            .map(|a| (a.value, a.mean_speedup))
            .collect(),
    ));
    write_artifact(
        dir,
        "fig7.svg",
        &emit_svg(
            &series,
            &Axes::new(
                &format!("Speedup vs network bandwidth ({num_devices} devices)"),
                "Network bandwidth (Gbit/s)",
                "Speedup",
            ),
        )
        .map_err(|e| CliError::Other(e.to_string()))?,
    )?;
    Ok(())
}

fn dse_compute(
    cli: &Cli,
    spec: &HardwareSpec,
    opts: &SimOptions,
    tops_list: &[f64],
    l2_list: &[f64],
) -> Result<(), CliError> {
    let models = selected_models(cli, true)?;
    let wl = workload(cli, 16, 8192)?;
    let num_devices = cli.tp.unwrap_or(32);
    let result = sweep_compute_l2bw(spec, &models, num_devices, tops_list, l2_list, &wl, opts)?;
    let dir = out_dir(cli)?;
    write_rows(cli, dir, "fig8", &result)?;

    let mut series = Vec::new();
    for &l2 in l2_list {
        let points: Vec<(f64, f64)> = result
            .aggregates
            .iter()
            .filter(|a| a.value2 == l2)
            .map(|a| (a.value, a.mean_speedup))
            .collect();
        series.push(Series::new(format!("L2 bus {l2} TB/s"), points));
    }
    write_artifact(
        dir,
        "fig8.svg",
        &emit_svg(
            &series,
            &Axes::new(
                &format!("Mean speedup vs cube throughput ({num_devices} devices)"),
                "Cube throughput (TeraOps/s)",
                "Speedup",
            ),
        )
        .map_err(|e| CliError::Other(e.to_string()))?,
    )?;
    Ok(())
}
