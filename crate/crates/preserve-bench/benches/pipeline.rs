use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use preserve_bench::reference_point;
use preserve_core::arch::Workload;
use preserve_core::dse::sweep_cluster;
use preserve_core::graph::build_decode_layer;
use preserve_core::pass::{insert_prefetch_ops, PassConfig};
use preserve_core::perf::{end_to_end_latency, PerfModel, SimOptions};

fn bench_graph_build(c: &mut Criterion) {
    let fx = reference_point();
    c.bench_function("build_decode_layer", |b| {
        b.iter(|| {
            build_decode_layer(
                black_box(&fx.sharded),
                fx.workload.batch,
                fx.workload.max_seq_len,
            )
        })
    });
}

fn bench_pass(c: &mut Criterion) {
    let fx = reference_point();
    let cfg = PassConfig::new(fx.spec.l2_capacity);
    c.bench_function("insert_prefetch_ops", |b| {
        b.iter(|| insert_prefetch_ops(black_box(&fx.decode_graph), &cfg).unwrap())
    });
}

fn bench_simulate_layer(c: &mut Criterion) {
    let fx = reference_point();
    let perf = PerfModel::new(fx.spec.clone(), fx.cluster);
    c.bench_function("simulate_layer", |b| {
        b.iter(|| {
            perf.simulate_layer(black_box(&fx.prefetched_graph))
                .unwrap()
        })
    });
}

fn bench_end_to_end(c: &mut Criterion) {
    let fx = reference_point();
    let opts = SimOptions::default();
    c.bench_function("end_to_end_latency", |b| {
        b.iter(|| {
            end_to_end_latency(
                black_box(&fx.model),
                &fx.cluster,
                &fx.spec,
                &fx.workload,
                true,
                &opts,
            )
            .unwrap()
        })
    });
}

fn bench_cluster_sweep(c: &mut Criterion) {
    let fx = reference_point();
    let opts = SimOptions::default();
    c.bench_function("sweep_cluster_5_sizes", |b| {
        b.iter(|| {
            sweep_cluster(
                &fx.spec,
                black_box(&fx.model),
                &[8, 16, 32, 64, 128],
                &Workload::standard(16, 8192),
                &opts,
            )
            .unwrap()
        })
    });
}

criterion_group!(
    name = pipeline;
    config = Criterion::default().sample_size(20);
    targets = bench_graph_build,
        bench_pass,
        bench_simulate_layer,
        bench_end_to_end,
        bench_cluster_sweep
);
criterion_main!(pipeline);
