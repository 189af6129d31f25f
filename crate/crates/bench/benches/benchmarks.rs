use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use embedshard::engine::{execute_plan, reference_execute, simulate, EmbeddingStore, TimingConfig};
use embedshard::partitioner::{plan_asymmetric, plan_symmetric};
use embedshard::workload::generate_queries;
use embedshard_bench::{bench_cost_model, bench_machine, synthetic_workload};

fn bench_query_generation(c: &mut Criterion) {
    let mut group = c.benchmark_group("generate_queries");
    for batch in [1024usize, 8192] {
        let w = synthetic_workload(26, batch);
        let lookups: usize = w.tables.iter().map(|t| batch * t.seq_len).sum();
        group.throughput(Throughput::Elements(lookups as u64));
        group.bench_with_input(BenchmarkId::from_parameter(batch), &w, |b, w| {
            b.iter(|| generate_queries(w, 42))
        });
    }
    group.finish();
}

fn bench_planning(c: &mut Criterion) {
    let m = bench_machine(32);
    let cm = bench_cost_model(&m.name);
    let mut group = c.benchmark_group("plan");
    for n in [26usize, 128] {
        let w = synthetic_workload(n, 8192);
        group.bench_with_input(BenchmarkId::new("symmetric", n), &w, |b, w| {
            b.iter(|| plan_symmetric(w, &m, &cm).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("asymmetric", n), &w, |b, w| {
            b.iter(|| plan_asymmetric(w, &m, &cm, 1.25).unwrap())
        });
    }
    group.finish();
}

fn bench_execution(c: &mut Criterion) {
    let m = bench_machine(8);
    let cm = bench_cost_model(&m.name);
    let w = synthetic_workload(8, 256);
    let plan = plan_asymmetric(&w, &m, &cm, 1.25).unwrap();
    let store = EmbeddingStore::integer_fixture(&w, 1, 7);
    let q = generate_queries(&w, 2);
    let timing = TimingConfig::from_machine(&m);

    let mut group = c.benchmark_group("engine");
    group.bench_function("reference_execute", |b| {
        b.iter(|| reference_execute(&w, &store, &q).unwrap())
    });
    group.bench_function("execute_plan", |b| {
        b.iter(|| execute_plan(&plan, &w, &store, &q, &timing).unwrap())
    });
    group.bench_function("simulate_100_batches", |b| {
        b.iter(|| simulate(&plan, &w, &timing, 100, 3).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_query_generation, bench_planning, bench_execution);
criterion_main!(benches);
