use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use deepmatch_bench::{random_index, random_vectors, DIM};
use deepmatch_core::index::IvfConfig;

fn topk(c: &mut Criterion) {
    let mut index = random_index(100_000, DIM, 1);
    let config = IvfConfig::default();
    index.cluster(&config).unwrap();
    let queries = random_vectors(64, DIM, 2);
    let mut group = c.benchmark_group("topk_100k");
    group.sample_size(20);
    let mut i = 0;
    group.bench_function("exact_k100", |b| {
        b.iter(|| {
            i = (i + 1) % queries.len();
            index.topk_exact(&queries[i], 100).unwrap()
        })
    });
    for probes in [8, 64, config.probes] {
        group.bench_with_input(BenchmarkId::new("approx_k100", probes), &probes, |b, &p| {
            b.iter(|| {
                i = (i + 1) % queries.len();
                index.topk_approx(&queries[i], 100, p).unwrap()
            })
        });
    }
    group.finish();
}

fn neighbors(c: &mut Criterion) {
    let index = random_index(10_000, DIM, 3);
    c.bench_function("entity_neighbors_10k_n20", |b| b.iter(|| index.entity_neighbors("e42", 20).unwrap()));
}

criterion_group!(benches, topk, neighbors);
criterion_main!(benches);
