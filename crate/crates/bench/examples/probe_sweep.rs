//! Recall@100 and latency of approximate search across probe counts.
//!
//! `cargo run --release -p deepmatch-bench --example probe_sweep -- [entities] [queries]`

use std::collections::HashSet;
use std::time::Instant;

use deepmatch_bench::{random_index, random_vectors, DIM};
use deepmatch_core::index::IvfConfig;

fn main() {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let n = args.next().unwrap_or(100_000);
    let count = args.next().unwrap_or(50);
    let k = 100;

    let t = Instant::now();
    let mut index = random_index(n, DIM, 1);
    println!("normalize {n} rows: {:?}", t.elapsed());
    let config = IvfConfig::default();
    let t = Instant::now();
    index.cluster(&config).unwrap();
    println!("cluster ({} lists): {:?}", config.clusters, t.elapsed());

    let queries = random_vectors(count, DIM, 2);
    let t = Instant::now();
    let exact: Vec<HashSet<u32>> = queries
        .iter()
        .map(|q| index.topk_exact(q, k).unwrap().iter().map(|h| h.id).collect())
        .collect();
    println!("exact: {:?}/query", t.elapsed() / count as u32);
    for probes in [8, 32, 64, 128, 160, 192, 208, 224, 240, 256] {
        let t = Instant::now();
        let mut hits = 0;
        for (q, truth) in queries.iter().zip(&exact) {
            hits += index.topk_approx(q, k, probes).unwrap().iter().filter(|h| truth.contains(&h.id)).count();
        }
        let per_query = t.elapsed() / count as u32;
        println!("probes {probes:>3}: recall {:.4}  {per_query:?}/query", hits as f64 / (count * k) as f64);
    }
}
