//! Fixtures shared by the benchmarks and the probe sweep.

use deepmatch_core::index::{EntityIndex, IndexMeta};
use deepmatch_core::model::EncoderKind;
use deepmatch_core::numerics::SeededRng;
use deepmatch_core::text::TokenizedQuery;

pub const DIM: usize = 128;

pub fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("e{i}")).collect()
}

/// `n` Gaussian rows normalized onto the unit sphere.
pub fn random_index(n: usize, dim: usize, seed: u64) -> EntityIndex {
    let mut rng = SeededRng::new(seed);
    let meta = IndexMeta {
        encoder: EncoderKind::Enhanced,
        checkpoint_hash: String::new(),
        config_hash: String::new(),
    };
    let rows = (0..n).map(|_| (0..dim).map(|_| rng.normal()).collect::<Vec<f64>>()).collect::<Vec<_>>();
    EntityIndex::from_rows(rows.iter().map(|r| r.iter().copied()), dim, &names(n), None, meta).expect("non-zero rows")
}

pub fn random_vectors(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SeededRng::new(seed);
    (0..count).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect()
}

/// A query of `len` word ids drawn from `2..vocab`, with hashed ngram ids.
pub fn random_query(rng: &mut SeededRng, vocab: usize, len: usize, buckets: usize) -> TokenizedQuery {
    let ids: Vec<u32> = (0..len).map(|_| 2 + rng.below(vocab - 2) as u32).collect();
    let mut q = TokenizedQuery::from_ids(&ids);
    q.ngrams = (0..len.saturating_sub(1) * 2).map(|_| rng.below(buckets) as u32).collect();
    q
}
