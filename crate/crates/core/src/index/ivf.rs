//! Inverted-file layout over spherical k-means clusters, with 8-bit scalar
//! quantized codes for the coarse scan.
//!
//! A query scans the codes of the probed lists with integer arithmetic,
//! then rescores exactly every entity whose approximate score could still
//! reach the top K. The approximation error of each coarse score is bounded
//! by `B` (reconstruction error plus query-weight rounding), so every entity
//! of the true top K over the probed lists has a coarse score of at least
//! `tau - 2B`, where `tau` is the K-th largest coarse score. The result is
//! therefore exactly the top K of the probed entities, and probing every
//! cluster reproduces the full scan.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::kernel::{dot_f32, scan_u8_i16};
use crate::index::topk::TopK;
use crate::numerics::{Matrix32, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IvfConfig {
    pub clusters: usize,
    /// Probes used when a query does not ask for a specific number.
    pub probes: usize,
    pub iterations: usize,
    /// Rows sampled for centroid training.
    pub sample: usize,
    pub seed: u64,
}

pub const DEFAULT_CLUSTERS: usize = 256;
pub const DEFAULT_PROBES: usize = 224;

impl Default for IvfConfig {
    fn default() -> Self {
        IvfConfig {
            clusters: DEFAULT_CLUSTERS,
            probes: DEFAULT_PROBES,
            iterations: 10,
            sample: 16_384,
            seed: 0,
        }
    }
}

impl IvfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.probes == 0 || self.sample == 0 {
            return Err(Error::ConfigInvalid("index: clusters, probes and sample must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ivf {
    pub(crate) centroids: Matrix32,
    /// List `c` holds `ids[offsets[c]..offsets[c + 1]]`.
    pub(crate) offsets: Vec<u32>,
    pub(crate) ids: Vec<u32>,
    pub(crate) default_probes: usize,
    steps: Vec<f32>,
    /// Codes in list order, `dim` bytes per entity.
    codes: Vec<u8>,
}

/// Centroids stored dimension-major so one point is scored against all of
/// them with a single pass of `scores += x_i * row_i`. Each score keeps a
/// fixed summation order, so vectorized and scalar code agree bitwise.
struct Assigner {
    k: usize,
    by_dim: Vec<f32>,
}

impl Assigner {
    fn new(centroids: &Matrix32) -> Self {
        let (k, dim) = centroids.shape();
        let mut by_dim = vec![0.0f32; k * dim];
        for c in 0..k {
            for (i, x) in centroids.row(c).iter().enumerate() {
                by_dim[i * k + c] = *x;
            }
        }
        Assigner { k, by_dim }
    }

    /// Best cluster, ties to the lower cluster id.
    fn nearest(&self, row: &[f32], scores: &mut Vec<f32>) -> (usize, f32) {
        scores.clear();
        scores.resize(self.k, 0.0);
        accumulate(&self.by_dim, row, scores);
        let mut best = (0, f32::NEG_INFINITY);
        for (c, s) in scores.iter().enumerate() {
            if *s > best.1 {
                best = (c, *s);
            }
        }
        best
    }
}

fn accumulate(by_dim: &[f32], row: &[f32], scores: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the avx2 feature was detected at runtime.
            unsafe { accumulate_avx2(by_dim, row, scores) };
            return;
        }
    }
    accumulate_plain(by_dim, row, scores)
}

#[inline(always)]
fn accumulate_plain(by_dim: &[f32], row: &[f32], scores: &mut [f32]) {
    let k = scores.len();
    for (x, col) in row.iter().zip(by_dim.chunks_exact(k)) {
        for (s, c) in scores.iter_mut().zip(col) {
            *s += x * c;
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn accumulate_avx2(by_dim: &[f32], row: &[f32], scores: &mut [f32]) {
    accumulate_plain(by_dim, row, scores)
}

fn normalize(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

impl Ivf {
    /// Clusters the unit rows of `matrix`.
    pub fn build(matrix: &Matrix32, config: &IvfConfig) -> Result<Self> {
        config.validate()?;
        let (n, dim) = matrix.shape();
        if n == 0 {
            return Err(Error::EmptyCorpus);
        }
        let k = config.clusters.min(n);
        let mut rng = SeededRng::new(config.seed);
        let mut order: Vec<u32> = (0..n as u32).collect();
        let sample_len = config.sample.max(k).min(n);
        // partial Fisher-Yates: the first `sample_len` entries form the sample
        for i in 0..sample_len {
            let j = i + rng.below(n - i);
            order.swap(i, j);
        }
        let sample = &order[..sample_len];
        let mut centroids = Matrix32::zeros(k, dim);
        for (c, &id) in sample[..k].iter().enumerate() {
            centroids.row_mut(c).copy_from_slice(matrix.row(id as usize));
        }

        let mut scratch = Vec::with_capacity(k);
        let mut assign = vec![(0usize, 0.0f32); sample_len];
        for _ in 0..config.iterations {
            let assigner = Assigner::new(&centroids);
            for (a, &id) in assign.iter_mut().zip(sample) {
                *a = assigner.nearest(matrix.row(id as usize), &mut scratch);
            }
            let mut sums = vec![vec![0.0f64; dim]; k];
            let mut counts = vec![0usize; k];
            for (&(c, _), &id) in assign.iter().zip(sample) {
                counts[c] += 1;
                for (s, x) in sums[c].iter_mut().zip(matrix.row(id as usize)) {
                    *s += *x as f64;
                }
            }
            // empty clusters take the worst-served sample points
            let mut worst: Vec<usize> = (0..sample_len).collect();
            worst.sort_by(|&a, &b| assign[a].1.total_cmp(&assign[b].1).then(a.cmp(&b)));
            let mut donors = worst.into_iter();
            for c in 0..k {
                let ok = counts[c] > 0 && normalize(&mut sums[c]);
                if ok {
                    for (dst, s) in centroids.row_mut(c).iter_mut().zip(&sums[c]) {
                        *dst = *s as f32;
                    }
                } else if let Some(p) = donors.next() {
                    centroids.row_mut(c).copy_from_slice(matrix.row(sample[p] as usize));
                }
            }
        }

        let assigner = Assigner::new(&centroids);
        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); k];
        for id in 0..n {
            lists[assigner.nearest(matrix.row(id), &mut scratch).0].push(id as u32);
        }
        let mut offsets = Vec::with_capacity(k + 1);
        offsets.push(0u32);
        let mut ids = Vec::with_capacity(n);
        for l in &lists {
            ids.extend_from_slice(l);
            offsets.push(ids.len() as u32);
        }
        Ok(Self::from_parts(matrix, centroids, offsets, ids, config.probes))
    }

    /// Rebuilds the quantized codes from a stored cluster layout.
    pub(crate) fn from_parts(
        matrix: &Matrix32,
        centroids: Matrix32,
        offsets: Vec<u32>,
        ids: Vec<u32>,
        default_probes: usize,
    ) -> Self {
        let dim = matrix.cols();
        let mut mins = vec![f32::INFINITY; dim];
        let mut maxs = vec![f32::NEG_INFINITY; dim];
        for row in matrix.iter_rows() {
            for i in 0..dim {
                mins[i] = mins[i].min(row[i]);
                maxs[i] = maxs[i].max(row[i]);
            }
        }
        let steps: Vec<f32> = mins.iter().zip(&maxs).map(|(lo, hi)| (hi - lo) / 255.0).collect();
        let mut codes = Vec::with_capacity(ids.len() * dim);
        for &id in &ids {
            for (i, x) in matrix.row(id as usize).iter().enumerate() {
                let c = if steps[i] > 0.0 { ((x - mins[i]) / steps[i]).round().clamp(0.0, 255.0) } else { 0.0 };
                codes.push(c as u8);
            }
        }
        Ivf {
            centroids,
            offsets,
            ids,
            default_probes,
            steps,
            codes,
        }
    }

    pub fn num_clusters(&self) -> usize {
        self.centroids.rows()
    }

    pub fn default_probes(&self) -> usize {
        self.default_probes
    }

    pub fn list_len(&self, c: usize) -> usize {
        (self.offsets[c + 1] - self.offsets[c]) as usize
    }

    /// The `probes` clusters with the highest centroid score.
    pub fn probe_order(&self, q: &[f32], probes: usize) -> Vec<usize> {
        let mut scored: Vec<(f64, usize)> =
            self.centroids.iter_rows().enumerate().map(|(c, cen)| (dot_f32(cen, q), c)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().take(probes.min(self.num_clusters())).map(|(_, c)| c).collect()
    }

    /// Top `k` of the entities in the probed lists, scored exactly against
    /// `matrix`. `q` must already be unit length.
    pub fn search(&self, matrix: &Matrix32, q: &[f32], k: usize, probes: usize) -> Vec<(f64, u32)> {
        let dim = q.len();
        let probed = self.probe_order(q, probes);

        // query weights w_i = q_i * step_i, rounded onto an i16 grid
        let w: Vec<f64> = q.iter().zip(&self.steps).map(|(a, s)| *a as f64 * *s as f64).collect();
        let max_w = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let limit = (32767u64).min(i32::MAX as u64 / (255 * dim.max(1) as u64)) as f64;
        let scale = if max_w > 0.0 { limit / max_w } else { 1.0 };
        let wq: Vec<i16> = w.iter().map(|x| (x * scale).round() as i16).collect();
        let rounding: f64 = w.iter().zip(&wq).map(|(x, r)| (x - *r as f64 / scale).abs() * 255.0).sum();
        // half a step per dimension, padded for the f32 arithmetic that
        // produced the codes
        let recon: f64 = q
            .iter()
            .zip(&self.steps)
            .map(|(a, s)| (*a as f64).abs() * (*s as f64 * 0.5 * 1.001 + 1e-6))
            .sum();
        let bound = recon + rounding + 1e-9;
        let margin = (2.0 * bound * scale).ceil() as i64 + 1;

        let mut coarse = Vec::new();
        for &c in &probed {
            let (a, b) = (self.offsets[c] as usize, self.offsets[c + 1] as usize);
            scan_u8_i16(&self.codes[a * dim..b * dim], &wq, &mut coarse);
        }
        // k-th largest coarse score
        let threshold = if coarse.len() > k && k > 0 {
            let mut heap: BinaryHeap<Reverse<i32>> = coarse[..k].iter().map(|s| Reverse(*s)).collect();
            let mut min = heap.peek().expect("k >= 1").0;
            for &s in &coarse[k..] {
                if s > min {
                    *heap.peek_mut().expect("k >= 1") = Reverse(s);
                    min = heap.peek().expect("k >= 1").0;
                }
            }
            min as i64 - margin
        } else {
            i64::MIN
        };
        let mut top = TopK::new(k);
        let mut scores = coarse.iter();
        for &c in &probed {
            for &id in &self.ids[self.offsets[c] as usize..self.offsets[c + 1] as usize] {
                if *scores.next().expect("one score per entity") as i64 >= threshold {
                    top.push(dot_f32(matrix.row(id as usize), q), id);
                }
            }
        }
        top.into_sorted()
    }
}
