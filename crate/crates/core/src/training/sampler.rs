use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// `P(r) = ln((r+2)/(r+1)) / ln(|V|+1)` over frequency rank `r`, which is
    /// the entity id.
    LogUniform,
    /// Proportional to `freq^0.75`.
    Unigram,
}

/// A sampled negative class with the probability the proposal assigned it,
/// conditioned on excluding the target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Negative {
    pub id: u32,
    pub prob: f64,
}

#[derive(Clone, Debug)]
pub struct NegativeSampler {
    kind: SamplerKind,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl NegativeSampler {
    /// `freqs` is indexed by entity id; only the unigram sampler reads it.
    pub fn new(kind: SamplerKind, freqs: &[u64]) -> Result<Self> {
        let n = freqs.len();
        if n <= 1 {
            return Err(Error::VocabTooSmall(n));
        }
        let probs: Vec<f64> = match kind {
            SamplerKind::LogUniform => {
                let norm = ((n + 1) as f64).ln();
                (0..n).map(|r| ((r as f64 + 2.0) / (r as f64 + 1.0)).ln() / norm).collect()
            }
            SamplerKind::Unigram => {
                let w: Vec<f64> = freqs.iter().map(|&f| (f.max(1) as f64).powf(0.75)).collect();
                let total: f64 = w.iter().sum();
                w.iter().map(|x| x / total).collect()
            }
        };
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(NegativeSampler { kind, probs, cdf })
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Unconditional proposal probability of `id`.
    pub fn prob(&self, id: u32) -> f64 {
        self.probs[id as usize]
    }

    /// One unconditional draw.
    pub fn draw(&self, rng: &mut SeededRng) -> u32 {
        let n = self.probs.len();
        let r = match self.kind {
            SamplerKind::LogUniform => {
                let x = (rng.uniform() * ((n + 1) as f64).ln()).exp() - 1.0;
                x as usize
            }
            SamplerKind::Unigram => {
                let u = rng.uniform() * self.cdf[n - 1];
                self.cdf.partition_point(|c| *c <= u)
            }
        };
        r.min(n - 1) as u32
    }

    /// `k` draws with replacement, rejecting `exclude`.
    pub fn sample(&self, rng: &mut SeededRng, k: usize, exclude: Option<u32>) -> Vec<Negative> {
        let keep = 1.0 - exclude.map_or(0.0, |t| self.prob(t));
        (0..k)
            .map(|_| loop {
                let id = self.draw(rng);
                if Some(id) != exclude {
                    break Negative {
                        id,
                        prob: self.prob(id) / keep,
                    };
                }
            })
            .collect()
    }
}
