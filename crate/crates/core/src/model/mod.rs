//! Query encoders and their shared parameter plumbing.

pub mod base;
pub mod enhanced;
mod params;

pub use base::{BaseCache, BaseConfig, BaseEncoder, Mode};
pub use enhanced::{EncodedStates, EnhancedCache, EnhancedConfig, EnhancedEncoder};
pub use params::{Gradients, ParamKind, Parameters, SparseRows};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::Matrix;
use crate::text::TokenizedQuery;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Base,
    Enhanced,
}

impl EncoderKind {
    pub fn tag(self) -> u8 {
        match self {
            EncoderKind::Base => 1,
            EncoderKind::Enhanced => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(EncoderKind::Base),
            2 => Some(EncoderKind::Enhanced),
            _ => None,
        }
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncoderKind::Base => "base",
            EncoderKind::Enhanced => "enhanced",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Encoder {
    Base(BaseEncoder),
    Enhanced(EnhancedEncoder),
}

#[derive(Clone, Debug)]
pub enum EncoderCache {
    Base(BaseCache),
    Enhanced(EnhancedCache),
}

impl Encoder {
    pub fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Base(_) => EncoderKind::Base,
            Encoder::Enhanced(_) => EncoderKind::Enhanced,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Encoder::Base(e) => e.out_dim(),
            Encoder::Enhanced(e) => e.out_dim(),
        }
    }

    /// Inference embedding of one query.
    pub fn embed(&self, q: &TokenizedQuery) -> Result<Vec<f64>> {
        match self {
            Encoder::Base(e) => e.embed(q),
            Encoder::Enhanced(e) => e.embed(q),
        }
    }

    /// Training-mode forward pass over a minibatch.
    pub fn forward_train(&self, batch: &[&TokenizedQuery]) -> Result<(Vec<Vec<f64>>, EncoderCache)> {
        match self {
            Encoder::Base(e) => {
                let (out, c) = e.forward(batch, Mode::Train)?;
                Ok((out, EncoderCache::Base(c)))
            }
            Encoder::Enhanced(e) => {
                let (out, c) = e.forward(batch)?;
                Ok((out, EncoderCache::Enhanced(c)))
            }
        }
    }

    pub fn backward(&self, cache: &EncoderCache, upstream: &[Vec<f64>]) -> Result<Gradients> {
        match (self, cache) {
            (Encoder::Base(e), EncoderCache::Base(c)) => e.backward(c, upstream),
            (Encoder::Enhanced(e), EncoderCache::Enhanced(c)) => e.backward(c, upstream),
            _ => Err(crate::Error::DimensionMismatch("cache from a different encoder kind".into())),
        }
    }

    /// Post-step bookkeeping that is not a gradient update.
    pub fn after_forward(&mut self, cache: &EncoderCache) {
        if let (Encoder::Base(e), EncoderCache::Base(c)) = (self, cache) {
            e.update_running_stats(c);
        }
    }

    pub fn word_emb(&self) -> &Matrix {
        match self {
            Encoder::Base(e) => &e.word_emb,
            Encoder::Enhanced(e) => &e.word_emb,
        }
    }
}

impl Parameters for Encoder {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix, ParamKind)) {
        match self {
            Encoder::Base(e) => e.visit(f),
            Encoder::Enhanced(e) => e.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix, ParamKind)) {
        match self {
            Encoder::Base(e) => e.visit_mut(f),
            Encoder::Enhanced(e) => e.visit_mut(f),
        }
    }
}
