//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic         8 bytes  "DMCKPT\0\0"
//! version       u32      1
//! kind          u8       1 = base, 2 = enhanced
//! vocab_size    u32
//! num_buckets   u32      0 for the enhanced encoder
//! num_entities  u32
//! out_dim       u32
//! rng_seed      u64
//! rng_word_pos  u128
//! epoch         u32
//! meta_len      u32
//! meta          meta_len bytes of JSON {"train", "text", "config_hash"}
//! tensor_count  u32
//! tensor_count times:
//!   name_len u16, name (UTF-8), rows u32, cols u32, rows*cols f64
//! ```
//!
//! Tensors are the encoder parameters in visit order, then batch-norm
//! running statistics as `1 x n` tensors (base encoder only), then
//! `entity_emb`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{BaseEncoder, Encoder, EncoderKind, EnhancedEncoder, Parameters};
use crate::numerics::{Matrix, RngState};
use crate::text::{PhraseDict, TextConfig, TokenizedQuery, Tokenizer, Vocabulary};
use crate::training::{Model, TrainConfig};

pub const MAGIC: &[u8; 8] = b"DMCKPT\0\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub train: TrainConfig,
    pub text: TextConfig,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub rng: RngState,
    pub epoch: u32,
    pub model: Model,
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Checkpoint {
    pub fn kind(&self) -> EncoderKind {
        self.model.encoder.kind()
    }

    pub fn vocab_size(&self) -> usize {
        self.model.encoder.word_emb().rows()
    }

    fn num_buckets(&self) -> usize {
        match &self.model.encoder {
            Encoder::Base(e) => e.ngram_emb.rows(),
            Encoder::Enhanced(_) => 0,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind().tag());
        for n in [
            self.vocab_size(),
            self.num_buckets(),
            self.model.num_entities(),
            self.model.encoder.out_dim(),
        ] {
            out.extend_from_slice(&u32_of(n)?.to_le_bytes());
        }
        out.extend_from_slice(&self.rng.seed.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&u32_of(meta.len())?.to_le_bytes());
        out.extend_from_slice(&meta);

        let mut tensors: Vec<(String, usize, usize, Vec<f64>)> = Vec::new();
        self.model.encoder.visit(&mut |name, m, _| {
            tensors.push((name.to_string(), m.rows(), m.cols(), m.as_slice().to_vec()))
        });
        if let Encoder::Base(e) = &self.model.encoder {
            for (name, v) in e.buffers() {
                tensors.push((name, 1, v.len(), v.to_vec()));
            }
        }
        let t = &self.model.entity_emb;
        tensors.push(("entity_emb".into(), t.rows(), t.cols(), t.as_slice().to_vec()));

        out.extend_from_slice(&u32_of(tensors.len())?.to_le_bytes());
        for (name, rows, cols, data) in tensors {
            let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&u32_of(rows)?.to_le_bytes());
            out.extend_from_slice(&u32_of(cols)?.to_le_bytes());
            for x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let tag = r.take(1)?[0];
        let kind = EncoderKind::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown encoder tag {tag}")))?;
        let vocab_size = r.u32()? as usize;
        let num_buckets = r.u32()? as usize;
        let num_entities = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let seed = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let epoch = r.u32()?;
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;
        if meta.train.encoder != kind {
            return Err(Error::Format(format!(
                "header says {kind} but config says {}",
                meta.train.encoder
            )));
        }

        let count = r.u32()? as usize;
        let mut tensors: BTreeMap<String, Matrix> = BTreeMap::new();
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Format(format!("tensor {name} too large")))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if tensors.insert(name.clone(), Matrix::from_vec(rows, cols, data)?).is_some() {
                return Err(Error::Format(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let mut encoder = match kind {
            EncoderKind::Base => {
                meta.train.base.validate()?;
                Encoder::Base(BaseEncoder::zeros(meta.train.base.clone(), vocab_size, num_buckets))
            }
            EncoderKind::Enhanced => {
                meta.train.enhanced.validate()?;
                Encoder::Enhanced(EnhancedEncoder::zeros(meta.train.enhanced.clone(), vocab_size))
            }
        };
        if encoder.out_dim() != out_dim {
            return Err(Error::Format(format!("out_dim {out_dim} disagrees with config")));
        }
        let mut missing = Vec::new();
        let mut fill = |name: &str, dst: &mut [f64], rows: usize, cols: usize| match tensors.remove(name) {
            Some(m) if m.shape() == (rows, cols) => dst.copy_from_slice(m.as_slice()),
            Some(m) => missing.push(format!("{name}: shape {:?}, expected {:?}", m.shape(), (rows, cols))),
            None => missing.push(format!("{name}: missing")),
        };
        encoder.visit_mut(&mut |name, m, _| {
            let (rows, cols) = m.shape();
            fill(name, m.as_mut_slice(), rows, cols)
        });
        if let Encoder::Base(e) = &mut encoder {
            for (name, v) in e.buffers_mut() {
                let n = v.len();
                fill(&name, v, 1, n);
            }
        }
        let mut entity_emb = Matrix::zeros(num_entities, out_dim);
        fill("entity_emb", entity_emb.as_mut_slice(), num_entities, out_dim);
        missing.extend(tensors.keys().map(|k| format!("{k}: unexpected")));
        if !missing.is_empty() {
            return Err(Error::Format(format!("checkpoint tensors: {}", missing.join(", "))));
        }
        Ok(Checkpoint {
            meta,
            rng: RngState { seed, word_pos },
            epoch,
            model: Model { encoder, entity_emb },
        })
    }

    /// Writes the checkpoint and returns its hash.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    /// Reads a checkpoint together with the hash of its bytes.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::InputMissing(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Ok((Self::from_bytes(&bytes)?, sha256_hex(&bytes)))
    }
}

fn u32_of(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{n} does not fit in u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Text front end plus encoder: everything needed to embed a raw query.
#[derive(Clone, Debug)]
pub struct QueryModel {
    pub tokenizer: Tokenizer,
    pub encoder: Encoder,
    pub checkpoint_hash: String,
}

impl QueryModel {
    pub fn new(checkpoint: &Checkpoint, hash: String, vocab: Arc<Vocabulary>, phrases: Arc<PhraseDict>) -> Result<Self> {
        if vocab.word_count() != checkpoint.vocab_size() {
            return Err(Error::DimensionMismatch(format!(
                "vocabulary has {} words, checkpoint {}",
                vocab.word_count(),
                checkpoint.vocab_size()
            )));
        }
        if vocab.entity_count() != checkpoint.model.num_entities() {
            return Err(Error::DimensionMismatch(format!(
                "vocabulary has {} entities, checkpoint {}",
                vocab.entity_count(),
                checkpoint.model.num_entities()
            )));
        }
        Ok(QueryModel {
            tokenizer: Tokenizer::new(vocab, phrases, checkpoint.meta.text.clone()),
            encoder: checkpoint.model.encoder.clone(),
            checkpoint_hash: hash,
        })
    }

    pub fn kind(&self) -> EncoderKind {
        self.encoder.kind()
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenizedQuery> {
        self.tokenizer.tokenize(text)
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        self.encoder.embed(&self.tokenize(text)?)
    }
}
