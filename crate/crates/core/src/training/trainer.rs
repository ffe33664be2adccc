use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    BaseConfig, BaseEncoder, Encoder, EncoderCache, EncoderKind, EnhancedConfig, EnhancedEncoder, Gradients,
    ParamKind, Parameters,
};
use crate::numerics::{dot, log_sum_exp, Matrix, RngState, SeededRng};
use crate::text::{TokenizedQuery, Tokenizer};
use crate::training::adam::{Adam, AdamConfig};
use crate::training::loss::sampled_softmax_loss;
use crate::training::sampler::{Negative, NegativeSampler, SamplerKind};

pub const DESK_NEGATIVES: usize = 100;
pub const PRODUCTION_NEGATIVES: usize = 5000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub encoder: EncoderKind,
    pub lr: f64,
    pub batch_size: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub seed: u64,
    pub sampler: SamplerKind,
    /// Subtract `ln(k Q(j))` from sampled logits.
    pub correction: bool,
    pub adam: AdamConfig,
    pub base: BaseConfig,
    pub enhanced: EnhancedConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            encoder: EncoderKind::Enhanced,
            lr: 1e-3,
            batch_size: 32,
            negatives: DESK_NEGATIVES,
            epochs: 5,
            seed: 0,
            sampler: SamplerKind::LogUniform,
            correction: true,
            adam: AdamConfig::default(),
            base: BaseConfig::default(),
            enhanced: EnhancedConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::ConfigInvalid(format!("train.lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::ConfigInvalid("train.batch_size must be >= 1".into()));
        }
        if self.negatives == 0 {
            return Err(Error::ConfigInvalid("train.negatives must be >= 1".into()));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return Err(Error::ConfigInvalid("train.adam: betas must be in [0, 1) and eps > 0".into()));
        }
        match self.encoder {
            EncoderKind::Base => self.base.validate(),
            EncoderKind::Enhanced => self.enhanced.validate(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::Base => self.base.out_dim,
            EncoderKind::Enhanced => self.enhanced.out_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub query: TokenizedQuery,
    pub target: u32,
    pub weight: f64,
}

/// Tokenizes `(query, entity, weight)` records. Records whose entity is not
/// in the vocabulary or whose query has no tokens are skipped and counted.
pub fn tokenize_pairs<'a, I>(records: I, tokenizer: &Tokenizer) -> (Vec<TrainingPair>, usize)
where
    I: IntoIterator<Item = (&'a str, &'a str, f64)>,
{
    let mut out = Vec::new();
    let mut skipped = 0;
    for (q, e, w) in records {
        let (Some(target), Ok(query)) = (tokenizer.vocab().entity_id(e), tokenizer.tokenize(q)) else {
            skipped += 1;
            continue;
        };
        out.push(TrainingPair { query, target, weight: w });
    }
    (out, skipped)
}

/// Query encoder together with the entity embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub encoder: Encoder,
    pub entity_emb: Matrix,
}

impl Model {
    pub fn new(
        config: &TrainConfig,
        vocab_size: usize,
        num_entities: usize,
        num_buckets: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let encoder = match config.encoder {
            EncoderKind::Base => Encoder::Base(BaseEncoder::new(config.base.clone(), vocab_size, num_buckets, rng)?),
            EncoderKind::Enhanced => Encoder::Enhanced(EnhancedEncoder::new(config.enhanced.clone(), vocab_size, rng)?),
        };
        let d = encoder.out_dim();
        let bound = 1.0 / (d as f64).sqrt();
        let data = (0..num_entities * d).map(|_| rng.uniform_range(-bound, bound)).collect();
        Ok(Model {
            encoder,
            entity_emb: Matrix::from_vec(num_entities, d, data)?,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entity_emb.rows()
    }

    /// Exact softmax cross-entropy over all entities, unweighted mean.
    pub fn full_softmax_loss(&self, pairs: &[TrainingPair]) -> Result<f64> {
        if pairs.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for p in pairs {
            let q = self.encoder.embed(&p.query)?;
            let logits: Vec<f64> = self.entity_emb.iter_rows().map(|u| dot(u, &q)).collect();
            total += log_sum_exp(&logits) - logits[p.target as usize];
        }
        Ok(total / pairs.len() as f64)
    }
}

impl Parameters for Model {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix, ParamKind)) {
        self.encoder.visit(f);
        f("entity_emb", &self.entity_emb, ParamKind::Embedding);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix, ParamKind)) {
        self.encoder.visit_mut(f);
        f("entity_emb", &mut self.entity_emb, ParamKind::Embedding);
    }
}

pub struct BatchLoss {
    /// `(1/B) Σ w_b ℓ_b`
    pub loss: f64,
    pub grads: Gradients,
    pub cache: EncoderCache,
}

/// Weighted mean sampled-softmax loss of a minibatch and its gradient with
/// respect to every parameter of `model`.
pub fn batch_loss(
    model: &Model,
    batch: &[&TrainingPair],
    negatives: &[Vec<Negative>],
    correct: bool,
) -> Result<BatchLoss> {
    if batch.len() != negatives.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} examples but {} negative sets",
            batch.len(),
            negatives.len()
        )));
    }
    let queries: Vec<&TokenizedQuery> = batch.iter().map(|p| &p.query).collect();
    let (qs, cache) = model.encoder.forward_train(&queries)?;
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut upstream = Vec::with_capacity(batch.len());
    let mut table_grad = crate::model::SparseRows::new(model.entity_emb.cols());
    for ((p, q), neg) in batch.iter().zip(&qs).zip(negatives) {
        let out = sampled_softmax_loss(q, p.target, neg, &model.entity_emb, correct)?;
        let w = p.weight * scale;
        loss += w * out.loss;
        upstream.push(out.d_query.iter().map(|g| g * w).collect::<Vec<f64>>());
        for (id, row) in &out.d_rows.rows {
            table_grad.add(*id, w, row);
        }
    }
    let mut grads = model.encoder.backward(&cache, &upstream)?;
    grads.sparse.insert("entity_emb".to_string(), table_grad);
    Ok(BatchLoss { loss, grads, cache })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_ms: f64,
    pub seed: u64,
}

/// Owns the model, optimizer state and random stream for a training run.
pub struct Trainer {
    config: TrainConfig,
    model: Model,
    adam: Adam,
    sampler: NegativeSampler,
    rng: SeededRng,
    negatives: usize,
    epoch: usize,
    step_losses: Vec<f64>,
}

impl Trainer {
    pub fn new(config: TrainConfig, vocab_size: usize, num_buckets: usize, entity_freqs: &[u64]) -> Result<Self> {
        config.validate()?;
        let sampler = NegativeSampler::new(config.sampler, entity_freqs)?;
        let mut rng = SeededRng::new(config.seed);
        let model = Model::new(&config, vocab_size, entity_freqs.len(), num_buckets, &mut rng)?;
        Self::from_parts(config, model, sampler, rng)
    }

    /// Continues from an existing model and random stream.
    pub fn resume(config: TrainConfig, model: Model, entity_freqs: &[u64], rng: RngState, epoch: usize) -> Result<Self> {
        config.validate()?;
        let sampler = NegativeSampler::new(config.sampler, entity_freqs)?;
        let mut t = Self::from_parts(config, model, sampler, SeededRng::from_state(rng))?;
        t.epoch = epoch;
        Ok(t)
    }

    fn from_parts(config: TrainConfig, model: Model, sampler: NegativeSampler, rng: SeededRng) -> Result<Self> {
        let available = sampler.len() - 1;
        let negatives = if config.negatives > available {
            log::warn!(
                "requested {} negatives but only {} non-target entities exist; using {}",
                config.negatives,
                available,
                available
            );
            available
        } else {
            config.negatives
        };
        if config.encoder == EncoderKind::Base && config.batch_size == 1 {
            log::warn!("batch size 1 with the base encoder: batch normalization sees a single example");
        }
        Ok(Trainer {
            adam: Adam::new(config.lr, config.adam.clone()),
            config,
            model,
            sampler,
            rng,
            negatives,
            epoch: 0,
            step_losses: Vec::new(),
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn rng_state(&self) -> RngState {
        self.rng.state()
    }

    pub fn negatives_per_example(&self) -> usize {
        self.negatives
    }

    /// Loss of every optimizer step taken so far.
    pub fn step_losses(&self) -> &[f64] {
        &self.step_losses
    }

    /// One optimizer step on `batch`; returns the batch loss.
    pub fn step(&mut self, batch: &[&TrainingPair]) -> Result<f64> {
        let negatives: Vec<Vec<Negative>> = batch
            .iter()
            .map(|p| self.sampler.sample(&mut self.rng, self.negatives, Some(p.target)))
            .collect();
        let out = batch_loss(&self.model, batch, &negatives, self.config.correction)?;
        if !out.loss.is_finite() || !out.grads.is_finite() {
            let dump: Vec<String> = batch
                .iter()
                .map(|p| format!("{:?} -> {} (w={})", p.query.raw, p.target, p.weight))
                .collect();
            log::error!("non-finite loss at epoch {} step {}: {}", self.epoch, self.step_losses.len(), dump.join("; "));
            return Err(Error::NonFiniteLoss(format!(
                "epoch {} step {} loss {} batch [{}]",
                self.epoch,
                self.step_losses.len(),
                out.loss,
                dump.join("; ")
            )));
        }
        self.model.encoder.after_forward(&out.cache);
        self.adam.step(&mut self.model, &out.grads);
        self.step_losses.push(out.loss);
        Ok(out.loss)
    }

    /// Shuffles `pairs` and makes one pass in minibatches.
    pub fn run_epoch(&mut self, pairs: &[TrainingPair]) -> Result<EpochLog> {
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let started = Instant::now();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        self.rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&TrainingPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            total += self.step(&batch)? * batch.len() as f64;
        }
        self.epoch += 1;
        Ok(EpochLog {
            epoch: self.epoch,
            mean_loss: total / pairs.len() as f64,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            seed: self.config.seed,
        })
    }

    /// Runs the configured number of epochs, calling `on_epoch` after each.
    pub fn fit<F>(&mut self, pairs: &[TrainingPair], mut on_epoch: F) -> Result<Vec<EpochLog>>
    where
        F: FnMut(&Trainer, &EpochLog) -> Result<()>,
    {
        let mut logs = Vec::with_capacity(self.config.epochs);
        while self.epoch < self.config.epochs {
            let log = self.run_epoch(pairs)?;
            log::info!("epoch {} mean loss {:.6} ({:.0} ms)", log.epoch, log.mean_loss, log.wall_ms);
            on_epoch(self, &log)?;
            logs.push(log);
        }
        Ok(logs)
    }
}

#[cfg(test)]
#[path = "trainer_tests.rs"]
mod tests;
