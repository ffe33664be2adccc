//! Averaged token and ngram embeddings through three tanh layers with batch
//! normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::{check_generation, uniform_matrix, Gradients, ParamKind, Parameters};
use crate::numerics::{Matrix, SeededRng};
use crate::text::TokenizedQuery;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseConfig {
    /// Width of both the word and ngram embedding tables.
    pub emb_dim: usize,
    pub hidden: [usize; 2],
    pub out_dim: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for BaseConfig {
    fn default() -> Self {
        BaseConfig {
            emb_dim: 128,
            hidden: [512, 256],
            out_dim: 128,
            bn_eps: 1e-5,
            bn_momentum: 0.99,
        }
    }
}

impl BaseConfig {
    pub fn widths(&self) -> [usize; 3] {
        [self.hidden[0], self.hidden[1], self.out_dim]
    }

    pub fn input_dim(&self) -> usize {
        2 * self.emb_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.emb_dim == 0 || self.out_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::ConfigInvalid("base encoder widths must be positive".into()));
        }
        if !(self.bn_eps > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::ConfigInvalid("batch-norm eps must be > 0 and momentum in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; requires a minibatch.
    Train,
    /// Running statistics.
    Infer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// out x in
    pub w: Matrix,
    /// 1 x out
    pub b: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Matrix,
    pub beta: Matrix,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaseEncoder {
    config: BaseConfig,
    generation: u64,
    pub word_emb: Matrix,
    pub ngram_emb: Matrix,
    pub layers: [Dense; 3],
    pub norms: [BatchNorm; 3],
}

const LAYER_NAMES: [&str; 3] = ["fc1", "fc2", "fc3"];
const NORM_NAMES: [&str; 3] = ["bn1", "bn2", "bn3"];

#[derive(Clone, Debug)]
struct LayerCache {
    input: Vec<Vec<f64>>,
    zhat: Vec<Vec<f64>>,
    inv_std: Vec<f64>,
    act: Vec<Vec<f64>>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

/// Activations kept by [`BaseEncoder::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct BaseCache {
    generation: u64,
    mode: Mode,
    words: Vec<Vec<u32>>,
    ngrams: Vec<Vec<u32>>,
    layers: Vec<LayerCache>,
}

impl BaseCache {
    pub fn batch_len(&self) -> usize {
        self.words.len()
    }

    /// Pre-normalization batch mean and biased variance of layer `l`.
    pub fn batch_stats(&self, l: usize) -> (&[f64], &[f64]) {
        (&self.layers[l].mean, &self.layers[l].var)
    }
}

impl BaseEncoder {
    pub fn new(config: BaseConfig, vocab_size: usize, num_buckets: usize, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let d = config.emb_dim;
        let word_emb = uniform_matrix(rng, vocab_size, d, d);
        let ngram_emb = uniform_matrix(rng, num_buckets, d, d);
        let mut fan_in = config.input_dim();
        let mut layers = Vec::with_capacity(3);
        let mut norms = Vec::with_capacity(3);
        for width in config.widths() {
            layers.push(Dense {
                w: uniform_matrix(rng, width, fan_in, fan_in),
                b: uniform_matrix(rng, 1, width, fan_in),
            });
            norms.push(BatchNorm::identity(width));
            fan_in = width;
        }
        Ok(BaseEncoder {
            config,
            generation: 0,
            word_emb,
            ngram_emb,
            layers: layers.try_into().expect("three layers"),
            norms: norms.try_into().expect("three norms"),
        })
    }

    /// Every trainable tensor zero; running statistics at mean 0, variance 1.
    pub fn zeros(config: BaseConfig, vocab_size: usize, num_buckets: usize) -> Self {
        let mut enc = BaseEncoder::new(config, vocab_size, num_buckets, &mut SeededRng::new(0)).expect("config");
        enc.visit_mut(&mut |_, m, _| m.fill(0.0));
        enc
    }

    pub fn config(&self) -> &BaseConfig {
        &self.config
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    /// `[mean(word rows of basic ++ semantic) ‖ mean(ngram rows)]`; the
    /// ngram half is zero when the query has no ngrams.
    pub fn embed_average(&self, q: &TokenizedQuery) -> Result<Vec<f64>> {
        if q.basic.is_empty() {
            return Err(Error::EmptyQuery(q.raw.clone()));
        }
        let d = self.config.emb_dim;
        let mut out = vec![0.0; 2 * d];
        let words = q.basic.iter().chain(&q.semantic);
        let n_words = (q.basic.len() + q.semantic.len()) as f64;
        for &id in words {
            for (o, x) in out[..d].iter_mut().zip(self.word_emb.row(id as usize)) {
                *o += x;
            }
        }
        out[..d].iter_mut().for_each(|x| *x /= n_words);
        if !q.ngrams.is_empty() {
            for &id in &q.ngrams {
                for (o, x) in out[d..].iter_mut().zip(self.ngram_emb.row(id as usize)) {
                    *o += x;
                }
            }
            let n = q.ngrams.len() as f64;
            out[d..].iter_mut().for_each(|x| *x /= n);
        }
        Ok(out)
    }

    pub fn forward(&self, batch: &[&TokenizedQuery], mode: Mode) -> Result<(Vec<Vec<f64>>, BaseCache)> {
        if batch.is_empty() {
            return Err(Error::DimensionMismatch("empty batch".into()));
        }
        let mut x: Vec<Vec<f64>> = batch.iter().map(|q| self.embed_average(q)).collect::<Result<_>>()?;
        let eps = self.config.bn_eps;
        let bsz = batch.len() as f64;
        let mut caches = Vec::with_capacity(3);
        for (layer, norm) in self.layers.iter().zip(&self.norms) {
            let width = layer.w.rows();
            let z: Vec<Vec<f64>> = x
                .iter()
                .map(|xi| {
                    let mut zi = layer.w.matvec(xi);
                    for (a, b) in zi.iter_mut().zip(layer.b.as_slice()) {
                        *a += b;
                    }
                    zi
                })
                .collect();
            let mut mean = vec![0.0; width];
            let mut var = vec![0.0; width];
            for zi in &z {
                for (m, v) in mean.iter_mut().zip(zi) {
                    *m += v / bsz;
                }
            }
            for zi in &z {
                for ((s, v), m) in var.iter_mut().zip(zi).zip(&mean) {
                    *s += (v - m) * (v - m) / bsz;
                }
            }
            let (centre, spread) = match mode {
                Mode::Train => (&mean, &var),
                Mode::Infer => (&norm.running_mean, &norm.running_var),
            };
            let inv_std: Vec<f64> = spread.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let mut zhat = Vec::with_capacity(z.len());
            let mut act = Vec::with_capacity(z.len());
            for zi in &z {
                let h: Vec<f64> = (0..width).map(|j| (zi[j] - centre[j]) * inv_std[j]).collect();
                let a: Vec<f64> = (0..width)
                    .map(|j| (norm.gamma.as_slice()[j] * h[j] + norm.beta.as_slice()[j]).tanh())
                    .collect();
                zhat.push(h);
                act.push(a);
            }
            caches.push(LayerCache {
                input: std::mem::replace(&mut x, act.clone()),
                zhat,
                inv_std,
                act,
                mean,
                var,
            });
        }
        let cache = BaseCache {
            generation: self.generation,
            mode,
            words: batch.iter().map(|q| q.basic.iter().chain(&q.semantic).copied().collect()).collect(),
            ngrams: batch.iter().map(|q| q.ngrams.clone()).collect(),
            layers: caches,
        };
        Ok((x, cache))
    }

    /// Inference-mode embedding of a single query.
    pub fn embed(&self, q: &TokenizedQuery) -> Result<Vec<f64>> {
        let (mut out, _) = self.forward(&[q], Mode::Infer)?;
        Ok(out.pop().expect("one output"))
    }

    pub fn backward(&self, cache: &BaseCache, upstream: &[Vec<f64>]) -> Result<Gradients> {
        check_generation(cache.generation, self.generation)?;
        if upstream.len() != cache.batch_len() {
            return Err(Error::DimensionMismatch(format!(
                "{} upstream gradients for a batch of {}",
                upstream.len(),
                cache.batch_len()
            )));
        }
        let bsz = upstream.len() as f64;
        let mut grads = Gradients::new();
        let mut da: Vec<Vec<f64>> = upstream.to_vec();
        for l in (0..3).rev() {
            let lc = &cache.layers[l];
            let layer = &self.layers[l];
            let gamma = self.norms[l].gamma.as_slice();
            let width = layer.w.rows();
            let dy: Vec<Vec<f64>> = da
                .iter()
                .zip(&lc.act)
                .map(|(g, a)| g.iter().zip(a).map(|(g, a)| g * (1.0 - a * a)).collect())
                .collect();
            let mut dgamma = vec![0.0; width];
            let mut dbeta = vec![0.0; width];
            for (dyi, hi) in dy.iter().zip(&lc.zhat) {
                for j in 0..width {
                    dgamma[j] += dyi[j] * hi[j];
                    dbeta[j] += dyi[j];
                }
            }
            let dzhat: Vec<Vec<f64>> = dy
                .iter()
                .map(|dyi| dyi.iter().zip(gamma).map(|(g, s)| g * s).collect())
                .collect();
            let dz: Vec<Vec<f64>> = match cache.mode {
                Mode::Infer => dzhat
                    .iter()
                    .map(|d| d.iter().zip(&lc.inv_std).map(|(d, s)| d * s).collect())
                    .collect(),
                Mode::Train => {
                    let mut sum = vec![0.0; width];
                    let mut sum_h = vec![0.0; width];
                    for (d, h) in dzhat.iter().zip(&lc.zhat) {
                        for j in 0..width {
                            sum[j] += d[j];
                            sum_h[j] += d[j] * h[j];
                        }
                    }
                    dzhat
                        .iter()
                        .zip(&lc.zhat)
                        .map(|(d, h)| {
                            (0..width)
                                .map(|j| lc.inv_std[j] / bsz * (bsz * d[j] - sum[j] - h[j] * sum_h[j]))
                                .collect()
                        })
                        .collect()
                }
            };
            let gw = grads.dense_mut(&format!("{}.w", LAYER_NAMES[l]), width, layer.w.cols());
            for (dzi, xi) in dz.iter().zip(&lc.input) {
                gw.add_outer(1.0, dzi, xi);
            }
            let gb = grads.dense_mut(&format!("{}.b", LAYER_NAMES[l]), 1, width);
            for dzi in &dz {
                for (g, d) in gb.as_mut_slice().iter_mut().zip(dzi) {
                    *g += d;
                }
            }
            grads
                .dense_mut(&format!("{}.gamma", NORM_NAMES[l]), 1, width)
                .as_mut_slice()
                .copy_from_slice(&dgamma);
            grads
                .dense_mut(&format!("{}.beta", NORM_NAMES[l]), 1, width)
                .as_mut_slice()
                .copy_from_slice(&dbeta);
            da = dz.iter().map(|dzi| layer.w.matvec_t(dzi)).collect();
        }
        let d = self.config.emb_dim;
        let words = grads.sparse_mut("word_emb", d);
        for (dx, ids) in da.iter().zip(&cache.words) {
            let scale = 1.0 / ids.len() as f64;
            for &id in ids {
                words.add(id, scale, &dx[..d]);
            }
        }
        let ngrams = grads.sparse_mut("ngram_emb", d);
        for (dx, ids) in da.iter().zip(&cache.ngrams) {
            if ids.is_empty() {
                continue;
            }
            let scale = 1.0 / ids.len() as f64;
            for &id in ids {
                ngrams.add(id, scale, &dx[d..]);
            }
        }
        Ok(grads)
    }

    /// Exponential moving average of the batch statistics in `cache`.
    pub fn update_running_stats(&mut self, cache: &BaseCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = self.config.bn_momentum;
        for (norm, lc) in self.norms.iter_mut().zip(&cache.layers) {
            for (r, b) in norm.running_mean.iter_mut().zip(&lc.mean) {
                *r = m * *r + (1.0 - m) * b;
            }
            for (r, b) in norm.running_var.iter_mut().zip(&lc.var) {
                *r = m * *r + (1.0 - m) * b;
            }
        }
    }

    /// Running statistics as `(name, values)`, in checkpoint order.
    pub fn buffers(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (name, norm) in NORM_NAMES.iter().zip(&self.norms) {
            out.push((format!("{name}.running_mean"), norm.running_mean.as_slice()));
            out.push((format!("{name}.running_var"), norm.running_var.as_slice()));
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out = Vec::new();
        for (name, norm) in NORM_NAMES.iter().zip(self.norms.iter_mut()) {
            out.push((format!("{name}.running_mean"), &mut norm.running_mean));
            out.push((format!("{name}.running_var"), &mut norm.running_var));
        }
        out
    }
}

impl BatchNorm {
    fn identity(width: usize) -> Self {
        BatchNorm {
            gamma: Matrix::from_vec(1, width, vec![1.0; width]).expect("shape"),
            beta: Matrix::zeros(1, width),
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

impl Parameters for BaseEncoder {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix, ParamKind)) {
        f("word_emb", &self.word_emb, ParamKind::Embedding);
        f("ngram_emb", &self.ngram_emb, ParamKind::Embedding);
        for l in 0..3 {
            f(&format!("{}.w", LAYER_NAMES[l]), &self.layers[l].w, ParamKind::Dense);
            f(&format!("{}.b", LAYER_NAMES[l]), &self.layers[l].b, ParamKind::Dense);
            f(&format!("{}.gamma", NORM_NAMES[l]), &self.norms[l].gamma, ParamKind::Dense);
            f(&format!("{}.beta", NORM_NAMES[l]), &self.norms[l].beta, ParamKind::Dense);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix, ParamKind)) {
        self.generation += 1;
        f("word_emb", &mut self.word_emb, ParamKind::Embedding);
        f("ngram_emb", &mut self.ngram_emb, ParamKind::Embedding);
        for l in 0..3 {
            f(&format!("{}.w", LAYER_NAMES[l]), &mut self.layers[l].w, ParamKind::Dense);
            f(&format!("{}.b", LAYER_NAMES[l]), &mut self.layers[l].b, ParamKind::Dense);
            f(&format!("{}.gamma", NORM_NAMES[l]), &mut self.norms[l].gamma, ParamKind::Dense);
            f(&format!("{}.beta", NORM_NAMES[l]), &mut self.norms[l].beta, ParamKind::Dense);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dot, grad_check};

    fn desk() -> BaseConfig {
        BaseConfig {
            emb_dim: 6,
            hidden: [10, 8],
            out_dim: 5,
            ..BaseConfig::default()
        }
    }

    fn query(basic: &[u32], semantic: &[u32], ngrams: &[u32]) -> TokenizedQuery {
        TokenizedQuery {
            raw: String::new(),
            tokens: basic.iter().map(|i| i.to_string()).collect(),
            basic: basic.to_vec(),
            semantic: semantic.to_vec(),
            ngrams: ngrams.to_vec(),
        }
    }

    fn random_encoder(seed: u64) -> BaseEncoder {
        let mut rng = SeededRng::new(seed);
        let mut enc = BaseEncoder::new(desk(), 12, 20, &mut rng).unwrap();
        // move batch-norm affine terms and running stats off their defaults
        enc.visit_mut(&mut |name, m, _| {
            if name.ends_with("gamma") || name.ends_with("beta") {
                for x in m.as_mut_slice() {
                    *x += rng.uniform_range(-0.5, 0.5);
                }
            }
        });
        for (_, buf) in enc.buffers_mut() {
            for x in buf.iter_mut() {
                *x += rng.uniform_range(0.1, 0.6);
            }
        }
        enc
    }

    #[test]
    fn default_widths() {
        let c = BaseConfig::default();
        assert_eq!(c.widths(), [512, 256, 128]);
        assert_eq!(c.emb_dim, 128);
        assert_eq!(c.input_dim(), 256);
    }

    #[test]
    fn average_of_single_token() {
        let enc = random_encoder(1);
        let q = query(&[4], &[], &[]);
        let v = enc.embed_average(&q).unwrap();
        assert_eq!(&v[..6], enc.word_emb.row(4));
        assert!(v[6..].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn average_of_two_tokens_by_hand() {
        let enc = random_encoder(2);
        let q = query(&[3, 7], &[], &[5]);
        let v = enc.embed_average(&q).unwrap();
        for j in 0..6 {
            let want = (enc.word_emb.get(3, j) + enc.word_emb.get(7, j)) / 2.0;
            assert!((v[j] - want).abs() < 1e-15);
            assert_eq!(v[6 + j], enc.ngram_emb.get(5, j));
        }
    }

    #[test]
    fn zero_tables_give_zero_average() {
        let enc = BaseEncoder::zeros(desk(), 12, 20);
        let v = enc.embed_average(&query(&[2, 3], &[4], &[1, 2])).unwrap();
        assert!(v.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn empty_query_rejected() {
        let enc = random_encoder(3);
        assert!(matches!(enc.embed_average(&query(&[], &[], &[])), Err(Error::EmptyQuery(_))));
    }

    #[test]
    fn zero_params_give_zero_output() {
        let enc = BaseEncoder::zeros(desk(), 12, 20);
        let a = query(&[2, 3], &[2, 3], &[1]);
        let b = query(&[5], &[5], &[]);
        for mode in [Mode::Train, Mode::Infer] {
            let (out, _) = enc.forward(&[&a, &b], mode).unwrap();
            assert!(out.iter().flatten().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let enc = random_encoder(4);
        let q = query(&[2, 9], &[2, 9], &[3, 4]);
        let a = enc.embed(&q).unwrap();
        let b = random_encoder(4).embed(&q).unwrap();
        assert_eq!(a, b);
    }

    /// Straight-line recomputation, one layer at a time.
    fn reference_forward(enc: &BaseEncoder, batch: &[&TokenizedQuery], train: bool) -> Vec<Vec<f64>> {
        let mut x: Vec<Vec<f64>> = batch.iter().map(|q| enc.embed_average(q).unwrap()).collect();
        for l in 0..3 {
            let w = &enc.layers[l].w;
            let b = enc.layers[l].b.as_slice();
            let z: Vec<Vec<f64>> = x
                .iter()
                .map(|xi| (0..w.rows()).map(|r| dot(w.row(r), xi) + b[r]).collect())
                .collect();
            let n = z.len() as f64;
            x = z
                .iter()
                .map(|zi| {
                    (0..zi.len())
                        .map(|j| {
                            let (mu, var) = if train {
                                let mu = z.iter().map(|r| r[j]).sum::<f64>() / n;
                                let var = z.iter().map(|r| (r[j] - mu).powi(2)).sum::<f64>() / n;
                                (mu, var)
                            } else {
                                (enc.norms[l].running_mean[j], enc.norms[l].running_var[j])
                            };
                            let h = (zi[j] - mu) / (var + 1e-5).sqrt();
                            (enc.norms[l].gamma.as_slice()[j] * h + enc.norms[l].beta.as_slice()[j]).tanh()
                        })
                        .collect()
                })
                .collect();
        }
        x
    }

    #[test]
    fn forward_matches_reference() {
        let enc = random_encoder(5);
        let qs = [
            query(&[2, 3], &[2, 3], &[1, 2]),
            query(&[4], &[4], &[]),
            query(&[5, 6, 7], &[5, 10], &[3, 4, 5]),
            query(&[8, 9], &[11], &[6]),
        ];
        let batch: Vec<&TokenizedQuery> = qs.iter().collect();
        for (mode, train) in [(Mode::Train, true), (Mode::Infer, false)] {
            let (out, _) = enc.forward(&batch, mode).unwrap();
            let want = reference_forward(&enc, &batch, train);
            for (a, b) in out.iter().flatten().zip(want.iter().flatten()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn order_invariant() {
        let enc = random_encoder(6);
        let a = enc.embed(&query(&[2, 3, 4], &[2, 3, 4], &[])).unwrap();
        let b = enc.embed(&query(&[4, 2, 3], &[3, 4, 2], &[])).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_norm_statistics() {
        let enc = random_encoder(7);
        let qs: Vec<TokenizedQuery> = (0..6).map(|i| query(&[2 + i, 3 + i], &[2 + i], &[i])).collect();
        let batch: Vec<&TokenizedQuery> = qs.iter().collect();
        let (_, cache) = enc.forward(&batch, Mode::Train).unwrap();
        for l in 0..3 {
            let lc = &cache.layers[l];
            let n = lc.zhat.len() as f64;
            for j in 0..lc.mean.len() {
                let gamma = enc.norms[l].gamma.as_slice()[j];
                let beta = enc.norms[l].beta.as_slice()[j];
                let y: Vec<f64> = lc.zhat.iter().map(|h| gamma * h[j] + beta).collect();
                let mean = y.iter().sum::<f64>() / n;
                let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                assert!((mean - beta).abs() < 1e-6);
                // normalization divides by sqrt(var + eps), not sqrt(var)
                let shrink = lc.var[j] / (lc.var[j] + 1e-5);
                assert!((var - gamma * gamma * shrink).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let enc = random_encoder(8);
        let qs = [query(&[2, 3], &[2], &[1]), query(&[4], &[4], &[2])];
        let batch: Vec<&TokenizedQuery> = qs.iter().collect();
        let (out, cache) = enc.forward(&batch, Mode::Train).unwrap();
        let zero: Vec<Vec<f64>> = out.iter().map(|o| vec![0.0; o.len()]).collect();
        let g = enc.backward(&cache, &zero).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn stale_cache_rejected() {
        let mut enc = random_encoder(9);
        let q = query(&[2], &[2], &[]);
        let (out, cache) = enc.forward(&[&q], Mode::Infer).unwrap();
        enc.visit_mut(&mut |_, _, _| {});
        let err = enc.backward(&cache, &out).unwrap_err();
        assert!(matches!(err, Error::StaleActivationCache { .. }));
    }

    fn check_gradients(mode: Mode, qs: &[TokenizedQuery]) -> f64 {
        let enc = random_encoder(10);
        let batch: Vec<&TokenizedQuery> = qs.iter().collect();
        let mut rng = SeededRng::new(11);
        let targets: Vec<Vec<f64>> = qs.iter().map(|_| (0..5).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).collect();
        // loss = sum_b <target_b, q_b>, so the upstream gradient is the target
        let (_, cache) = enc.forward(&batch, mode).unwrap();
        let grads = enc.backward(&cache, &targets).unwrap();
        let analytic = grads.to_flat(&enc);
        let mut probe = enc.clone();
        let loss = |flat: &[f64]| {
            probe.set_flat(flat);
            let (out, _) = probe.forward(&batch, mode).unwrap();
            out.iter().zip(&targets).map(|(o, t)| dot(o, t)).sum::<f64>()
        };
        grad_check(loss, &enc.to_flat(), &analytic, 1e-5).unwrap().max_relative_error
    }

    #[test]
    fn gradients_train_mode() {
        let qs = vec![
            query(&[2, 3], &[2, 3], &[1, 2]),
            query(&[4, 5, 6], &[4, 11], &[3, 4, 5]),
            query(&[7], &[7], &[]),
        ];
        let err = check_gradients(Mode::Train, &qs);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradients_single_example() {
        let err = check_gradients(Mode::Infer, &[query(&[2, 3, 9], &[2, 10], &[7, 8])]);
        assert!(err < 1e-4, "max relative error {err}");
        let err = check_gradients(Mode::Train, &[query(&[2, 3, 9], &[2, 10], &[7, 8])]);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn untouched_rows_get_no_gradient() {
        let enc = random_encoder(12);
        let q = query(&[2, 3], &[2, 3], &[4]);
        let (out, cache) = enc.forward(&[&q], Mode::Infer).unwrap();
        let g = enc.backward(&cache, &out).unwrap();
        let words: Vec<u32> = g.sparse["word_emb"].rows.keys().copied().collect();
        assert_eq!(words, vec![2, 3]);
        let ngrams: Vec<u32> = g.sparse["ngram_emb"].rows.keys().copied().collect();
        assert_eq!(ngrams, vec![4]);
        let flat = g.to_flat(&enc);
        let row5 = 5 * 6;
        assert!(flat[row5..row5 + 6].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let mut enc = random_encoder(13);
        let qs = [query(&[2], &[2], &[]), query(&[3], &[3], &[])];
        let batch: Vec<&TokenizedQuery> = qs.iter().collect();
        let before = enc.norms[0].running_mean.clone();
        let (_, cache) = enc.forward(&batch, Mode::Train).unwrap();
        enc.update_running_stats(&cache);
        let (mean, _) = cache.batch_stats(0);
        for j in 0..before.len() {
            let want = 0.99 * before[j] + 0.01 * mean[j];
            assert!((enc.norms[0].running_mean[j] - want).abs() < 1e-15);
        }
    }
}
