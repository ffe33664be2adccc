//! Bidirectional LSTM over token embeddings, pooled by self-attention and
//! projected into the entity embedding space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::{check_generation, uniform_matrix, Gradients, ParamKind, Parameters};
use crate::numerics::{axpy, dot, sigmoid, softmax, Matrix, SeededRng};
use crate::text::TokenizedQuery;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnhancedConfig {
    pub emb_dim: usize,
    /// LSTM hidden units per direction.
    pub hidden: usize,
    /// Rows of the attention matrix.
    pub attention: usize,
    pub out_dim: usize,
    pub forget_bias: f64,
}

impl Default for EnhancedConfig {
    fn default() -> Self {
        EnhancedConfig {
            emb_dim: 128,
            hidden: 128,
            attention: 64,
            out_dim: 128,
            forget_bias: 1.0,
        }
    }
}

impl EnhancedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.emb_dim == 0 || self.hidden == 0 || self.attention == 0 || self.out_dim == 0 {
            return Err(Error::ConfigInvalid("enhanced encoder sizes must be positive".into()));
        }
        Ok(())
    }
}

/// One LSTM direction. Gates are stacked `[input, forget, cell, output]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    /// 4m x d
    pub w_x: Matrix,
    /// 4m x m
    pub w_h: Matrix,
    /// 1 x 4m
    pub b: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    /// k x 2m
    pub w: Matrix,
    /// 1 x k
    pub u: Matrix,
    /// 1 x k
    pub b: Matrix,
}

#[derive(Clone, Debug)]
struct Step {
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
}

/// Per-position states of one direction, indexed by sequence position.
#[derive(Clone, Debug)]
pub struct LstmTrace {
    steps: Vec<Step>,
    reverse: bool,
    pub hidden: Vec<Vec<f64>>,
}

impl LstmCell {
    fn new(rng: &mut SeededRng, d: usize, m: usize, forget_bias: f64) -> Self {
        let mut b = uniform_matrix(rng, 1, 4 * m, m);
        b.as_mut_slice()[m..2 * m].fill(forget_bias);
        LstmCell {
            w_x: uniform_matrix(rng, 4 * m, d, d),
            w_h: uniform_matrix(rng, 4 * m, m, m),
            b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.cols()
    }

    /// Runs from zero state, right to left when `reverse`.
    pub fn run(&self, inputs: &[&[f64]], reverse: bool) -> LstmTrace {
        let m = self.hidden();
        let n = inputs.len();
        let mut h = vec![0.0; m];
        let mut c = vec![0.0; m];
        let mut steps: Vec<Option<Step>> = vec![None; n];
        let mut hidden = vec![Vec::new(); n];
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            let mut z = self.w_x.matvec(inputs[t]);
            self.w_h.matvec_acc(&h, &mut z);
            for (zi, bi) in z.iter_mut().zip(self.b.as_slice()) {
                *zi += bi;
            }
            let i: Vec<f64> = z[..m].iter().map(|x| sigmoid(*x)).collect();
            let f: Vec<f64> = z[m..2 * m].iter().map(|x| sigmoid(*x)).collect();
            let g: Vec<f64> = z[2 * m..3 * m].iter().map(|x| x.tanh()).collect();
            let o: Vec<f64> = z[3 * m..].iter().map(|x| sigmoid(*x)).collect();
            let c_new: Vec<f64> = (0..m).map(|j| f[j] * c[j] + i[j] * g[j]).collect();
            let tanh_c: Vec<f64> = c_new.iter().map(|x| x.tanh()).collect();
            let h_new: Vec<f64> = (0..m).map(|j| o[j] * tanh_c[j]).collect();
            steps[t] = Some(Step {
                i,
                f,
                g,
                o,
                tanh_c,
                h_prev: std::mem::replace(&mut h, h_new.clone()),
                c_prev: std::mem::replace(&mut c, c_new),
            });
            hidden[t] = h_new;
        }
        LstmTrace {
            steps: steps.into_iter().map(|s| s.expect("every step visited")).collect(),
            reverse,
            hidden,
        }
    }

    /// Backpropagation through time. `dh[t]` is the loss gradient arriving
    /// at the hidden state of position `t`; returns per-position input
    /// gradients and accumulates weight gradients under `prefix`.
    fn backward(&self, trace: &LstmTrace, inputs: &[&[f64]], dh: &[Vec<f64>], grads: &mut Gradients, prefix: &str) -> Vec<Vec<f64>> {
        let m = self.hidden();
        let d = self.w_x.cols();
        let n = inputs.len();
        let mut dx = vec![vec![0.0; d]; n];
        let mut dh_next = vec![0.0; m];
        let mut dc_next = vec![0.0; m];
        let order: Vec<usize> = if trace.reverse { (0..n).collect() } else { (0..n).rev().collect() };
        let mut gwx = Matrix::zeros(4 * m, d);
        let mut gwh = Matrix::zeros(4 * m, m);
        let mut gb = vec![0.0; 4 * m];
        for t in order {
            let s = &trace.steps[t];
            let mut dz = vec![0.0; 4 * m];
            for j in 0..m {
                let dhj = dh[t][j] + dh_next[j];
                let do_ = dhj * s.tanh_c[j];
                let dc = dhj * s.o[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]) + dc_next[j];
                let di = dc * s.g[j];
                let dg = dc * s.i[j];
                let df = dc * s.c_prev[j];
                dc_next[j] = dc * s.f[j];
                dz[j] = di * s.i[j] * (1.0 - s.i[j]);
                dz[m + j] = df * s.f[j] * (1.0 - s.f[j]);
                dz[2 * m + j] = dg * (1.0 - s.g[j] * s.g[j]);
                dz[3 * m + j] = do_ * s.o[j] * (1.0 - s.o[j]);
            }
            gwx.add_outer(1.0, &dz, inputs[t]);
            gwh.add_outer(1.0, &dz, &s.h_prev);
            axpy(1.0, &dz, &mut gb);
            self.w_x.matvec_t_acc(&dz, &mut dx[t]);
            dh_next.fill(0.0);
            self.w_h.matvec_t_acc(&dz, &mut dh_next);
        }
        add_dense(grads, &format!("{prefix}.w_x"), &gwx);
        add_dense(grads, &format!("{prefix}.w_h"), &gwh);
        add_dense(grads, &format!("{prefix}.b"), &Matrix::from_vec(1, 4 * m, gb).expect("shape"));
        dx
    }
}

fn add_dense(grads: &mut Gradients, name: &str, g: &Matrix) {
    let dst = grads.dense_mut(name, g.rows(), g.cols());
    for (a, b) in dst.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *a += b;
    }
}

/// Hidden states of both directions: row `i` is `[h_fwd(i) ‖ h_bwd(i)]`.
#[derive(Clone, Debug)]
pub struct BiLstmOutput {
    pub states: Matrix,
    pub forward: LstmTrace,
    pub backward: LstmTrace,
}

pub fn bilstm_forward(fwd: &LstmCell, bwd: &LstmCell, inputs: &[&[f64]]) -> Result<BiLstmOutput> {
    if inputs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let forward = fwd.run(inputs, false);
    let backward = bwd.run(inputs, true);
    let rows: Vec<Vec<f64>> = forward
        .hidden
        .iter()
        .zip(&backward.hidden)
        .map(|(a, b)| a.iter().chain(b).copied().collect())
        .collect();
    Ok(BiLstmOutput {
        states: Matrix::from_rows(&rows)?,
        forward,
        backward,
    })
}

/// Attention internals kept for the backward pass.
#[derive(Clone, Debug)]
pub struct AttentionTrace {
    /// `tanh(W h_i + b)` per position.
    pub hidden: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// `alpha = softmax(U tanh(W Hᵀ + b))`, one weight per row of `states`.
pub fn attention(att: &Attention, states: &Matrix) -> Result<AttentionTrace> {
    if states.rows() == 0 {
        return Err(Error::EmptySequence);
    }
    if states.cols() != att.w.cols() {
        return Err(Error::DimensionMismatch(format!(
            "attention expects width {}, states have {}",
            att.w.cols(),
            states.cols()
        )));
    }
    let mut hidden = Vec::with_capacity(states.rows());
    let mut scores = Vec::with_capacity(states.rows());
    for h in states.iter_rows() {
        let s: Vec<f64> = att
            .w
            .matvec(h)
            .iter()
            .zip(att.b.as_slice())
            .map(|(x, b)| (x + b).tanh())
            .collect();
        scores.push(dot(att.u.as_slice(), &s));
        hidden.push(s);
    }
    let alpha = softmax(&scores);
    Ok(AttentionTrace { hidden, scores, alpha })
}

/// Weighted sum of the rows of `states`, then the linear map `proj`.
/// Returns `(pooled, q)`.
pub fn pool_and_project(states: &Matrix, alpha: &[f64], proj: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    if alpha.len() != states.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} attention weights for {} states",
            alpha.len(),
            states.rows()
        )));
    }
    if proj.cols() != states.cols() {
        return Err(Error::DimensionMismatch(format!(
            "projection expects width {}, states have {}",
            proj.cols(),
            states.cols()
        )));
    }
    let mut pooled = vec![0.0; states.cols()];
    for (a, h) in alpha.iter().zip(states.iter_rows()) {
        axpy(*a, h, &mut pooled);
    }
    let q = proj.matvec(&pooled);
    Ok((pooled, q))
}

/// Everything the encoder computes for one query.
#[derive(Clone, Debug)]
pub struct EncodedStates {
    pub bilstm: BiLstmOutput,
    pub attention: AttentionTrace,
    pub pooled: Vec<f64>,
    pub q: Vec<f64>,
}

impl EncodedStates {
    pub fn alpha(&self) -> &[f64] {
        &self.attention.alpha
    }

    pub fn states(&self) -> &Matrix {
        &self.bilstm.states
    }
}

#[derive(Clone, Debug)]
pub struct EnhancedCache {
    generation: u64,
    ids: Vec<Vec<u32>>,
    encoded: Vec<EncodedStates>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnhancedEncoder {
    config: EnhancedConfig,
    generation: u64,
    pub word_emb: Matrix,
    pub fwd: LstmCell,
    pub bwd: LstmCell,
    pub att: Attention,
    /// out_dim x 2m
    pub proj: Matrix,
}

impl EnhancedEncoder {
    pub fn new(config: EnhancedConfig, vocab_size: usize, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let (d, m, k) = (config.emb_dim, config.hidden, config.attention);
        let word_emb = uniform_matrix(rng, vocab_size, d, d);
        let fwd = LstmCell::new(rng, d, m, config.forget_bias);
        let bwd = LstmCell::new(rng, d, m, config.forget_bias);
        let att = Attention {
            w: uniform_matrix(rng, k, 2 * m, 2 * m),
            u: uniform_matrix(rng, 1, k, k),
            b: uniform_matrix(rng, 1, k, 2 * m),
        };
        let proj = uniform_matrix(rng, config.out_dim, 2 * m, 2 * m);
        Ok(EnhancedEncoder {
            config,
            generation: 0,
            word_emb,
            fwd,
            bwd,
            att,
            proj,
        })
    }

    /// Every tensor zero.
    pub fn zeros(config: EnhancedConfig, vocab_size: usize) -> Self {
        let mut enc = EnhancedEncoder::new(config, vocab_size, &mut SeededRng::new(0)).expect("config");
        enc.visit_mut(&mut |_, m, _| m.fill(0.0));
        enc
    }

    pub fn config(&self) -> &EnhancedConfig {
        &self.config
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    /// Runs the full encoder on the basic-level tokens of `q`.
    pub fn encode(&self, q: &TokenizedQuery) -> Result<EncodedStates> {
        if q.basic.is_empty() {
            return Err(Error::EmptyQuery(q.raw.clone()));
        }
        let inputs: Vec<&[f64]> = q.basic.iter().map(|&id| self.word_emb.row(id as usize)).collect();
        let bilstm = bilstm_forward(&self.fwd, &self.bwd, &inputs)?;
        let attention = attention(&self.att, &bilstm.states)?;
        let (pooled, q) = pool_and_project(&bilstm.states, &attention.alpha, &self.proj)?;
        Ok(EncodedStates {
            bilstm,
            attention,
            pooled,
            q,
        })
    }

    pub fn embed(&self, q: &TokenizedQuery) -> Result<Vec<f64>> {
        Ok(self.encode(q)?.q)
    }

    pub fn forward(&self, batch: &[&TokenizedQuery]) -> Result<(Vec<Vec<f64>>, EnhancedCache)> {
        let encoded: Vec<EncodedStates> = batch.iter().map(|q| self.encode(q)).collect::<Result<_>>()?;
        let out = encoded.iter().map(|e| e.q.clone()).collect();
        Ok((
            out,
            EnhancedCache {
                generation: self.generation,
                ids: batch.iter().map(|q| q.basic.clone()).collect(),
                encoded,
            },
        ))
    }

    pub fn backward(&self, cache: &EnhancedCache, upstream: &[Vec<f64>]) -> Result<Gradients> {
        check_generation(cache.generation, self.generation)?;
        if upstream.len() != cache.encoded.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} upstream gradients for a batch of {}",
                upstream.len(),
                cache.encoded.len()
            )));
        }
        let m = self.config.hidden;
        let k = self.config.attention;
        let mut grads = Gradients::new();
        for ((enc, ids), dq) in cache.encoded.iter().zip(&cache.ids).zip(upstream) {
            let states = &enc.bilstm.states;
            let n = states.rows();
            let alpha = &enc.attention.alpha;

            grads
                .dense_mut("proj.w", self.proj.rows(), self.proj.cols())
                .add_outer(1.0, dq, &enc.pooled);
            let dpooled = self.proj.matvec_t(dq);

            let mut dstates: Vec<Vec<f64>> = alpha.iter().map(|a| dpooled.iter().map(|x| a * x).collect()).collect();
            let dalpha: Vec<f64> = states.iter_rows().map(|h| dot(h, &dpooled)).collect();
            let weighted = dot(alpha, &dalpha);
            let dscores: Vec<f64> = alpha.iter().zip(&dalpha).map(|(a, da)| a * (da - weighted)).collect();

            let mut du = vec![0.0; k];
            let mut datt_w = Matrix::zeros(k, 2 * m);
            let mut datt_b = vec![0.0; k];
            for i in 0..n {
                let s = &enc.attention.hidden[i];
                axpy(dscores[i], s, &mut du);
                let dz: Vec<f64> = (0..k)
                    .map(|j| self.att.u.as_slice()[j] * dscores[i] * (1.0 - s[j] * s[j]))
                    .collect();
                datt_w.add_outer(1.0, &dz, states.row(i));
                axpy(1.0, &dz, &mut datt_b);
                self.att.w.matvec_t_acc(&dz, &mut dstates[i]);
            }
            add_dense(&mut grads, "att.w", &datt_w);
            add_dense(&mut grads, "att.u", &Matrix::from_vec(1, k, du)?);
            add_dense(&mut grads, "att.b", &Matrix::from_vec(1, k, datt_b)?);

            let dh_fwd: Vec<Vec<f64>> = dstates.iter().map(|r| r[..m].to_vec()).collect();
            let dh_bwd: Vec<Vec<f64>> = dstates.iter().map(|r| r[m..].to_vec()).collect();
            let inputs: Vec<&[f64]> = ids.iter().map(|&id| self.word_emb.row(id as usize)).collect();
            let dx_f = self.fwd.backward(&enc.bilstm.forward, &inputs, &dh_fwd, &mut grads, "lstm_fwd");
            let dx_b = self.bwd.backward(&enc.bilstm.backward, &inputs, &dh_bwd, &mut grads, "lstm_bwd");
            let emb = grads.sparse_mut("word_emb", self.config.emb_dim);
            for ((id, a), b) in ids.iter().zip(&dx_f).zip(&dx_b) {
                emb.add(*id, 1.0, a);
                emb.add(*id, 1.0, b);
            }
        }
        Ok(grads)
    }
}

impl Parameters for EnhancedEncoder {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix, ParamKind)) {
        f("word_emb", &self.word_emb, ParamKind::Embedding);
        f("lstm_fwd.w_x", &self.fwd.w_x, ParamKind::Dense);
        f("lstm_fwd.w_h", &self.fwd.w_h, ParamKind::Dense);
        f("lstm_fwd.b", &self.fwd.b, ParamKind::Dense);
        f("lstm_bwd.w_x", &self.bwd.w_x, ParamKind::Dense);
        f("lstm_bwd.w_h", &self.bwd.w_h, ParamKind::Dense);
        f("lstm_bwd.b", &self.bwd.b, ParamKind::Dense);
        f("att.w", &self.att.w, ParamKind::Dense);
        f("att.u", &self.att.u, ParamKind::Dense);
        f("att.b", &self.att.b, ParamKind::Dense);
        f("proj.w", &self.proj, ParamKind::Dense);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix, ParamKind)) {
        self.generation += 1;
        f("word_emb", &mut self.word_emb, ParamKind::Embedding);
        f("lstm_fwd.w_x", &mut self.fwd.w_x, ParamKind::Dense);
        f("lstm_fwd.w_h", &mut self.fwd.w_h, ParamKind::Dense);
        f("lstm_fwd.b", &mut self.fwd.b, ParamKind::Dense);
        f("lstm_bwd.w_x", &mut self.bwd.w_x, ParamKind::Dense);
        f("lstm_bwd.w_h", &mut self.bwd.w_h, ParamKind::Dense);
        f("lstm_bwd.b", &mut self.bwd.b, ParamKind::Dense);
        f("att.w", &mut self.att.w, ParamKind::Dense);
        f("att.u", &mut self.att.u, ParamKind::Dense);
        f("att.b", &mut self.att.b, ParamKind::Dense);
        f("proj.w", &mut self.proj, ParamKind::Dense);
    }
}

#[cfg(test)]
#[path = "enhanced_tests.rs"]
mod tests;
