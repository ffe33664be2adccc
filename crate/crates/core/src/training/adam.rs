use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{Gradients, ParamKind, Parameters};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with lazy updates for embedding tables: rows without gradient in a
/// step keep both their values and their moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    lr: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64, config: AdamConfig) -> Self {
        Adam {
            config,
            lr,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &Gradients) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let lr_t = self.lr * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t));
        let moments = &mut self.moments;
        let update = |theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for j in 0..theta.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                theta[j] -= lr_t * m[j] / (v[j].sqrt() + eps);
            }
        };
        params.visit_mut(&mut |name, tensor, kind| {
            let len = tensor.as_slice().len();
            match kind {
                ParamKind::Dense => {
                    let Some(g) = grads.dense.get(name) else { return };
                    let (m, v) = moments
                        .entry(name.to_string())
                        .or_insert_with(|| (vec![0.0; len], vec![0.0; len]));
                    update(tensor.as_mut_slice(), g.as_slice(), m, v);
                }
                ParamKind::Embedding => {
                    let Some(g) = grads.sparse.get(name) else { return };
                    let cols = tensor.cols();
                    let (m, v) = moments
                        .entry(name.to_string())
                        .or_insert_with(|| (vec![0.0; len], vec![0.0; len]));
                    for (&id, row) in &g.rows {
                        let span = id as usize * cols..(id as usize + 1) * cols;
                        update(
                            &mut tensor.as_mut_slice()[span.clone()],
                            row,
                            &mut m[span.clone()],
                            &mut v[span],
                        );
                    }
                }
            }
        });
    }
}
