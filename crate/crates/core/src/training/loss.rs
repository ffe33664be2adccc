use crate::error::{Error, Result};
use crate::model::SparseRows;
use crate::numerics::{dot, log_sum_exp, softmax, Matrix};
use crate::training::sampler::Negative;

#[derive(Clone, Debug)]
pub struct SampledLoss {
    pub loss: f64,
    pub d_query: Vec<f64>,
    /// Gradient for each table row that took part.
    pub d_rows: SparseRows,
}

/// Cross-entropy of the target against the sampled negatives. Sampled
/// logits are `u_j·q - ln(k Q(j))` when `correct` is set; the target logit
/// is always `u_t·q`.
pub fn sampled_softmax_loss(
    q: &[f64],
    target: u32,
    negatives: &[Negative],
    table: &Matrix,
    correct: bool,
) -> Result<SampledLoss> {
    if q.len() != table.cols() {
        return Err(Error::DimensionMismatch(format!(
            "query dim {} vs entity dim {}",
            q.len(),
            table.cols()
        )));
    }
    if negatives.iter().any(|n| n.id == target) {
        return Err(Error::TargetInNegatives(target));
    }
    let k = negatives.len() as f64;
    let mut classes = Vec::with_capacity(negatives.len() + 1);
    classes.push(target);
    classes.extend(negatives.iter().map(|n| n.id));
    let mut logits = Vec::with_capacity(classes.len());
    logits.push(dot(table.row(target as usize), q));
    for n in negatives {
        let mut l = dot(table.row(n.id as usize), q);
        if correct {
            l -= (k * n.prob).ln();
        }
        logits.push(l);
    }
    let loss = log_sum_exp(&logits) - logits[0];
    let mut p = softmax(&logits);
    p[0] -= 1.0;
    let mut d_query = vec![0.0; q.len()];
    let mut d_rows = SparseRows::new(q.len());
    for (&id, &g) in classes.iter().zip(&p) {
        for (d, u) in d_query.iter_mut().zip(table.row(id as usize)) {
            *d += g * u;
        }
        d_rows.add(id, g, q);
    }
    Ok(SampledLoss { loss, d_query, d_rows })
}
