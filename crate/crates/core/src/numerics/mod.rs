//! Dense linear algebra, activations, stable softmax, a seeded RNG and a
//! finite-difference gradient checker.

mod matrix;
mod rng;

pub use matrix::{Matrix, Matrix32, Scalar};
pub use rng::{RngState, SeededRng};

use crate::error::{Error, Result};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += scale * x`
pub fn axpy(scale: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += scale * xi;
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Numerically stable `log(sum(exp(v)))`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Softmax with max-subtraction. An empty input gives an empty output.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Denominator floor for relative errors, per unit of loss magnitude.
/// Central differences of an exactly-zero gradient return rounding noise of
/// order `ulp(loss) / eps`, so such coordinates are judged on absolute error
/// against this floor instead.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

pub const DEFAULT_GRAD_CHECK_EPS: f64 = 1e-5;

/// Result of comparing an analytic gradient against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Central-difference check of `analytic` against `loss` around `params`.
///
/// The relative error of a coordinate is
/// `|a - n| / max(|a|, |n|, GRAD_CHECK_FLOOR * max(1, |loss(params)|))`.
pub fn grad_check<F>(mut loss: F, params: &[f64], analytic: &[f64], eps: f64) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} params vs {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let base = loss(params);
    if !base.is_finite() {
        return Err(Error::NonFiniteLoss(format!("loss at params is {base}")));
    }
    let floor = GRAD_CHECK_FLOOR * base.abs().max(1.0);
    let mut probe = params.to_vec();
    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = loss(&probe);
        probe[i] = orig - eps;
        let minus = loss(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteLoss(format!("coordinate {i}: f(+)={plus}, f(-)={minus}")));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        if rel > report.max_relative_error {
            report = GradCheck {
                max_relative_error: rel,
                worst_index: i,
                analytic: a,
                numeric,
            };
        }
    }
    Ok(report)
}
