use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};

/// How a parameter's gradient is stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Dense,
    /// Lookup table; only rows touched by a batch receive gradient.
    Embedding,
}

/// Named access to trainable tensors, in a fixed order.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix, ParamKind));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix, ParamKind));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, m, _| n += m.as_slice().len());
        n
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, m, _| out.extend_from_slice(m.as_slice()));
        out
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |_, m, _| {
            let n = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        });
        assert_eq!(offset, flat.len(), "flat parameter length");
    }

    fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, m, _| ok &= m.is_finite());
        ok
    }
}

/// Row-sparse gradient of an embedding table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRows {
    pub cols: usize,
    pub rows: BTreeMap<u32, Vec<f64>>,
}

impl SparseRows {
    pub fn new(cols: usize) -> Self {
        SparseRows {
            cols,
            rows: BTreeMap::new(),
        }
    }

    pub fn row_mut(&mut self, id: u32) -> &mut [f64] {
        let cols = self.cols;
        self.rows.entry(id).or_insert_with(|| vec![0.0; cols])
    }

    /// `row[id] += scale * v`
    pub fn add(&mut self, id: u32, scale: f64, v: &[f64]) {
        for (r, x) in self.row_mut(id).iter_mut().zip(v) {
            *r += scale * x;
        }
    }
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    pub dense: BTreeMap<String, Matrix>,
    pub sparse: BTreeMap<String, SparseRows>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dense_mut(&mut self, name: &str, rows: usize, cols: usize) -> &mut Matrix {
        self.dense
            .entry(name.to_string())
            .or_insert_with(|| Matrix::zeros(rows, cols))
    }

    pub fn sparse_mut(&mut self, name: &str, cols: usize) -> &mut SparseRows {
        self.sparse
            .entry(name.to_string())
            .or_insert_with(|| SparseRows::new(cols))
    }

    /// `self += scale * other`
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        for (name, g) in &other.dense {
            let dst = self.dense_mut(name, g.rows(), g.cols());
            for (d, s) in dst.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *d += scale * s;
            }
        }
        for (name, g) in &other.sparse {
            let dst = self.sparse_mut(name, g.cols);
            for (id, row) in &g.rows {
                dst.add(*id, scale, row);
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.dense.values().all(|m| m.as_slice().iter().all(|x| *x == 0.0))
            && self.sparse.values().all(|s| s.rows.values().all(|r| r.iter().all(|x| *x == 0.0)))
    }

    pub fn is_finite(&self) -> bool {
        self.dense.values().all(Matrix::is_finite)
            && self.sparse.values().all(|s| s.rows.values().all(|r| r.iter().all(|x| x.is_finite())))
    }

    /// Dense flat vector aligned with [`Parameters::to_flat`]. Missing
    /// entries are zero.
    pub fn to_flat<P: Parameters + ?Sized>(&self, params: &P) -> Vec<f64> {
        let mut out = Vec::with_capacity(params.num_params());
        params.visit(&mut |name, m, kind| {
            let start = out.len();
            out.resize(start + m.as_slice().len(), 0.0);
            match kind {
                ParamKind::Dense => {
                    if let Some(g) = self.dense.get(name) {
                        out[start..].copy_from_slice(g.as_slice());
                    }
                }
                ParamKind::Embedding => {
                    if let Some(g) = self.sparse.get(name) {
                        for (id, row) in &g.rows {
                            let o = start + *id as usize * m.cols();
                            out[o..o + m.cols()].copy_from_slice(row);
                        }
                    }
                }
            }
        });
        out
    }
}

pub(crate) fn uniform_matrix(rng: &mut SeededRng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform_range(-bound, bound)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

pub(crate) fn check_generation(cached: u64, current: u64) -> Result<()> {
    if cached != current {
        return Err(Error::StaleActivationCache { cached, current });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Two {
        a: Matrix,
        e: Matrix,
    }

    impl Parameters for Two {
        fn visit(&self, f: &mut dyn FnMut(&str, &Matrix, ParamKind)) {
            f("a", &self.a, ParamKind::Dense);
            f("e", &self.e, ParamKind::Embedding);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix, ParamKind)) {
            f("a", &mut self.a, ParamKind::Dense);
            f("e", &mut self.e, ParamKind::Embedding);
        }
    }

    #[test]
    fn flat_round_trip_and_sparse_scatter() {
        let mut p = Two {
            a: Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap(),
            e: Matrix::from_vec(3, 2, vec![0.0; 6]).unwrap(),
        };
        let flat = p.to_flat();
        assert_eq!(flat.len(), 8);
        p.set_flat(&[9.0; 8]);
        assert!(p.to_flat().iter().all(|x| *x == 9.0));

        let mut g = Gradients::new();
        g.dense_mut("a", 1, 2).as_mut_slice()[1] = 5.0;
        g.sparse_mut("e", 2).add(2, 2.0, &[1.0, -1.0]);
        assert_eq!(g.to_flat(&p), vec![0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 2.0, -2.0]);
    }
}
