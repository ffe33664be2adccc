//! Offline evaluation: Precision@M over evaluation cases for one or more
//! (model, index) methods, and attention-weight dumps.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::QueryModel;
use crate::datapipe::{read_text, split_list};
use crate::error::{Error, Result};
use crate::index::EntityIndex;
use crate::model::{Encoder, EncoderKind};

pub const DEFAULT_MS: [usize; 4] = [1, 10, 20, 30];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalCase {
    pub query: String,
    pub truth: Vec<String>,
}

/// `query \t entity1;entity2;...`
pub fn parse_eval_cases(name: &str, text: &str) -> Result<Vec<EvalCase>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let loc = format!("{name}:{}", i + 1);
        let Some((query, truth)) = line.split_once('\t') else {
            return Err(Error::parse(loc, "expected query<TAB>entities"));
        };
        let truth = split_list(truth);
        if query.trim().is_empty() || truth.is_empty() {
            return Err(Error::parse(loc, "empty query or ground-truth set"));
        }
        out.push(EvalCase {
            query: query.trim().to_string(),
            truth,
        });
    }
    Ok(out)
}

pub fn load_eval_cases(path: &Path) -> Result<Vec<EvalCase>> {
    parse_eval_cases(&path.display().to_string(), &read_text(path)?)
}

/// `|P ∩ G| / M` over the first `m` retrieved items. Fewer than `m`
/// retrieved items count the shortfall as misses; repeats count once.
pub fn precision_at_m<S: AsRef<str>>(retrieved: &[S], truth: &HashSet<String>, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::MZero);
    }
    let mut seen = HashSet::new();
    let hits = retrieved
        .iter()
        .take(m)
        .map(AsRef::as_ref)
        .filter(|r| seen.insert(*r) && truth.contains(*r))
        .count();
    Ok(hits as f64 / m as f64)
}

/// How an index is queried during evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retrieval {
    Exact,
    /// Inverted-file search with the index's default probes; exact when
    /// the index has no clusters.
    Default,
}

pub struct Method {
    pub name: String,
    pub model: QueryModel,
    pub index: EntityIndex,
}

impl Method {
    pub fn new(name: impl Into<String>, model: QueryModel, index: EntityIndex) -> Result<Self> {
        let name = name.into();
        let meta = index.meta();
        if meta.checkpoint_hash != model.checkpoint_hash || meta.encoder != model.kind() {
            return Err(Error::MethodIndexMismatch {
                method: name,
                model: format!("{} {}", model.kind(), model.checkpoint_hash),
                index: format!("{} {}", meta.encoder, meta.checkpoint_hash),
            });
        }
        Ok(Method { name, model, index })
    }

    /// Ranked entity names for `query`; a query with no usable tokens
    /// retrieves nothing.
    pub fn retrieve(&self, query: &str, k: usize, retrieval: Retrieval) -> Result<Vec<String>> {
        let q = match self.model.embed(query) {
            Ok(q) => q,
            Err(Error::EmptyQuery(_)) => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let hits = match retrieval {
            Retrieval::Exact => self.index.topk_exact(&q, k)?,
            Retrieval::Default => self.index.topk(&q, k)?,
        };
        Ok(hits.into_iter().map(|h| h.name).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub encoder: EncoderKind,
    /// Aligned with [`EvalReport::ms`].
    pub precision: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ms: Vec<usize>,
    pub cases: usize,
    pub skipped_cases: usize,
    pub config_hash: String,
    pub rows: Vec<MethodRow>,
}

/// Drops ground-truth names the index does not know and then cases left
/// with none. Returns the surviving cases and the number dropped.
pub fn restrict_cases(cases: &[EvalCase], index: &EntityIndex) -> (Vec<EvalCase>, usize) {
    let mut kept = Vec::new();
    for c in cases {
        let truth: Vec<String> = c.truth.iter().filter(|e| index.id(e).is_some()).cloned().collect();
        if truth.len() < c.truth.len() {
            log::warn!("case {:?}: {} ground-truth entities not indexed", c.query, c.truth.len() - truth.len());
        }
        if !truth.is_empty() {
            kept.push(EvalCase {
                query: c.query.clone(),
                truth,
            });
        }
    }
    let dropped = cases.len() - kept.len();
    (kept, dropped)
}

/// Mean Precision@M per method. Cases are scored in parallel and summed in
/// case order.
pub fn evaluate(
    methods: &[Method],
    cases: &[EvalCase],
    ms: &[usize],
    retrieval: Retrieval,
    config_hash: &str,
) -> Result<EvalReport> {
    if cases.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if ms.contains(&0) {
        return Err(Error::MZero);
    }
    let max_m = ms.iter().copied().max().unwrap_or(1);
    let truths: Vec<HashSet<String>> = cases.iter().map(|c| c.truth.iter().cloned().collect()).collect();
    let mut rows = Vec::with_capacity(methods.len());
    for method in methods {
        let per_case: Vec<Vec<f64>> = cases
            .par_iter()
            .zip(truths.par_iter())
            .map(|(case, truth)| {
                let got = method.retrieve(&case.query, max_m, retrieval)?;
                ms.iter().map(|&m| precision_at_m(&got, truth, m)).collect()
            })
            .collect::<Result<_>>()?;
        let mut sums = vec![0.0; ms.len()];
        for p in &per_case {
            for (s, v) in sums.iter_mut().zip(p) {
                *s += v;
            }
        }
        rows.push(MethodRow {
            method: method.name.clone(),
            encoder: method.model.kind(),
            precision: sums.iter().map(|s| s / cases.len() as f64).collect(),
        });
    }
    Ok(EvalReport {
        ms: ms.to_vec(),
        cases: cases.len(),
        skipped_cases: 0,
        config_hash: config_hash.to_string(),
        rows,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
        let mut out = format!("{:<width$}", "method");
        for m in &self.ms {
            write!(out, "  {:>8}", format!("P@{m}")).expect("string");
        }
        out.push('\n');
        for r in &self.rows {
            write!(out, "{:<width$}", r.method).expect("string");
            for p in &r.precision {
                write!(out, "  {p:>8.4}").expect("string");
            }
            out.push('\n');
        }
        writeln!(out, "cases: {} (skipped {})", self.cases, self.skipped_cases).expect("string");
        out
    }
}

/// Basic tokens of `query` with their attention weights.
pub fn dump_attention(model: &QueryModel, query: &str) -> Result<Vec<(String, f64)>> {
    let Encoder::Enhanced(enc) = &model.encoder else {
        return Err(Error::ConfigInvalid("attention weights need an enhanced checkpoint".into()));
    };
    let q = model.tokenize(query)?;
    let states = enc.encode(&q)?;
    Ok(q.tokens.into_iter().zip(states.alpha().iter().copied()).collect())
}

#[cfg(test)]
mod tests;
