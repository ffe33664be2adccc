//! Entity vector index: exact and inverted-file cosine top-K, neighbor
//! lookup and concept grouping.

mod file;
mod group;
mod ivf;
pub mod kernel;
mod topk;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use group::{group_by_concept, ConceptGroup, OTHER_GROUP};
pub use ivf::{Ivf, IvfConfig, DEFAULT_CLUSTERS, DEFAULT_PROBES};

use crate::datapipe::{read_text, split_list};
use crate::error::{Error, Result};
use crate::index::kernel::dot_f32;
use crate::index::topk::TopK;
use crate::model::EncoderKind;
use crate::numerics::{Matrix, Matrix32};

/// `entity -> concepts`, loaded from `entity \t concept1;concept2`.
pub type ConceptMap = HashMap<String, Vec<String>>;

pub fn parse_concept_map(name: &str, text: &str) -> Result<ConceptMap> {
    let mut map = ConceptMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((entity, concepts)) = line.split_once('\t') else {
            return Err(Error::parse(format!("{name}:{}", i + 1), "expected entity<TAB>concepts"));
        };
        map.insert(entity.trim().to_string(), split_list(concepts));
    }
    Ok(map)
}

pub fn load_concept_map(path: &Path) -> Result<ConceptMap> {
    parse_concept_map(&path.display().to_string(), &read_text(path)?)
}

/// Provenance recorded in the index file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub encoder: EncoderKind,
    pub checkpoint_hash: String,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoredEntity {
    pub id: u32,
    pub name: String,
    /// Cosine similarity.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntityIndex {
    meta: IndexMeta,
    names: Vec<String>,
    name_to_id: HashMap<String, u32>,
    /// Unit rows.
    matrix: Matrix32,
    /// Restricted to indexed entities with at least one concept.
    concepts: Option<ConceptMap>,
    ivf: Option<Ivf>,
}

/// Unit-normalizes in `f64`; `None` for zero or non-finite rows.
fn unit_f32(row: impl Iterator<Item = f64> + Clone) -> Option<Vec<f32>> {
    let norm = row.clone().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(row.map(|x| (x / norm) as f32).collect())
}

/// Normalizes rows of an entity table into a cosine index.
pub fn build_index(
    table: &Matrix,
    names: &[String],
    concepts: Option<&ConceptMap>,
    meta: IndexMeta,
) -> Result<EntityIndex> {
    EntityIndex::from_rows(table.iter_rows().map(|r| r.iter().copied()), table.cols(), names, concepts, meta)
}

impl EntityIndex {
    pub fn from_rows<R, I>(
        rows: R,
        dim: usize,
        names: &[String],
        concepts: Option<&ConceptMap>,
        meta: IndexMeta,
    ) -> Result<Self>
    where
        R: Iterator<Item = I>,
        I: Iterator<Item = f64> + Clone,
    {
        let mut data = Vec::with_capacity(names.len() * dim);
        let mut zero = Vec::new();
        let mut count = 0;
        for (i, row) in rows.enumerate() {
            match unit_f32(row) {
                Some(v) if v.len() == dim => data.extend(v),
                Some(_) => return Err(Error::DimensionMismatch(format!("row {i} is not {dim}-d"))),
                None => {
                    zero.push(names.get(i).cloned().unwrap_or_else(|| format!("#{i}")));
                    data.extend(std::iter::repeat_n(0.0, dim));
                }
            }
            count += 1;
        }
        if count != names.len() {
            return Err(Error::DimensionMismatch(format!("{count} rows but {} names", names.len())));
        }
        if !zero.is_empty() {
            return Err(Error::ZeroNormEntity(zero));
        }
        Self::from_unit_matrix(Matrix32::from_vec(count, dim, data)?, names.to_vec(), concepts, meta)
    }

    /// `matrix` rows must already be unit length.
    pub(crate) fn from_unit_matrix(
        matrix: Matrix32,
        names: Vec<String>,
        concepts: Option<&ConceptMap>,
        meta: IndexMeta,
    ) -> Result<Self> {
        let mut name_to_id = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if name_to_id.insert(n.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate entity name {n:?}")));
            }
        }
        let concepts = concepts.map(|m| {
            names
                .iter()
                .filter_map(|n| m.get(n).filter(|c| !c.is_empty()).map(|c| (n.clone(), c.clone())))
                .collect()
        });
        Ok(EntityIndex {
            meta,
            names,
            name_to_id,
            matrix,
            concepts,
            ivf: None,
        })
    }

    /// Adds the inverted-file layout used by [`EntityIndex::topk_approx`].
    pub fn cluster(&mut self, config: &IvfConfig) -> Result<()> {
        self.ivf = Some(Ivf::build(&self.matrix, config)?);
        Ok(())
    }

    pub fn meta(&self) -> &IndexMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.name_to_id.get(name).copied()
    }

    pub fn row(&self, id: u32) -> &[f32] {
        self.matrix.row(id as usize)
    }

    pub fn matrix(&self) -> &Matrix32 {
        &self.matrix
    }

    pub fn ivf(&self) -> Option<&Ivf> {
        self.ivf.as_ref()
    }

    pub fn concept_map(&self) -> Option<&ConceptMap> {
        self.concepts.as_ref()
    }

    pub fn concepts_of(&self, name: &str) -> &[String] {
        self.concepts.as_ref().and_then(|c| c.get(name)).map_or(&[], Vec::as_slice)
    }

    /// Unit-length `f32` copy of `q`; a zero query stays zero.
    pub fn prepare_query(&self, q: &[f64]) -> Result<Vec<f32>> {
        if q.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!("query is {}-d, index {}-d", q.len(), self.dim())));
        }
        Ok(unit_f32(q.iter().copied()).unwrap_or_else(|| vec![0.0; q.len()]))
    }

    fn clamp_k(&self, k: usize) -> usize {
        if k > self.len() {
            log::warn!("requested top {k} from an index of {} entities; returning all", self.len());
        }
        k.min(self.len())
    }

    fn scored(&self, hits: Vec<(f64, u32)>) -> Vec<ScoredEntity> {
        hits.into_iter()
            .map(|(s, id)| ScoredEntity {
                id,
                name: self.names[id as usize].clone(),
                score: s.clamp(-1.0, 1.0),
            })
            .collect()
    }

    fn scan(&self, q: &[f32], k: usize, skip: Option<u32>) -> Vec<(f64, u32)> {
        let mut top = TopK::new(k);
        for (id, row) in self.matrix.iter_rows().enumerate() {
            if Some(id as u32) != skip {
                top.push(dot_f32(row, q), id as u32);
            }
        }
        top.into_sorted()
    }

    /// The `k` highest-cosine entities by full scan, ties to lower ids.
    pub fn topk_exact(&self, q: &[f64], k: usize) -> Result<Vec<ScoredEntity>> {
        let q = self.prepare_query(q)?;
        Ok(self.scored(self.scan(&q, self.clamp_k(k), None)))
    }

    /// The `k` highest-cosine entities among the `probes` nearest clusters.
    pub fn topk_approx(&self, q: &[f64], k: usize, probes: usize) -> Result<Vec<ScoredEntity>> {
        let ivf = self.ivf.as_ref().ok_or(Error::IndexNotClustered)?;
        if probes == 0 {
            return Err(Error::ConfigInvalid("probes must be >= 1".into()));
        }
        let q = self.prepare_query(q)?;
        Ok(self.scored(ivf.search(&self.matrix, &q, self.clamp_k(k), probes)))
    }

    /// Approximate search with the index's default probes when clustered,
    /// otherwise exact.
    pub fn topk(&self, q: &[f64], k: usize) -> Result<Vec<ScoredEntity>> {
        match &self.ivf {
            Some(ivf) => self.topk_approx(q, k, ivf.default_probes()),
            None => self.topk_exact(q, k),
        }
    }

    /// Nearest entities to `name` by its own row, excluding itself.
    pub fn entity_neighbors(&self, name: &str, n: usize) -> Result<Vec<ScoredEntity>> {
        let id = self.id(name).ok_or_else(|| Error::UnknownEntity(name.to_string()))?;
        let k = n.min(self.len().saturating_sub(1));
        Ok(self.scored(self.scan(self.row(id), k, Some(id))))
    }
}
