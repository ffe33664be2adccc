use std::collections::HashMap;

use serde::Serialize;

use crate::index::{ConceptMap, ScoredEntity};

pub const OTHER_GROUP: &str = "other";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConceptGroup {
    pub concept: String,
    pub members: Vec<ScoredEntity>,
}

/// Partitions ranked `results` by concept. An entity with several concepts
/// joins the one whose best-ranked entity comes first (ties to the concept
/// listed first); entities without concepts go to [`OTHER_GROUP`]. Groups
/// are ordered by their first member and keep the input order inside.
pub fn group_by_concept(results: &[ScoredEntity], concepts: &ConceptMap) -> Vec<ConceptGroup> {
    let none: Vec<String> = Vec::new();
    let of = |r: &ScoredEntity| concepts.get(&r.name).unwrap_or(&none);
    let mut first_rank: HashMap<&str, usize> = HashMap::new();
    for (i, r) in results.iter().enumerate() {
        for c in of(r) {
            first_rank.entry(c.as_str()).or_insert(i);
        }
    }
    let mut groups: Vec<ConceptGroup> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for r in results {
        let chosen = of(r)
            .iter()
            .min_by_key(|c| first_rank[c.as_str()])
            .map_or(OTHER_GROUP, String::as_str);
        let g = *slot.entry(chosen.to_string()).or_insert_with(|| {
            groups.push(ConceptGroup {
                concept: chosen.to_string(),
                members: Vec::new(),
            });
            groups.len() - 1
        });
        groups[g].members.push(r.clone());
    }
    groups
}
