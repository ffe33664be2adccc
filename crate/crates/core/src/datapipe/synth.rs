//! Seeded synthetic corpora for desk-scale experiments.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datapipe::records::{ClickLogRecord, DocLogRecord, MatchMode, RelatedQueryRecord, TagRule};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Groups of related entities sharing a topic word.
    pub families: usize,
    pub family_size: usize,
    pub concepts: usize,
    pub queries_per_entity: usize,
    pub eval_queries_per_family: usize,
    pub filler_words: usize,
    /// Entities present in click logs but listed in the blacklist.
    pub blacklisted: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            families: 20,
            family_size: 3,
            concepts: 5,
            queries_per_entity: 6,
            eval_queries_per_family: 3,
            filler_words: 30,
            blacklisted: 3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.families == 0 || self.family_size == 0 || self.concepts == 0 || self.queries_per_entity == 0 {
            return Err(Error::ConfigInvalid(
                "synth: families, family_size, concepts and queries_per_entity must be >= 1".into(),
            ));
        }
        if self.filler_words < 2 {
            return Err(Error::ConfigInvalid("synth.filler_words must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct SynthCorpus {
    pub entities: Vec<String>,
    pub clicks: Vec<ClickLogRecord>,
    pub docs: Vec<DocLogRecord>,
    pub related: Vec<RelatedQueryRecord>,
    pub tag_rules: Vec<TagRule>,
    pub blacklist: Vec<String>,
    /// `(entity, concepts)`
    pub concepts: Vec<(String, Vec<String>)>,
    pub phrases: Vec<String>,
    /// `(query, ground-truth entities)`
    pub eval_cases: Vec<(String, Vec<String>)>,
}

pub const ENTITIES_FILE: &str = "entities.txt";
pub const CLICK_LOG_FILE: &str = "click_log.tsv";
pub const DOC_LOG_FILE: &str = "doc_log.tsv";
pub const RELATED_FILE: &str = "related.tsv";
pub const TAG_RULES_FILE: &str = "tag_rules.tsv";
pub const BLACKLIST_FILE: &str = "blacklist.txt";
pub const CONCEPTS_FILE: &str = "concepts.tsv";
pub const PHRASES_FILE: &str = "phrases.txt";
pub const EVAL_FILE: &str = "eval.tsv";

struct Words {
    used: HashSet<String>,
}

impl Words {
    fn fresh(&mut self, rng: &mut SeededRng, syllables: usize) -> String {
        const C: &[u8] = b"bdfgklmnprstvz";
        const V: &[u8] = b"aeiou";
        loop {
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(C[rng.below(C.len())] as char);
                w.push(V[rng.below(V.len())] as char);
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

struct Entity {
    name: String,
    signature: String,
    family: usize,
}

/// Generates the log files of a small search engine: queries that never
/// name an entity, whose intent is carried by a family topic word and an
/// entity signature word.
pub fn generate(config: &SynthConfig, rng: &mut SeededRng) -> Result<SynthCorpus> {
    config.validate()?;
    let mut words = Words { used: HashSet::new() };
    let fillers: Vec<String> = (0..config.filler_words).map(|_| words.fresh(rng, 2)).collect();
    let topics: Vec<String> = (0..config.families).map(|_| words.fresh(rng, 3)).collect();
    let concept_names: Vec<String> = (0..config.concepts).map(|c| format!("concept_{c}")).collect();
    let mut entities = Vec::new();
    for f in 0..config.families {
        for _ in 0..config.family_size {
            let name = format!("{} {}", words.fresh(rng, 2), words.fresh(rng, 2));
            entities.push(Entity { name, signature: words.fresh(rng, 3), family: f });
        }
    }
    let blacklist: Vec<String> = (0..config.blacklisted).map(|_| format!("spam {}", words.fresh(rng, 2))).collect();
    let filler = |rng: &mut SeededRng| fillers[rng.below(fillers.len())].clone();

    let mut corpus = SynthCorpus {
        blacklist: blacklist.clone(),
        ..SynthCorpus::default()
    };
    corpus.entities = entities.iter().map(|e| e.name.clone()).chain(blacklist.iter().cloned()).collect();
    corpus.phrases = entities.iter().map(|e| e.name.clone()).collect();

    let mut seen_queries = HashSet::new();
    for (i, e) in entities.iter().enumerate() {
        let family: Vec<&Entity> = entities.iter().filter(|o| o.family == e.family).collect();
        let mut made = 0;
        while made < config.queries_per_entity {
            let mut toks = vec![topics[e.family].clone(), e.signature.clone(), filler(rng)];
            if rng.bernoulli(0.5) {
                toks.push(filler(rng));
            }
            rng.shuffle(&mut toks);
            let q = toks.join(" ");
            if !seen_queries.insert(q.clone()) {
                continue;
            }
            made += 1;
            let impressions = 20 + rng.below(80) as u64;
            let ctr = rng.uniform_range(0.3, 0.8);
            corpus.clicks.push(ClickLogRecord {
                query: q.clone(),
                entity: e.name.clone(),
                impressions,
                clicks: (impressions as f64 * ctr).round() as u64,
            });
            if rng.bernoulli(0.3) {
                let other = &entities[rng.below(entities.len())];
                corpus.clicks.push(ClickLogRecord {
                    query: q.clone(),
                    entity: other.name.clone(),
                    impressions,
                    clicks: (impressions as f64 * rng.uniform_range(0.0, 0.08)).round() as u64,
                });
            }
            if !blacklist.is_empty() && rng.bernoulli(0.15) {
                corpus.clicks.push(ClickLogRecord {
                    query: q.clone(),
                    entity: blacklist[rng.below(blacklist.len())].clone(),
                    impressions,
                    clicks: impressions / 2,
                });
            }
            if rng.bernoulli(0.5) {
                let sibling = family[rng.below(family.len())];
                corpus.docs.push(DocLogRecord {
                    query: q.clone(),
                    title: format!("{} {} {}", filler(rng), e.name, filler(rng)),
                    summary: format!("{} {}", filler(rng), sibling.name),
                    clicks: rng.below(6) as u64,
                });
            }
            if rng.bernoulli(0.3) {
                corpus.related.push(RelatedQueryRecord {
                    query: q.clone(),
                    recommended: format!("{} {}", e.name, filler(rng)),
                });
            } else if rng.bernoulli(0.2) {
                corpus.related.push(RelatedQueryRecord {
                    query: q.clone(),
                    recommended: format!("{} {}", filler(rng), filler(rng)),
                });
            }
        }
        let mut concepts = vec![concept_names[e.family % config.concepts].clone()];
        if i % 7 == 0 && config.concepts > 1 {
            concepts.push(concept_names[(e.family + 1) % config.concepts].clone());
        }
        corpus.concepts.push((e.name.clone(), concepts));
    }

    for (f, topic) in topics.iter().enumerate() {
        if f % 2 == 0 {
            corpus.tag_rules.push(TagRule {
                pattern: topic.clone(),
                mode: MatchMode::Substring,
                tag: format!("family_{f}"),
                entities: entities.iter().filter(|e| e.family == f).map(|e| e.name.clone()).collect(),
            });
        }
    }

    for (f, topic) in topics.iter().enumerate() {
        let truth: Vec<String> = entities.iter().filter(|e| e.family == f).map(|e| e.name.clone()).collect();
        let mut made = 0;
        let mut attempts = 0;
        while made < config.eval_queries_per_family && attempts < 1000 {
            attempts += 1;
            let member = entities.iter().filter(|e| e.family == f).nth(made % config.family_size).expect("member");
            let mut toks = vec![topic.clone(), member.signature.clone(), filler(rng), filler(rng)];
            rng.shuffle(&mut toks);
            let q = toks.join(" ");
            if seen_queries.insert(q.clone()) {
                corpus.eval_cases.push((q, truth.clone()));
                made += 1;
            }
        }
    }
    Ok(corpus)
}

impl SynthCorpus {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut files: Vec<(&str, String)> = Vec::new();
        files.push((ENTITIES_FILE, lines(self.entities.iter())));
        let mut s = String::new();
        for r in &self.clicks {
            writeln!(s, "{}\t{}\t{}\t{}", r.query, r.entity, r.impressions, r.clicks).expect("string");
        }
        files.push((CLICK_LOG_FILE, s));
        let mut s = String::new();
        for r in &self.docs {
            writeln!(s, "{}\t{}\t{}\t{}", r.query, r.title, r.summary, r.clicks).expect("string");
        }
        files.push((DOC_LOG_FILE, s));
        let mut s = String::new();
        for r in &self.related {
            writeln!(s, "{}\t{}", r.query, r.recommended).expect("string");
        }
        files.push((RELATED_FILE, s));
        let mut s = String::new();
        for r in &self.tag_rules {
            let mode = match r.mode {
                MatchMode::Exact => "exact",
                MatchMode::Substring => "substring",
            };
            writeln!(s, "{}\t{}\t{}\t{}", r.pattern, mode, r.tag, r.entities.join(";")).expect("string");
        }
        files.push((TAG_RULES_FILE, s));
        files.push((BLACKLIST_FILE, lines(self.blacklist.iter())));
        let mut s = String::new();
        for (e, cs) in &self.concepts {
            writeln!(s, "{}\t{}", e, cs.join(";")).expect("string");
        }
        files.push((CONCEPTS_FILE, s));
        files.push((PHRASES_FILE, lines(self.phrases.iter())));
        let mut s = String::new();
        for (q, truth) in &self.eval_cases {
            writeln!(s, "{}\t{}", q, truth.join(";")).expect("string");
        }
        files.push((EVAL_FILE, s));
        for (name, text) in files {
            std::fs::write(dir.join(name), text)?;
        }
        Ok(())
    }
}

fn lines<'a>(items: impl Iterator<Item = &'a String>) -> String {
    items.map(|s| format!("{s}\n")).collect()
}

/// `num_queries` distinct three-word queries over a small word pool, query
/// `i` mapped to entity `i % num_entities`. Returns `(query, entity)` pairs.
pub fn overfit_corpus(num_queries: usize, num_entities: usize, rng: &mut SeededRng) -> Vec<(String, String)> {
    let mut words = Words { used: HashSet::new() };
    let pool: Vec<String> = (0..40).map(|_| words.fresh(rng, 2)).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(num_queries);
    while out.len() < num_queries {
        let q: Vec<&str> = (0..3).map(|_| pool[rng.below(pool.len())].as_str()).collect();
        let q = q.join(" ");
        if seen.insert(q.clone()) {
            let e = out.len() % num_entities;
            out.push((q, format!("entity_{e:03}")));
        }
    }
    out
}

/// Two-word queries `a b` over `num_words` words, one entity per ordered
/// pair, so `a b` and `b a` have different targets.
pub fn order_corpus(num_words: usize, rng: &mut SeededRng) -> Vec<(String, String)> {
    let mut words = Words { used: HashSet::new() };
    let pool: Vec<String> = (0..num_words).map(|_| words.fresh(rng, 2)).collect();
    let mut out = Vec::new();
    for (i, a) in pool.iter().enumerate() {
        for (j, b) in pool.iter().enumerate() {
            if i != j {
                out.push((format!("{a} {b}"), format!("{a}_then_{b}")));
            }
        }
    }
    out
}
