use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datapipe::build::{
    build_query_click_entity, build_query_doc_entity, build_query_query_entity, build_query_tag_entity,
    filter_low_freq, filter_low_quality, shuffle, subsample_high_freq, EntityDict,
};
use crate::datapipe::records::{
    load_click_log, load_doc_log, load_list, load_quality, load_related, load_tag_rules, ClickLogRecord,
    DocLogRecord, Pair, RelatedQueryRecord, TagRule,
};
use crate::datapipe::synth::{BLACKLIST_FILE, CLICK_LOG_FILE, DOC_LOG_FILE, ENTITIES_FILE, RELATED_FILE, TAG_RULES_FILE};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub ctr_threshold: f64,
    pub min_doc_clicks: u64,
    pub min_entity_count: usize,
    /// Subsampling threshold `t` on an entity's share of all pairs.
    pub subsample_t: f64,
    /// Applied only when a quality score file is supplied.
    pub quality_threshold: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            ctr_threshold: 0.2,
            min_doc_clicks: 1,
            min_entity_count: 2,
            subsample_t: 0.05,
            quality_threshold: 0.5,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ctr_threshold > 0.0 && self.ctr_threshold <= 1.0) {
            return Err(Error::ConfigInvalid("data.ctr_threshold must be in (0, 1]".into()));
        }
        if !(self.subsample_t > 0.0 && self.subsample_t.is_finite()) {
            return Err(Error::ConfigInvalid("data.subsample_t must be > 0".into()));
        }
        if self.min_entity_count == 0 {
            return Err(Error::ConfigInvalid("data.min_entity_count must be >= 1".into()));
        }
        Ok(())
    }
}

/// All log sources for one pipeline run.
#[derive(Clone, Debug, Default)]
pub struct DataInputs {
    pub clicks: Vec<ClickLogRecord>,
    pub docs: Vec<DocLogRecord>,
    pub related: Vec<RelatedQueryRecord>,
    pub tag_rules: Vec<TagRule>,
    /// Queries the tag rules run over. Empty means every distinct query of
    /// the other logs, in order of first appearance.
    pub tag_queries: Vec<String>,
    pub entities: Vec<String>,
    pub blacklist: HashSet<String>,
    pub quality: Option<HashMap<String, f64>>,
}

/// Input file locations; optional sources may be absent. Defaults name the
/// files written by the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    pub entities: String,
    pub click_log: Option<String>,
    pub doc_log: Option<String>,
    pub related: Option<String>,
    pub tag_rules: Option<String>,
    pub tag_queries: Option<String>,
    pub blacklist: Option<String>,
    pub quality: Option<String>,
}

impl Default for DataPaths {
    fn default() -> Self {
        let some = |s: &str| Some(s.to_string());
        DataPaths {
            entities: ENTITIES_FILE.into(),
            click_log: some(CLICK_LOG_FILE),
            doc_log: some(DOC_LOG_FILE),
            related: some(RELATED_FILE),
            tag_rules: some(TAG_RULES_FILE),
            tag_queries: None,
            blacklist: some(BLACKLIST_FILE),
            quality: None,
        }
    }
}

impl DataInputs {
    /// Relative paths resolve against `base`.
    pub fn load(paths: &DataPaths, base: &Path) -> Result<Self> {
        let p = |s: &String| base.join(s);
        let mut inputs = DataInputs {
            entities: load_list(&p(&paths.entities))?,
            ..DataInputs::default()
        };
        if let Some(f) = &paths.click_log {
            inputs.clicks = load_click_log(&p(f))?;
        }
        if let Some(f) = &paths.doc_log {
            inputs.docs = load_doc_log(&p(f))?;
        }
        if let Some(f) = &paths.related {
            inputs.related = load_related(&p(f))?;
        }
        if let Some(f) = &paths.tag_rules {
            inputs.tag_rules = load_tag_rules(&p(f))?;
        }
        if let Some(f) = &paths.tag_queries {
            inputs.tag_queries = load_list(&p(f))?;
        }
        if let Some(f) = &paths.blacklist {
            inputs.blacklist = load_list(&p(f))?.into_iter().collect();
        }
        if let Some(f) = &paths.quality {
            inputs.quality = Some(load_quality(&p(f))?.into_iter().collect());
        }
        Ok(inputs)
    }

    pub fn queries_for_tags(&self) -> Vec<String> {
        if !self.tag_queries.is_empty() {
            return self.tag_queries.clone();
        }
        let mut seen = HashSet::new();
        let all = self
            .clicks
            .iter()
            .map(|r| &r.query)
            .chain(self.docs.iter().map(|r| &r.query))
            .chain(self.related.iter().map(|r| &r.query));
        all.filter(|q| seen.insert(q.as_str())).cloned().collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DataReport {
    pub click_pairs: usize,
    pub doc_pairs: usize,
    pub related_pairs: usize,
    pub tag_pairs: usize,
    pub quality_removed: usize,
    pub low_freq_removed: usize,
    pub subsample_removed: usize,
    pub output_pairs: usize,
    pub distinct_entities: usize,
}

/// build, low-quality filter, low-frequency filter, subsample, shuffle.
pub fn run_pipeline(inputs: &DataInputs, config: &DataConfig, rng: &mut SeededRng) -> Result<(Vec<Pair>, DataReport)> {
    config.validate()?;
    let dict = EntityDict::new(&inputs.entities);
    let mut report = DataReport::default();

    let click = build_query_click_entity(&inputs.clicks, config.ctr_threshold, &dict);
    let doc = build_query_doc_entity(&inputs.docs, &dict, config.min_doc_clicks);
    let related = build_query_query_entity(&inputs.related, &dict);
    let tag = build_query_tag_entity(&inputs.queries_for_tags(), &inputs.tag_rules, &dict);
    report.click_pairs = click.len();
    report.doc_pairs = doc.len();
    report.related_pairs = related.len();
    report.tag_pairs = tag.len();
    let pairs: Vec<Pair> = click.into_iter().chain(doc).chain(related).chain(tag).collect();

    let quality = inputs.quality.as_ref().map(|q| (q, config.quality_threshold));
    let (pairs, removed) = filter_low_quality(pairs, &inputs.blacklist, quality);
    report.quality_removed = removed;

    let before = pairs.len();
    let pairs = filter_low_freq(pairs, config.min_entity_count);
    report.low_freq_removed = before - pairs.len();

    let before = pairs.len();
    let mut sub_rng = rng.fork(1);
    let pairs = subsample_high_freq(pairs, config.subsample_t, &mut sub_rng);
    report.subsample_removed = before - pairs.len();

    let mut shuffle_rng = rng.fork(2);
    let pairs = shuffle(pairs, &mut shuffle_rng);
    report.output_pairs = pairs.len();
    report.distinct_entities = pairs.iter().map(|p| p.entity.as_str()).collect::<HashSet<_>>().len();
    if pairs.is_empty() {
        log::warn!("data pipeline produced no pairs");
    }
    Ok((pairs, report))
}
