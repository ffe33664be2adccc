//! Training-pair construction from search logs.

mod build;
mod pipeline;
mod records;
pub mod synth;

pub use build::{
    build_query_click_entity, build_query_doc_entity, build_query_query_entity, build_query_tag_entity,
    entity_counts, filter_low_freq, filter_low_quality, keep_probability, shuffle, subsample_high_freq, EntityDict,
};
pub use pipeline::{run_pipeline, DataConfig, DataInputs, DataPaths, DataReport};
pub use records::{
    format_pairs, load_click_log, load_doc_log, load_list, load_pairs, load_quality, load_related, load_tag_rules,
    parse_click_log, parse_doc_log, parse_list, parse_pairs, parse_quality, parse_related, parse_tag_rules,
    ClickLogRecord, DocLogRecord, MatchMode, Pair, RelatedQueryRecord, TagRule,
};
pub(crate) use records::{read_text, split_list};
