//! Query segmentation, dictionary matching, hashed ngram features and the
//! token/entity vocabulary.

mod gazetteer;
mod ngram;
mod segment;
mod tokenize;
mod vocab;

pub use gazetteer::{Gazetteer, Span};
pub use ngram::{extract_ngrams, stable_hash, DEFAULT_NGRAM_ORDERS, DEFAULT_NUM_BUCKETS};
pub use segment::{is_cjk, join_phrase, segment, split_basic, PhraseDict, Segmented};
pub use tokenize::{TextConfig, TokenizedQuery, Tokenizer, DEFAULT_MAX_LEN};
pub use vocab::{build_vocab, Vocabulary, PAD, PAD_TOKEN, UNK, UNK_TOKEN};
