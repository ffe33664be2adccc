use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::ngram::{extract_ngrams, DEFAULT_NGRAM_ORDERS, DEFAULT_NUM_BUCKETS};
use crate::text::segment::{segment, PhraseDict};
use crate::text::vocab::Vocabulary;

pub const DEFAULT_MAX_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextConfig {
    /// Tail truncation length for both token levels.
    pub max_len: usize,
    pub num_buckets: usize,
    /// Empty disables ngram features.
    pub ngram_orders: Vec<usize>,
    /// Query column already holds space-separated tokens; skip segmentation.
    pub pretokenized: bool,
}

impl Default for TextConfig {
    fn default() -> Self {
        TextConfig {
            max_len: DEFAULT_MAX_LEN,
            num_buckets: DEFAULT_NUM_BUCKETS,
            ngram_orders: DEFAULT_NGRAM_ORDERS.to_vec(),
            pretokenized: false,
        }
    }
}

impl TextConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::ConfigInvalid("text.max_len must be >= 1".into()));
        }
        if self.num_buckets == 0 || self.num_buckets > u32::MAX as usize {
            return Err(Error::ConfigInvalid("text.num_buckets out of range".into()));
        }
        if self.ngram_orders.iter().any(|o| !matches!(o, 2 | 3)) {
            return Err(Error::ConfigInvalid("text.ngram_orders must be drawn from {2, 3}".into()));
        }
        Ok(())
    }
}

/// Model-ready query features.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizedQuery {
    pub raw: String,
    /// Surface forms of the basic tokens, aligned with `basic`.
    pub tokens: Vec<String>,
    pub basic: Vec<u32>,
    pub semantic: Vec<u32>,
    pub ngrams: Vec<u32>,
}

impl TokenizedQuery {
    pub fn len(&self) -> usize {
        self.basic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basic.is_empty()
    }

    /// Builds a query directly from word ids, with no ngram features.
    /// Used by tests and synthetic fixtures.
    pub fn from_ids(ids: &[u32]) -> Self {
        TokenizedQuery {
            raw: String::new(),
            tokens: ids.iter().map(|i| i.to_string()).collect(),
            basic: ids.to_vec(),
            semantic: ids.to_vec(),
            ngrams: Vec::new(),
        }
    }
}

/// Text-to-features front end shared by training, evaluation and serving.
#[derive(Clone, Debug)]
pub struct Tokenizer {
    vocab: Arc<Vocabulary>,
    phrases: Arc<PhraseDict>,
    config: TextConfig,
}

impl Tokenizer {
    pub fn new(vocab: Arc<Vocabulary>, phrases: Arc<PhraseDict>, config: TextConfig) -> Self {
        Tokenizer { vocab, phrases, config }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &TextConfig {
        &self.config
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenizedQuery> {
        let (mut basic, mut semantic) = if self.config.pretokenized {
            let toks: Vec<String> = text.split_whitespace().map(str::to_string).collect();
            if toks.is_empty() {
                return Err(Error::EmptyQuery(text.to_string()));
            }
            (toks.clone(), toks)
        } else {
            let seg = segment(text, &self.phrases)?;
            (seg.basic, seg.semantic)
        };
        basic.truncate(self.config.max_len);
        semantic.truncate(self.config.max_len);
        let ngrams = extract_ngrams(&basic, &self.config.ngram_orders, self.config.num_buckets);
        Ok(TokenizedQuery {
            raw: text.to_string(),
            basic: basic.iter().map(|t| self.vocab.word_id(t)).collect(),
            semantic: semantic.iter().map(|t| self.vocab.word_id(t)).collect(),
            tokens: basic,
            ngrams,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::UNK;

    fn tokenizer(config: TextConfig) -> Tokenizer {
        let vocab = Vocabulary::from_lists(["cold", "weather", "food", "cold_weather"], ["E"]);
        let phrases = PhraseDict::from_phrases(["cold weather"]);
        Tokenizer::new(Arc::new(vocab), Arc::new(phrases), config)
    }

    #[test]
    fn ids_and_ngrams() {
        let t = tokenizer(TextConfig::default());
        let q = t.tokenize("Cold weather food").unwrap();
        assert_eq!(q.basic, vec![2, 3, 4]);
        assert_eq!(q.semantic, vec![5, 4]);
        assert_eq!(q.ngrams.len(), 3);
        assert_eq!(q.tokens, vec!["cold", "weather", "food"]);
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let t = tokenizer(TextConfig::default());
        let q = t.tokenize("hot soup").unwrap();
        assert_eq!(q.basic, vec![UNK, UNK]);
    }

    #[test]
    fn truncates_tail() {
        let t = tokenizer(TextConfig {
            max_len: 2,
            ..TextConfig::default()
        });
        let q = t.tokenize("food food food food").unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q.ngrams.len(), 1);
    }

    #[test]
    fn pretokenized_bypasses_segmentation() {
        let t = tokenizer(TextConfig {
            pretokenized: true,
            ..TextConfig::default()
        });
        let q = t.tokenize("cold_weather food").unwrap();
        assert_eq!(q.basic, vec![5, 4]);
        assert_eq!(q.semantic, q.basic);
    }

    #[test]
    fn rejects_bad_orders() {
        let cfg = TextConfig {
            ngram_orders: vec![4],
            ..TextConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
