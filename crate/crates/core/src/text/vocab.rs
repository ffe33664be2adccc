use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::segment::{segment, PhraseDict};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token and entity id maps. Both id spaces are dense; word ids 0 and 1 are
/// reserved for padding and unknown tokens. Ids follow descending frequency
/// with lexicographic tie-break, so entity ids double as frequency ranks.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    word_freq: Vec<u64>,
    word_to_id: HashMap<String, u32>,
    entities: Vec<String>,
    entity_freq: Vec<u64>,
    entity_to_id: HashMap<String, u32>,
    min_count: u64,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    min_count: u64,
    words: Vec<(String, u32, u64)>,
    entities: Vec<(String, u32, u64)>,
}

fn rank(counts: HashMap<String, u64>, min_count: u64) -> Vec<(String, u64)> {
    let mut kept: Vec<(String, u64)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    kept
}

/// Count tokens and entities over `(query, entity)` records. Queries that
/// segment to nothing are skipped. Word counts cover basic tokens plus
/// merged phrases from the semantic level.
pub fn build_vocab<I, Q, E>(records: I, phrases: &PhraseDict, min_count: u64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = (Q, E)>,
    Q: AsRef<str>,
    E: AsRef<str>,
{
    let mut words: HashMap<String, u64> = HashMap::new();
    let mut entities: HashMap<String, u64> = HashMap::new();
    let mut any = false;
    for (query, entity) in records {
        let Ok(seg) = segment(query.as_ref(), phrases) else {
            continue;
        };
        let entity = entity.as_ref().trim();
        if entity.is_empty() {
            continue;
        }
        any = true;
        let basic: HashSet<&String> = seg.basic.iter().collect();
        for t in &seg.basic {
            *words.entry(t.clone()).or_default() += 1;
        }
        for t in seg.semantic.iter().filter(|t| !basic.contains(t)) {
            *words.entry(t.clone()).or_default() += 1;
        }
        *entities.entry(entity.to_string()).or_default() += 1;
    }
    if !any {
        return Err(Error::EmptyCorpus);
    }
    let min_count = min_count.max(1);
    let ranked_words = rank(words, min_count);
    let ranked_entities = rank(entities, min_count);
    if ranked_entities.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut vocab = Vocabulary::empty(min_count);
    for (w, c) in ranked_words {
        vocab.push_word(w, c);
    }
    for (e, c) in ranked_entities {
        vocab.push_entity(e, c);
    }
    Ok(vocab)
}

impl Vocabulary {
    fn empty(min_count: u64) -> Self {
        let mut v = Vocabulary {
            words: Vec::new(),
            word_freq: Vec::new(),
            word_to_id: HashMap::new(),
            entities: Vec::new(),
            entity_freq: Vec::new(),
            entity_to_id: HashMap::new(),
            min_count,
        };
        v.push_word(PAD_TOKEN.into(), 0);
        v.push_word(UNK_TOKEN.into(), 0);
        v
    }

    fn push_word(&mut self, w: String, freq: u64) {
        self.word_to_id.insert(w.clone(), self.words.len() as u32);
        self.words.push(w);
        self.word_freq.push(freq);
    }

    fn push_entity(&mut self, e: String, freq: u64) {
        self.entity_to_id.insert(e.clone(), self.entities.len() as u32);
        self.entities.push(e);
        self.entity_freq.push(freq);
    }

    /// Builds a vocabulary from explicit lists, assigning ids in the given
    /// order after the reserved tokens. Handy for fixtures.
    pub fn from_lists<W, E>(words: W, entities: E) -> Self
    where
        W: IntoIterator,
        W::Item: Into<String>,
        E: IntoIterator,
        E::Item: Into<String>,
    {
        let mut v = Vocabulary::empty(1);
        for w in words {
            v.push_word(w.into(), 1);
        }
        for e in entities {
            v.push_entity(e.into(), 1);
        }
        v
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    /// Unknown tokens map to [`UNK`].
    pub fn word_id(&self, token: &str) -> u32 {
        self.word_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn lookup_word(&self, token: &str) -> Option<u32> {
        self.word_to_id.get(token).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn word_freq(&self, id: u32) -> u64 {
        self.word_freq[id as usize]
    }

    pub fn entity_id(&self, name: &str) -> Option<u32> {
        self.entity_to_id.get(name).copied()
    }

    pub fn entity(&self, id: u32) -> Option<&str> {
        self.entities.get(id as usize).map(String::as_str)
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn entity_freqs(&self) -> &[u64] {
        &self.entity_freq
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabFile {
            min_count: self.min_count,
            words: (0..self.words.len())
                .map(|i| (self.words[i].clone(), i as u32, self.word_freq[i]))
                .collect(),
            entities: (0..self.entities.len())
                .map(|i| (self.entities[i].clone(), i as u32, self.entity_freq[i]))
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)?;
        let mut v = Vocabulary {
            words: Vec::new(),
            word_freq: Vec::new(),
            word_to_id: HashMap::new(),
            entities: Vec::new(),
            entity_freq: Vec::new(),
            entity_to_id: HashMap::new(),
            min_count: file.min_count,
        };
        for (expect, (w, id, f)) in file.words.into_iter().enumerate() {
            if id as usize != expect || v.word_to_id.contains_key(&w) {
                return Err(Error::Format(format!("word ids not a dense bijection at {w:?}")));
            }
            v.push_word(w, f);
        }
        for (expect, (e, id, f)) in file.entities.into_iter().enumerate() {
            if id as usize != expect || v.entity_to_id.contains_key(&e) {
                return Err(Error::Format(format!("entity ids not a dense bijection at {e:?}")));
            }
            v.push_entity(e, f);
        }
        if v.word(PAD) != Some(PAD_TOKEN) || v.word(UNK) != Some(UNK_TOKEN) {
            return Err(Error::Format("reserved tokens missing".into()));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::InputMissing(path.to_path_buf()));
        }
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn single_record_type() {
        let v = build_vocab(recs(&[("a", "E1"), ("a", "E1"), ("a", "E1")]), &PhraseDict::new(), 1).unwrap();
        assert_eq!(v.word_count(), 3);
        assert_eq!(v.word(0), Some(PAD_TOKEN));
        assert_eq!(v.word(1), Some(UNK_TOKEN));
        assert_eq!(v.word(2), Some("a"));
        assert_eq!(v.entities(), &["E1".to_string()]);
        assert_eq!(v.word_freq(2), 3);
    }

    #[test]
    fn min_count_threshold() {
        let mut r = vec![("a", "E"); 4];
        r.push(("a b", "E"));
        let v = build_vocab(recs(&r), &PhraseDict::new(), 2).unwrap();
        assert_eq!(v.lookup_word("a"), Some(2));
        assert_eq!(v.lookup_word("b"), None);
        assert_eq!(v.word_id("b"), UNK);
    }

    #[test]
    fn frequency_tie_is_lexicographic() {
        let r = recs(&[("y x", "E"), ("x y", "E"), ("y x", "E")]);
        let v = build_vocab(r, &PhraseDict::new(), 1).unwrap();
        assert!(v.word_id("x") < v.word_id("y"));
    }

    #[test]
    fn phrases_are_counted() {
        let dict = PhraseDict::from_phrases(["cold weather"]);
        let v = build_vocab(recs(&[("cold weather food", "E")]), &dict, 1).unwrap();
        assert!(v.lookup_word("cold_weather").is_some());
        assert!(v.lookup_word("cold").is_some());
    }

    #[test]
    fn empty_corpus() {
        let none: Vec<(String, String)> = vec![];
        assert!(matches!(build_vocab(none, &PhraseDict::new(), 1), Err(Error::EmptyCorpus)));
        assert!(matches!(
            build_vocab(recs(&[("...", "E")]), &PhraseDict::new(), 1),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn json_round_trip() {
        let v = build_vocab(recs(&[("a b", "E1"), ("b c", "E2"), ("c", "E2")]), &PhraseDict::new(), 1).unwrap();
        let back = Vocabulary::from_json(&v.to_json().unwrap()).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn json_rejects_gaps() {
        let bad = r#"{"min_count":1,"words":[["<pad>",0,0],["<unk>",1,0],["a",3,1]],"entities":[]}"#;
        assert!(Vocabulary::from_json(bad).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn order_independent(
                records in prop::collection::vec(("[a-d]( [a-d]){0,3}", "E[0-4]"), 1..30),
                seed in any::<u64>(),
                min_count in 1u64..3,
            ) {
                let mut shuffled = records.clone();
                crate::numerics::SeededRng::new(seed).shuffle(&mut shuffled);
                let a = build_vocab(records, &PhraseDict::new(), min_count);
                let b = build_vocab(shuffled, &PhraseDict::new(), min_count);
                match (a, b) {
                    (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                    (Err(_), Err(_)) => {}
                    _ => prop_assert!(false, "one side failed"),
                }
            }

            #[test]
            fn ids_dense_and_frequent(records in prop::collection::vec(("[a-f]( [a-f]){0,3}", "E[0-6]"), 1..40)) {
                if let Ok(v) = build_vocab(records, &PhraseDict::new(), 2) {
                    for id in 2..v.word_count() as u32 {
                        prop_assert_eq!(v.word_id(v.word(id).unwrap()), id);
                        prop_assert!(v.word_freq(id) >= 2);
                    }
                    for (i, e) in v.entities().iter().enumerate() {
                        prop_assert_eq!(v.entity_id(e), Some(i as u32));
                    }
                    prop_assert!(v.entity_freqs().windows(2).all(|w| w[0] >= w[1]));
                }
            }
        }
    }
}
