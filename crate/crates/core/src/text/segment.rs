use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::gazetteer::Gazetteer;

/// Han, kana and Hangul code points are segmented one character per token.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF     // hiragana, katakana
        | 0x3400..=0x4DBF   // CJK ext A
        | 0x4E00..=0x9FFF   // CJK unified
        | 0xAC00..=0xD7AF   // Hangul syllables
        | 0xF900..=0xFAFF   // compatibility ideographs
        | 0x20000..=0x2FA1F)
}

/// Script-aware split: runs of alphanumerics for alphabetic scripts
/// (lowercased), one token per CJK character, everything else a separator.
pub fn split_basic(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if is_cjk(c) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        } else if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

fn is_cjk_token(t: &str) -> bool {
    let mut chars = t.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if is_cjk(c))
}

/// Surface form of a merged phrase: CJK characters concatenate directly,
/// anything else is joined with `_`.
pub fn join_phrase<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        let t = t.as_ref();
        if i > 0 && !(is_cjk_token(tokens[i - 1].as_ref()) && is_cjk_token(t)) {
            out.push('_');
        }
        out.push_str(t);
    }
    out
}

/// Multi-token phrases that are kept whole at the semantic level.
#[derive(Clone, Debug, Default)]
pub struct PhraseDict {
    gazetteer: Gazetteer,
}

impl PhraseDict {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_phrases<I, S>(phrases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut dict = PhraseDict::new();
        for p in phrases {
            dict.insert(p.as_ref());
        }
        dict
    }

    /// Single-token phrases are ignored since they never merge anything.
    pub fn insert(&mut self, phrase: &str) {
        let tokens = split_basic(phrase);
        if tokens.len() >= 2 {
            let joined = join_phrase(&tokens);
            self.gazetteer.insert_tokens(tokens, joined);
        }
    }

    pub fn len(&self) -> usize {
        self.gazetteer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gazetteer.is_empty()
    }

    /// One phrase per line; blank lines and `#` comments are skipped.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::InputMissing(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        Ok(Self::from_phrases(
            text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')),
        ))
    }

    pub(crate) fn gazetteer(&self) -> &Gazetteer {
        &self.gazetteer
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segmented {
    pub basic: Vec<String>,
    pub semantic: Vec<String>,
}

/// Two-level segmentation. Basic tokens come from [`split_basic`]; semantic
/// tokens are the basic tokens with dictionary phrases merged by greedy
/// longest match.
pub fn segment(text: &str, dict: &PhraseDict) -> Result<Segmented> {
    let basic = split_basic(text);
    if basic.is_empty() {
        return Err(Error::EmptyQuery(text.to_string()));
    }
    let mut semantic = Vec::with_capacity(basic.len());
    let mut cursor = 0;
    for span in dict.gazetteer().longest_matches(&basic) {
        semantic.extend(basic[cursor..span.start].iter().cloned());
        semantic.push(span.value.clone());
        cursor = span.end;
    }
    semantic.extend(basic[cursor..].iter().cloned());
    Ok(Segmented { basic, semantic })
}
