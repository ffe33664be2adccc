use std::collections::HashMap;

use crate::text::segment::split_basic;

/// A dictionary match over a token sequence, `tokens[start..end]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub value: String,
}

/// Token-sequence dictionary with greedy left-to-right longest matching.
/// Used both for phrase merging and for dictionary entity spotting.
#[derive(Clone, Debug, Default)]
pub struct Gazetteer {
    entries: HashMap<Vec<String>, String>,
    max_len: usize,
}

impl Gazetteer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Entries keyed by their segmented surface form; the value is the
    /// name as given.
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut g = Gazetteer::new();
        for name in names {
            g.insert(name.as_ref());
        }
        g
    }

    pub fn insert(&mut self, name: &str) {
        let tokens = split_basic(name);
        if !tokens.is_empty() {
            self.insert_tokens(tokens, name.to_string());
        }
    }

    pub fn insert_tokens(&mut self, tokens: Vec<String>, value: String) {
        self.max_len = self.max_len.max(tokens.len());
        // first insertion wins so lookups are independent of later aliases
        self.entries.entry(tokens).or_insert(value);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(&split_basic(name))
    }

    /// Non-overlapping matches: at each position take the longest entry
    /// starting there, otherwise advance by one token.
    pub fn longest_matches<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<Span> {
        let tokens: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
        let mut spans = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = (1..=self.max_len.min(tokens.len() - i))
                .rev()
                .find_map(|len| self.entries.get(&tokens[i..i + len]).map(|v| (len, v)));
            match longest {
                Some((len, value)) => {
                    spans.push(Span {
                        start: i,
                        end: i + len,
                        value: value.clone(),
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
        spans
    }

    /// Distinct matched values of `text`, in order of first appearance.
    pub fn spot(&self, text: &str) -> Vec<String> {
        let mut seen = Vec::new();
        for span in self.longest_matches(&split_basic(text)) {
            if !seen.contains(&span.value) {
                seen.push(span.value);
            }
        }
        seen
    }
}
