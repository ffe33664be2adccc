use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ClickLogRecord {
    pub query: String,
    pub entity: String,
    pub impressions: u64,
    pub clicks: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocLogRecord {
    pub query: String,
    pub title: String,
    pub summary: String,
    pub clicks: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelatedQueryRecord {
    pub query: String,
    pub recommended: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MatchMode {
    Exact,
    Substring,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TagRule {
    pub pattern: String,
    pub mode: MatchMode,
    pub tag: String,
    pub entities: Vec<String>,
}

impl TagRule {
    /// Case-insensitive; exact compares the trimmed query.
    pub fn matches(&self, query: &str) -> bool {
        let q = query.trim().to_lowercase();
        let p = self.pattern.trim().to_lowercase();
        match self.mode {
            MatchMode::Exact => q == p,
            MatchMode::Substring => q.contains(&p),
        }
    }
}

/// A weighted query-entity training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub query: String,
    pub entity: String,
    pub weight: f64,
}

impl Pair {
    pub fn new(query: impl Into<String>, entity: impl Into<String>, weight: f64) -> Self {
        Pair {
            query: query.into(),
            entity: entity.into(),
            weight,
        }
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::InputMissing(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// Non-blank lines split on tabs, each with its `file:line` location.
fn rows<'a>(name: &'a str, text: &'a str, columns: usize) -> impl Iterator<Item = Result<(String, Vec<&'a str>)>> + 'a {
    text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(move |(i, line)| {
        let loc = format!("{name}:{}", i + 1);
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != columns {
            return Err(Error::parse(loc, format!("expected {columns} tab-separated fields, found {}", fields.len())));
        }
        Ok((loc, fields))
    })
}

fn non_empty<'a>(loc: &str, what: &str, s: &'a str) -> Result<&'a str> {
    let s = s.trim();
    if s.is_empty() {
        return Err(Error::parse(loc, format!("empty {what}")));
    }
    Ok(s)
}

fn number<T: std::str::FromStr>(loc: &str, what: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(loc, format!("{what} is not a valid number: {s:?}")))
}

/// `query \t entity \t impressions \t clicks`
pub fn parse_click_log(name: &str, text: &str) -> Result<Vec<ClickLogRecord>> {
    rows(name, text, 4)
        .map(|r| {
            let (loc, f) = r?;
            let rec = ClickLogRecord {
                query: non_empty(&loc, "query", f[0])?.to_string(),
                entity: non_empty(&loc, "entity", f[1])?.to_string(),
                impressions: number(&loc, "impressions", f[2])?,
                clicks: number(&loc, "clicks", f[3])?,
            };
            if rec.impressions == 0 || rec.clicks > rec.impressions {
                return Err(Error::parse(loc, "need impressions > 0 and clicks <= impressions"));
            }
            Ok(rec)
        })
        .collect()
}

/// `query \t title \t summary \t clicks`
pub fn parse_doc_log(name: &str, text: &str) -> Result<Vec<DocLogRecord>> {
    rows(name, text, 4)
        .map(|r| {
            let (loc, f) = r?;
            Ok(DocLogRecord {
                query: non_empty(&loc, "query", f[0])?.to_string(),
                title: f[1].trim().to_string(),
                summary: f[2].trim().to_string(),
                clicks: number(&loc, "clicks", f[3])?,
            })
        })
        .collect()
}

/// `query \t recommended query`
pub fn parse_related(name: &str, text: &str) -> Result<Vec<RelatedQueryRecord>> {
    rows(name, text, 2)
        .map(|r| {
            let (loc, f) = r?;
            Ok(RelatedQueryRecord {
                query: non_empty(&loc, "query", f[0])?.to_string(),
                recommended: non_empty(&loc, "recommended query", f[1])?.to_string(),
            })
        })
        .collect()
}

/// `pattern \t exact|substring \t tag \t entity1;entity2;...`
pub fn parse_tag_rules(name: &str, text: &str) -> Result<Vec<TagRule>> {
    let mut seen = HashSet::new();
    rows(name, text, 4)
        .map(|r| {
            let (loc, f) = r?;
            let pattern = non_empty(&loc, "pattern", f[0])?.to_string();
            let mode = match f[1].trim() {
                "exact" => MatchMode::Exact,
                "substring" => MatchMode::Substring,
                other => return Err(Error::parse(loc, format!("match mode must be exact or substring, got {other:?}"))),
            };
            if !seen.insert((pattern.to_lowercase(), mode)) {
                return Err(Error::DuplicateRulePattern(pattern));
            }
            let entities: Vec<String> = split_list(f[3]);
            if entities.is_empty() {
                return Err(Error::parse(loc, "rule lists no entities"));
            }
            Ok(TagRule {
                pattern,
                mode,
                tag: non_empty(&loc, "tag", f[2])?.to_string(),
                entities,
            })
        })
        .collect()
}

/// `query \t entity \t weight`
pub fn parse_pairs(name: &str, text: &str) -> Result<Vec<Pair>> {
    rows(name, text, 3)
        .map(|r| {
            let (loc, f) = r?;
            let weight: f64 = number(&loc, "weight", f[2])?;
            if !(weight >= 0.0 && weight.is_finite()) {
                return Err(Error::parse(loc, "weight must be finite and >= 0"));
            }
            Ok(Pair::new(non_empty(&loc, "query", f[0])?, non_empty(&loc, "entity", f[1])?, weight))
        })
        .collect()
}

/// `entity \t score`
pub fn parse_quality(name: &str, text: &str) -> Result<Vec<(String, f64)>> {
    rows(name, text, 2)
        .map(|r| {
            let (loc, f) = r?;
            Ok((non_empty(&loc, "entity", f[0])?.to_string(), number(&loc, "score", f[1])?))
        })
        .collect()
}

/// One trimmed item per non-blank line.
pub fn parse_list(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect()
}

pub(crate) fn split_list(s: &str) -> Vec<String> {
    s.split(';').map(str::trim).filter(|e| !e.is_empty()).map(str::to_string).collect()
}

pub fn format_pairs(pairs: &[Pair]) -> String {
    let mut out = String::new();
    for p in pairs {
        writeln!(out, "{}\t{}\t{}", p.query, p.entity, p.weight).expect("write to string");
    }
    out
}

macro_rules! loader {
    ($fn:ident, $parse:ident, $ty:ty) => {
        pub fn $fn(path: &Path) -> Result<$ty> {
            $parse(&path.display().to_string(), &read_text(path)?)
        }
    };
}

loader!(load_click_log, parse_click_log, Vec<ClickLogRecord>);
loader!(load_doc_log, parse_doc_log, Vec<DocLogRecord>);
loader!(load_related, parse_related, Vec<RelatedQueryRecord>);
loader!(load_tag_rules, parse_tag_rules, Vec<TagRule>);
loader!(load_pairs, parse_pairs, Vec<Pair>);
loader!(load_quality, parse_quality, Vec<(String, f64)>);

pub fn load_list(path: &Path) -> Result<Vec<String>> {
    Ok(parse_list(&read_text(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn click_log_validation() {
        let ok = parse_click_log("c", "a b\tE\t10\t5\n\nq\tF\t3\t0\n").unwrap();
        assert_eq!(ok.len(), 2);
        assert_eq!(ok[0].clicks, 5);
        for bad in ["q\tE\t0\t0", "q\tE\t2\t3", "q\tE\t2", "q\tE\tx\t1", "\tE\t2\t1"] {
            assert!(matches!(parse_click_log("c", bad), Err(Error::Parse { .. })), "{bad}");
        }
        let err = parse_click_log("c", "ok\tE\t1\t1\nq\tE\t1").unwrap_err();
        assert!(err.to_string().contains("c:2"));
    }

    #[test]
    fn tag_rules_parse_and_reject_duplicates() {
        let rules = parse_tag_rules("r", "cake\tsubstring\tdessert\ta; b\nexact q\texact\tt\tc\n").unwrap();
        assert_eq!(rules[0].entities, vec!["a", "b"]);
        assert_eq!(rules[1].mode, MatchMode::Exact);
        assert!(rules[0].matches("Chocolate CAKE recipe"));
        assert!(!rules[1].matches("exact q please"));
        assert!(rules[1].matches(" exact q "));
        assert!(matches!(
            parse_tag_rules("r", "cake\tsubstring\tx\ta\nCake\tsubstring\ty\tb\n"),
            Err(Error::DuplicateRulePattern(_))
        ));
        assert!(parse_tag_rules("r", "cake\tfuzzy\tx\ta").is_err());
        assert!(parse_tag_rules("r", "cake\texact\tx\t ; ").is_err());
    }

    #[test]
    fn pairs_round_trip() {
        let pairs = vec![Pair::new("cold weather food", "hot pot", 0.5), Pair::new("q", "E", 1.0)];
        let text = format_pairs(&pairs);
        assert_eq!(text, "cold weather food\thot pot\t0.5\nq\tE\t1\n");
        assert_eq!(parse_pairs("p", &text).unwrap(), pairs);
        assert!(parse_pairs("p", "q\tE\t-1").is_err());
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_pairs(Path::new("/definitely/not/here.tsv")),
            Err(Error::InputMissing(_))
        ));
    }
}
