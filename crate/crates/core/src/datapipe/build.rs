use std::collections::{HashMap, HashSet};

use crate::datapipe::records::{ClickLogRecord, DocLogRecord, Pair, RelatedQueryRecord, TagRule};
use crate::numerics::SeededRng;
use crate::text::Gazetteer;

/// Entity vocabulary used for membership checks and dictionary spotting.
#[derive(Clone, Debug, Default)]
pub struct EntityDict {
    names: HashSet<String>,
    gazetteer: Gazetteer,
}

impl EntityDict {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut dict = EntityDict::default();
        for n in names {
            let n = n.as_ref().trim();
            if !n.is_empty() && dict.names.insert(n.to_string()) {
                dict.gazetteer.insert(n);
            }
        }
        dict
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains(name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Greedy longest-match spotting; distinct names in order of appearance.
    pub fn spot(&self, text: &str) -> Vec<String> {
        self.gazetteer.spot(text)
    }
}

/// Clicked entities whose CTR reaches `ctr_threshold`, weighted by CTR.
pub fn build_query_click_entity(records: &[ClickLogRecord], ctr_threshold: f64, dict: &EntityDict) -> Vec<Pair> {
    records
        .iter()
        .filter_map(|r| {
            let ctr = r.clicks as f64 / r.impressions as f64;
            (ctr >= ctr_threshold && dict.contains(&r.entity)).then(|| Pair::new(&r.query, &r.entity, ctr))
        })
        .collect()
}

/// Entities spotted in the title, then the summary, of sufficiently
/// clicked documents. One pair of weight 1 per distinct entity.
pub fn build_query_doc_entity(records: &[DocLogRecord], dict: &EntityDict, min_doc_clicks: u64) -> Vec<Pair> {
    let mut out = Vec::new();
    for r in records.iter().filter(|r| r.clicks >= min_doc_clicks) {
        let mut seen = HashSet::new();
        for text in [&r.title, &r.summary] {
            for e in dict.spot(text) {
                if seen.insert(e.clone()) {
                    out.push(Pair::new(&r.query, e, 1.0));
                }
            }
        }
    }
    out
}

/// Entities linked in recommended queries, weight 1.
pub fn build_query_query_entity(records: &[RelatedQueryRecord], dict: &EntityDict) -> Vec<Pair> {
    records
        .iter()
        .flat_map(|r| dict.spot(&r.recommended).into_iter().map(move |e| Pair::new(&r.query, e, 1.0)))
        .collect()
}

/// For each query the first matching rule contributes one pair per entity.
pub fn build_query_tag_entity<S: AsRef<str>>(queries: &[S], rules: &[TagRule], dict: &EntityDict) -> Vec<Pair> {
    let mut out = Vec::new();
    for q in queries {
        let q = q.as_ref();
        if let Some(rule) = rules.iter().find(|r| r.matches(q)) {
            for e in rule.entities.iter().filter(|e| dict.contains(e)) {
                out.push(Pair::new(q, e, 1.0));
            }
        }
    }
    out
}

/// Drops blacklisted entities and, when scores are given, entities scoring
/// below `threshold` or lacking a score. Returns the kept pairs and the
/// number removed.
pub fn filter_low_quality(
    pairs: Vec<Pair>,
    blacklist: &HashSet<String>,
    quality: Option<(&HashMap<String, f64>, f64)>,
) -> (Vec<Pair>, usize) {
    let before = pairs.len();
    let kept: Vec<Pair> = pairs
        .into_iter()
        .filter(|p| {
            !blacklist.contains(&p.entity)
                && quality.is_none_or(|(scores, t)| scores.get(&p.entity).is_some_and(|s| *s >= t))
        })
        .collect();
    let removed = before - kept.len();
    (kept, removed)
}

pub fn entity_counts(pairs: &[Pair]) -> HashMap<&str, usize> {
    let mut counts = HashMap::new();
    for p in pairs {
        *counts.entry(p.entity.as_str()).or_insert(0) += 1;
    }
    counts
}

/// Removes every pair of an entity that occurs in fewer than `min_count`
/// pairs.
pub fn filter_low_freq(pairs: Vec<Pair>, min_count: usize) -> Vec<Pair> {
    let rare: HashSet<String> = entity_counts(&pairs)
        .into_iter()
        .filter(|(_, c)| *c < min_count)
        .map(|(e, _)| e.to_string())
        .collect();
    pairs.into_iter().filter(|p| !rare.contains(&p.entity)).collect()
}

/// `min(1, sqrt(t / f))`
pub fn keep_probability(fraction: f64, t: f64) -> f64 {
    if fraction <= t {
        1.0
    } else {
        (t / fraction).sqrt()
    }
}

/// Keeps each pair with [`keep_probability`] of its entity's share of all
/// pairs. One draw per pair, in input order.
pub fn subsample_high_freq(pairs: Vec<Pair>, t: f64, rng: &mut SeededRng) -> Vec<Pair> {
    let total = pairs.len() as f64;
    let keep: HashMap<String, f64> = entity_counts(&pairs)
        .into_iter()
        .map(|(e, c)| (e.to_string(), keep_probability(c as f64 / total, t)))
        .collect();
    pairs
        .into_iter()
        .filter(|p| {
            let prob = keep[&p.entity];
            prob >= 1.0 || rng.bernoulli(prob)
        })
        .collect()
}

pub fn shuffle(mut pairs: Vec<Pair>, rng: &mut SeededRng) -> Vec<Pair> {
    rng.shuffle(&mut pairs);
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::records::MatchMode;

    fn click(q: &str, e: &str, imp: u64, clk: u64) -> ClickLogRecord {
        ClickLogRecord { query: q.into(), entity: e.into(), impressions: imp, clicks: clk }
    }

    fn dict() -> EntityDict {
        EntityDict::new(["iphone", "new york", "york", "chocolate cake", "E", "F", "G"])
    }

    #[test]
    fn click_threshold() {
        let d = dict();
        assert_eq!(
            build_query_click_entity(&[click("q", "E", 10, 5)], 0.3, &d),
            vec![Pair::new("q", "E", 0.5)]
        );
        assert!(build_query_click_entity(&[click("q", "E", 10, 1)], 0.3, &d).is_empty());
        assert!(build_query_click_entity(&[click("q", "unknown", 10, 9)], 0.3, &d).is_empty());
    }

    #[test]
    fn click_mixed_file_matches_scan() {
        let recs = vec![click("a", "E", 4, 1), click("b", "F", 8, 1), click("c", "G", 3, 3), click("d", "E", 100, 24)];
        let got = build_query_click_entity(&recs, 0.25, &dict());
        let mut want = Vec::new();
        for r in &recs {
            if r.clicks * 4 >= r.impressions {
                want.push(Pair::new(&r.query, &r.entity, r.clicks as f64 / r.impressions as f64));
            }
        }
        assert_eq!(got, want);
        assert_eq!(got.len(), 2);
    }

    fn doc(q: &str, t: &str, s: &str, c: u64) -> DocLogRecord {
        DocLogRecord { query: q.into(), title: t.into(), summary: s.into(), clicks: c }
    }

    #[test]
    fn doc_spotting() {
        let d = dict();
        assert_eq!(
            build_query_doc_entity(&[doc("q", "buy iphone case", "", 1)], &d, 1),
            vec![Pair::new("q", "iphone", 1.0)]
        );
        assert_eq!(
            build_query_doc_entity(&[doc("q", "new york hotels", "", 1)], &d, 1),
            vec![Pair::new("q", "new york", 1.0)]
        );
        let recs = vec![
            doc("q1", "iphone in new york", "iphone deals", 3),
            doc("q2", "nothing here", "york minster", 2),
            doc("q3", "iphone", "", 0),
        ];
        let want = vec![
            Pair::new("q1", "iphone", 1.0),
            Pair::new("q1", "new york", 1.0),
            Pair::new("q2", "york", 1.0),
        ];
        assert_eq!(build_query_doc_entity(&recs, &d, 1), want);
    }

    #[test]
    fn related_linking() {
        let d = dict();
        let rel = |q: &str, r: &str| RelatedQueryRecord { query: q.into(), recommended: r.into() };
        assert_eq!(
            build_query_query_entity(&[rel("cake recipe", "chocolate cake")], &d),
            vec![Pair::new("cake recipe", "chocolate cake", 1.0)]
        );
        assert!(build_query_query_entity(&[rel("cake recipe", "vanilla pudding")], &d).is_empty());
        let batch = vec![rel("a", "iphone vs new york"), rel("b", "nope"), rel("c", "york")];
        assert_eq!(
            build_query_query_entity(&batch, &d),
            vec![Pair::new("a", "iphone", 1.0), Pair::new("a", "new york", 1.0), Pair::new("c", "york", 1.0)]
        );
    }

    #[test]
    fn tag_first_match_wins() {
        let d = dict();
        let rule = |p: &str, es: &[&str]| TagRule {
            pattern: p.into(),
            mode: MatchMode::Substring,
            tag: "t".into(),
            entities: es.iter().map(|s| s.to_string()).collect(),
        };
        let rules = vec![rule("cake", &["E", "F"]), rule("chocolate", &["G"])];
        assert_eq!(build_query_tag_entity(&["cake shop"], &rules, &d).len(), 2);
        assert!(build_query_tag_entity(&["bread"], &rules, &d).is_empty());
        let got = build_query_tag_entity(&["chocolate cake"], &rules, &d);
        assert_eq!(got, vec![Pair::new("chocolate cake", "E", 1.0), Pair::new("chocolate cake", "F", 1.0)]);
    }

    fn sample_pairs() -> Vec<Pair> {
        ["E", "F", "E", "G", "F", "E", "H"]
            .iter()
            .enumerate()
            .map(|(i, e)| Pair::new(format!("q{i}"), *e, 1.0))
            .collect()
    }

    #[test]
    fn quality_filters() {
        let pairs = sample_pairs();
        let (same, n) = filter_low_quality(pairs.clone(), &HashSet::new(), None);
        assert_eq!((same, n), (pairs.clone(), 0));
        let bl: HashSet<String> = ["E".to_string()].into();
        let (kept, n) = filter_low_quality(pairs.clone(), &bl, None);
        assert_eq!(n, 3);
        assert!(kept.iter().all(|p| p.entity != "E"));
        let scores: HashMap<String, f64> = [("F".to_string(), 0.9), ("G".to_string(), 0.1), ("E".to_string(), 0.8)].into();
        let (kept, n) = filter_low_quality(pairs.clone(), &bl, Some((&scores, 0.5)));
        let want: Vec<Pair> = pairs
            .iter()
            .filter(|p| p.entity != "E" && scores.get(&p.entity).is_some_and(|s| *s >= 0.5))
            .cloned()
            .collect();
        assert_eq!(kept, want);
        assert_eq!(n, pairs.len() - want.len());
    }

    #[test]
    fn low_freq() {
        let pairs = sample_pairs();
        assert_eq!(filter_low_freq(pairs.clone(), 1), pairs);
        let kept = filter_low_freq(pairs.clone(), 2);
        assert!(kept.iter().all(|p| p.entity == "E" || p.entity == "F"));
        assert_eq!(kept.len(), 5);
        let kept = filter_low_freq(pairs.clone(), 3);
        let want: Vec<Pair> = pairs
            .iter()
            .filter(|p| pairs.iter().filter(|o| o.entity == p.entity).count() >= 3)
            .cloned()
            .collect();
        assert_eq!(kept, want);
    }

    #[test]
    fn subsample_rates() {
        assert_eq!(keep_probability(0.01, 0.02), 1.0);
        assert!((keep_probability(0.08, 0.02) - 0.5).abs() < 1e-15);
        let pairs = sample_pairs();
        assert_eq!(subsample_high_freq(pairs.clone(), 1.0, &mut SeededRng::new(1)), pairs);
        let a = subsample_high_freq(pairs.clone(), 0.05, &mut SeededRng::new(4));
        let b = subsample_high_freq(pairs.clone(), 0.05, &mut SeededRng::new(4));
        assert_eq!(a, b);
    }

    #[test]
    fn subsample_monte_carlo_at_four_t() {
        let n = 100_000;
        let mut pairs: Vec<Pair> = (0..n).map(|_| Pair::new("q", "A", 1.0)).collect();
        pairs.extend((0..n).map(|_| Pair::new("q", "B", 1.0)));
        // f(A) = 0.5 = 4t
        let kept = subsample_high_freq(pairs, 0.125, &mut SeededRng::new(77));
        let a = kept.iter().filter(|p| p.entity == "A").count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((a - 0.5 * n as f64).abs() <= 3.0 * sigma, "{a}");
    }

    #[test]
    fn shuffle_properties() {
        let one = vec![Pair::new("q", "E", 1.0)];
        assert_eq!(shuffle(one.clone(), &mut SeededRng::new(1)), one);
        let pairs = sample_pairs();
        let s = shuffle(pairs.clone(), &mut SeededRng::new(2));
        assert_eq!(s, shuffle(pairs.clone(), &mut SeededRng::new(2)));
        let key = |v: &[Pair]| {
            let mut k: Vec<String> = v.iter().map(|p| format!("{}|{}", p.query, p.entity)).collect();
            k.sort();
            k
        };
        assert_eq!(key(&s), key(&pairs));
    }
}
