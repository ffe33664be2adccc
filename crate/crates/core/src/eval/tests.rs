use std::sync::Arc;

use super::*;
use crate::index::{build_index, IndexMeta};
use crate::model::{BaseConfig, BaseEncoder, EnhancedConfig, EnhancedEncoder};
use crate::numerics::{Matrix, SeededRng};
use crate::text::{PhraseDict, TextConfig, Tokenizer, Vocabulary};

fn vocab(entities: usize) -> Arc<Vocabulary> {
    let words = ["cold", "weather", "food", "hot", "pot"];
    let ents: Vec<String> = (0..entities).map(|i| format!("e{i}")).collect();
    Arc::new(Vocabulary::from_lists(words, ents))
}

fn text() -> TextConfig {
    TextConfig { num_buckets: 16, ..TextConfig::default() }
}

/// Zero encoder: every query embeds to zero, so every entity scores 0 and
/// retrieval returns entities in id order.
fn id_order_method(name: &str, hash: &str) -> Method {
    let v = vocab(40);
    let enc = BaseEncoder::zeros(BaseConfig { emb_dim: 4, hidden: [4, 4], out_dim: 3, ..BaseConfig::default() }, v.word_count(), 16);
    let model = QueryModel {
        tokenizer: Tokenizer::new(v.clone(), Arc::new(PhraseDict::new()), text()),
        encoder: Encoder::Base(enc),
        checkpoint_hash: hash.into(),
    };
    let mut rng = SeededRng::new(1);
    let table = Matrix::from_vec(40, 3, (0..120).map(|_| rng.uniform_range(0.5, 1.0)).collect()).unwrap();
    let meta = IndexMeta { encoder: EncoderKind::Base, checkpoint_hash: hash.into(), config_hash: "c".into() };
    let index = build_index(&table, v.entities(), None, meta).unwrap();
    Method::new(name, model, index).unwrap()
}

fn set(names: &[&str]) -> HashSet<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[test]
fn precision_direct_cases() {
    assert_eq!(precision_at_m(&["a", "b"], &set(&["a"]), 2).unwrap(), 0.5);
    assert_eq!(precision_at_m(&["x", "y"], &set(&["a"]), 2).unwrap(), 0.0);
    assert_eq!(precision_at_m(&["a", "b"], &set(&["a", "b", "c"]), 2).unwrap(), 1.0);
    assert_eq!(precision_at_m(&["a"], &set(&["a"]), 4).unwrap(), 0.25);
    assert_eq!(precision_at_m(&["a", "a"], &set(&["a"]), 2).unwrap(), 0.5);
    assert!(matches!(precision_at_m(&["a"], &set(&["a"]), 0), Err(Error::MZero)));
}

proptest::proptest! {
    #[test]
    fn precision_properties(ids in proptest::collection::vec(0u8..20, 0..30), truth in proptest::collection::hash_set(0u8..20, 1..10), seed: u64) {
        let names: Vec<String> = ids.iter().map(|i| format!("n{i}")).collect();
        let truth: HashSet<String> = truth.iter().map(|i| format!("n{i}")).collect();
        let m = names.len().max(1);
        let mut shuffled = names.clone();
        SeededRng::new(seed).shuffle(&mut shuffled);
        let a = precision_at_m(&names, &truth, m).unwrap();
        let b = precision_at_m(&shuffled, &truth, m).unwrap();
        proptest::prop_assert_eq!(a, b);
        let mut last = 0.0;
        for m in 1..=names.len() + 3 {
            let hits = precision_at_m(&names, &truth, m).unwrap() * m as f64;
            proptest::prop_assert!(hits + 1e-9 >= last);
            last = hits;
        }
    }
}

fn five_cases() -> Vec<EvalCase> {
    let c = |q: &str, t: Vec<String>| EvalCase { query: q.into(), truth: t };
    let e = |ids: &[usize]| ids.iter().map(|i| format!("e{i}")).collect::<Vec<_>>();
    vec![
        c("cold weather food", e(&[0])),
        c("hot pot", e(&[5, 15, 25, 35])),
        c("food", e(&[39])),
        c("hot food", e(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9])),
        c("weather", e(&[1, 2])),
    ]
}

#[test]
fn five_case_fixture_matches_hand_values() {
    let m = id_order_method("zero", "h");
    let report = evaluate(&[m], &five_cases(), &DEFAULT_MS, Retrieval::Exact, "cfg").unwrap();
    // per case (P@1, P@10, P@20, P@30), retrieval = e0..e29 in order
    let per_case = [
        [1.0, 1.0 / 10.0, 1.0 / 20.0, 1.0 / 30.0],
        [0.0, 1.0 / 10.0, 2.0 / 20.0, 3.0 / 30.0],
        [0.0, 0.0, 0.0, 0.0],
        [1.0, 10.0 / 10.0, 10.0 / 20.0, 10.0 / 30.0],
        [0.0, 2.0 / 10.0, 2.0 / 20.0, 2.0 / 30.0],
    ];
    for j in 0..4 {
        let want: f64 = per_case.iter().map(|r| r[j]).sum::<f64>() / 5.0;
        assert_eq!(report.rows[0].precision[j], want, "column {j}");
    }
    assert_eq!(report.cases, 5);
    assert_eq!(report.config_hash, "cfg");
}

#[test]
fn perfect_single_case() {
    let m = id_order_method("zero", "h");
    let truth: Vec<String> = (0..20).map(|i| format!("e{i}")).collect();
    let cases = vec![EvalCase { query: "food".into(), truth }];
    let r = evaluate(&[m], &cases, &DEFAULT_MS, Retrieval::Default, "c").unwrap();
    assert_eq!(r.rows[0].precision, vec![1.0, 1.0, 1.0, 20.0 / 30.0]);
}

#[test]
fn reports_are_deterministic() {
    let run = || {
        let m = id_order_method("zero", "h");
        evaluate(&[m], &five_cases(), &DEFAULT_MS, Retrieval::Exact, "c").unwrap().to_json().unwrap()
    };
    assert_eq!(run(), run());
    let r = evaluate(&[id_order_method("zero", "h")], &five_cases(), &DEFAULT_MS, Retrieval::Exact, "c").unwrap();
    let table = r.to_table();
    assert!(table.lines().next().unwrap().contains("P@30"));
    assert!(table.contains("zero"));
}

#[test]
fn mismatched_index_rejected() {
    let a = id_order_method("a", "h1");
    let err = Method::new("b", a.model.clone(), id_order_method("x", "h2").index);
    assert!(matches!(err, Err(Error::MethodIndexMismatch { .. })));
}

#[test]
fn unknown_truth_restricted() {
    let idx = id_order_method("a", "h").index;
    let cases = vec![
        EvalCase { query: "q".into(), truth: vec!["e1".into(), "nope".into()] },
        EvalCase { query: "q".into(), truth: vec!["nope".into()] },
    ];
    let (kept, dropped) = restrict_cases(&cases, &idx);
    assert_eq!(dropped, 1);
    assert_eq!(kept[0].truth, vec!["e1".to_string()]);
}

#[test]
fn case_file_parsing() {
    let cases = parse_eval_cases("e", "cold food\ta;b\n\nq2\tc\n").unwrap();
    assert_eq!(cases[0].truth, vec!["a", "b"]);
    assert!(parse_eval_cases("e", "q\t ; ").is_err());
    assert!(parse_eval_cases("e", "q only").is_err());
}

fn enhanced_model() -> QueryModel {
    let v = vocab(3);
    let cfg = EnhancedConfig { emb_dim: 4, hidden: 3, attention: 2, out_dim: 3, ..EnhancedConfig::default() };
    QueryModel {
        tokenizer: Tokenizer::new(v.clone(), Arc::new(PhraseDict::new()), text()),
        encoder: Encoder::Enhanced(EnhancedEncoder::new(cfg, v.word_count(), &mut SeededRng::new(4)).unwrap()),
        checkpoint_hash: "h".into(),
    }
}

#[test]
fn attention_dump() {
    let m = enhanced_model();
    assert_eq!(dump_attention(&m, "food").unwrap(), vec![("food".to_string(), 1.0)]);
    let w = dump_attention(&m, "cold weather food food unknownword").unwrap();
    assert_eq!(w.len(), 5);
    assert!((w.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-9);
    let Encoder::Enhanced(enc) = &m.encoder else { unreachable!() };
    let direct = enc.encode(&m.tokenize("cold weather food food unknownword").unwrap()).unwrap();
    assert_eq!(w.iter().map(|x| x.1).collect::<Vec<_>>(), direct.alpha());
    assert!(dump_attention(&id_order_method("a", "h").model, "food").is_err());
}
