//! Train, save, reload and serve through files on disk.

use std::sync::Arc;

use deepmatch_core::checkpoint::{Checkpoint, CheckpointMeta, QueryModel};
use deepmatch_core::datapipe::synth::overfit_corpus;
use deepmatch_core::index::{build_index, EntityIndex, IndexMeta, IvfConfig};
use deepmatch_core::model::{EncoderKind, EnhancedConfig};
use deepmatch_core::numerics::SeededRng;
use deepmatch_core::serve::{self, Health, Recommendation, ServeConfig, Service, Similar};
use deepmatch_core::text::{build_vocab, PhraseDict, TextConfig, Tokenizer, Vocabulary};
use deepmatch_core::training::{tokenize_pairs, TrainConfig, Trainer};
use deepmatch_core::Error;

struct Artifacts {
    dir: tempfile::TempDir,
    records: Vec<(String, String)>,
}

fn train_to_disk(seed: u64) -> Artifacts {
    let dir = tempfile::tempdir().unwrap();
    let records = overfit_corpus(60, 20, &mut SeededRng::new(seed));
    let phrases = Arc::new(PhraseDict::new());
    let vocab = Arc::new(build_vocab(records.iter().map(|(q, e)| (q, e)), &phrases, 1).unwrap());
    vocab.save(&dir.path().join("vocab.json")).unwrap();
    let text = TextConfig { num_buckets: 64, ..TextConfig::default() };
    let tokenizer = Tokenizer::new(vocab.clone(), phrases, text.clone());
    let (pairs, _) = tokenize_pairs(records.iter().map(|(q, e)| (q.as_str(), e.as_str(), 1.0)), &tokenizer);
    let train = TrainConfig {
        encoder: EncoderKind::Enhanced,
        lr: 1e-2,
        batch_size: 8,
        negatives: 10,
        epochs: 3,
        seed,
        enhanced: EnhancedConfig { emb_dim: 16, hidden: 16, attention: 8, out_dim: 16, ..EnhancedConfig::default() },
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(train.clone(), vocab.word_count(), text.num_buckets, vocab.entity_freqs()).unwrap();
    trainer.fit(&pairs, |_, _| Ok(())).unwrap();
    let ckpt = Checkpoint {
        meta: CheckpointMeta { train, text, config_hash: "cfg".into() },
        rng: trainer.rng_state(),
        epoch: trainer.epoch() as u32,
        model: trainer.model().clone(),
    };
    ckpt.save(&dir.path().join("model.ckpt")).unwrap();
    Artifacts { dir, records }
}

fn index_for(ckpt: &Checkpoint, hash: &str, vocab: &Vocabulary) -> EntityIndex {
    let meta = IndexMeta { encoder: ckpt.kind(), checkpoint_hash: hash.into(), config_hash: "cfg".into() };
    let mut index = build_index(&ckpt.model.entity_emb, vocab.entities(), None, meta).unwrap();
    index.cluster(&IvfConfig { clusters: 4, probes: 4, ..IvfConfig::default() }).unwrap();
    index
}

#[test]
fn reloaded_artifacts_reproduce_rankings() {
    let a = train_to_disk(7);
    let (ckpt, hash) = Checkpoint::load(&a.dir.path().join("model.ckpt")).unwrap();
    let vocab = Arc::new(Vocabulary::load(&a.dir.path().join("vocab.json")).unwrap());
    let index = index_for(&ckpt, &hash, &vocab);
    let index_hash = index.save(&a.dir.path().join("index.bin")).unwrap();
    let (loaded, loaded_hash) = EntityIndex::load(&a.dir.path().join("index.bin")).unwrap();
    assert_eq!(loaded_hash, index_hash);
    assert_eq!(loaded, index);

    // saving the reloaded checkpoint gives the same bytes
    let again = ckpt.save(&a.dir.path().join("again.ckpt")).unwrap();
    assert_eq!(again, hash);

    let model = QueryModel::new(&ckpt, hash, vocab, Arc::new(PhraseDict::new())).unwrap();
    for (q, _) in a.records.iter().take(20) {
        let v = model.embed(q).unwrap();
        let want = index.topk_exact(&v, 5).unwrap();
        assert_eq!(loaded.topk_exact(&v, 5).unwrap(), want);
        // all clusters probed: identical to the full scan
        assert_eq!(loaded.topk(&v, 5).unwrap(), want);
    }
}

#[test]
fn stale_index_is_rejected() {
    let a = train_to_disk(8);
    let b = train_to_disk(9);
    let (ckpt_a, hash_a) = Checkpoint::load(&a.dir.path().join("model.ckpt")).unwrap();
    let (ckpt_b, hash_b) = Checkpoint::load(&b.dir.path().join("model.ckpt")).unwrap();
    assert_ne!(hash_a, hash_b);
    let vocab_a = Arc::new(Vocabulary::load(&a.dir.path().join("vocab.json")).unwrap());
    let vocab_b = Vocabulary::load(&b.dir.path().join("vocab.json")).unwrap();
    let stale = index_for(&ckpt_b, &hash_b, &vocab_b);
    let model = QueryModel::new(&ckpt_a, hash_a, vocab_a, Arc::new(PhraseDict::new())).unwrap();
    let err = Service::new(model, stale, "ih".into(), ServeConfig::default()).err().unwrap();
    assert!(matches!(err, Error::IndexMismatch { .. }), "{err}");
}

#[test]
fn http_service_over_saved_files() {
    let a = train_to_disk(10);
    let (ckpt, hash) = Checkpoint::load(&a.dir.path().join("model.ckpt")).unwrap();
    let vocab = Arc::new(Vocabulary::load(&a.dir.path().join("vocab.json")).unwrap());
    index_for(&ckpt, &hash, &vocab).save(&a.dir.path().join("index.bin")).unwrap();
    let (index, index_hash) = EntityIndex::load(&a.dir.path().join("index.bin")).unwrap();
    let model = QueryModel::new(&ckpt, hash, vocab.clone(), Arc::new(PhraseDict::new())).unwrap();
    let expected = index.topk_exact(&model.embed(&a.records[0].0).unwrap(), 3).unwrap();
    let config = ServeConfig { bind: "127.0.0.1:0".into(), worker_threads: 1, ..ServeConfig::default() };
    let handle = serve::spawn(Service::new(model, index, index_hash.clone(), config).unwrap()).unwrap();
    let base = format!("http://{}", handle.addr());
    let client = reqwest::blocking::Client::new();

    let health: Health = client.get(format!("{base}/healthz")).send().unwrap().json().unwrap();
    assert_eq!(health.index_hash, index_hash);
    assert_eq!(health.vocab_size, vocab.word_count());

    let r: Recommendation = client
        .get(format!("{base}/recommend"))
        .query(&[("q", a.records[0].0.as_str()), ("k", "3")])
        .send()
        .unwrap()
        .json()
        .unwrap();
    let names: Vec<&str> = r.results.iter().map(|e| e.entity.as_str()).collect();
    let want: Vec<&str> = expected.iter().map(|e| e.name.as_str()).collect();
    assert_eq!(names, want);

    let entity = &a.records[0].1;
    let s: Similar = client
        .get(format!("{base}/similar"))
        .query(&[("entity", entity.as_str()), ("n", "4")])
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(s.results.len(), 4);
    assert!(s.results.iter().all(|e| &e.entity != entity));
    handle.shutdown().unwrap();
}
