use super::*;
use crate::numerics::grad_check;

fn small_config(kind: EncoderKind) -> TrainConfig {
    TrainConfig {
        encoder: kind,
        lr: 1e-2,
        batch_size: 4,
        negatives: 5,
        epochs: 2,
        seed: 11,
        base: BaseConfig {
            emb_dim: 4,
            hidden: [6, 5],
            out_dim: 3,
            ..BaseConfig::default()
        },
        enhanced: EnhancedConfig {
            emb_dim: 4,
            hidden: 3,
            attention: 2,
            out_dim: 3,
            ..EnhancedConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn query(ids: &[u32], ngrams: &[u32]) -> TokenizedQuery {
    let mut q = TokenizedQuery::from_ids(ids);
    q.ngrams = ngrams.to_vec();
    q
}

fn pairs() -> Vec<TrainingPair> {
    vec![
        TrainingPair { query: query(&[2, 3], &[0, 5]), target: 0, weight: 1.0 },
        TrainingPair { query: query(&[4], &[]), target: 3, weight: 2.0 },
        TrainingPair { query: query(&[5, 2, 6], &[1]), target: 1, weight: 0.5 },
    ]
}

fn check_batch_gradients(kind: EncoderKind) {
    let config = small_config(kind);
    let mut rng = SeededRng::new(3);
    let model = Model::new(&config, 8, 6, 8, &mut rng).unwrap();
    let data = pairs();
    let batch: Vec<&TrainingPair> = data.iter().collect();
    let negs = vec![
        vec![Negative { id: 1, prob: 0.3 }, Negative { id: 4, prob: 0.1 }],
        vec![Negative { id: 0, prob: 0.4 }, Negative { id: 0, prob: 0.4 }],
        vec![Negative { id: 5, prob: 0.05 }, Negative { id: 2, prob: 0.2 }],
    ];
    let out = batch_loss(&model, &batch, &negs, true).unwrap();
    let analytic = out.grads.to_flat(&model);
    let mut probe = model.clone();
    let loss = |flat: &[f64]| {
        probe.set_flat(flat);
        batch_loss(&probe, &batch, &negs, true).unwrap().loss
    };
    let r = grad_check(loss, &model.to_flat(), &analytic, 1e-5).unwrap();
    assert!(r.max_relative_error < 1e-4, "{kind}: {r:?}");
}

#[test]
fn base_batch_gradients() {
    check_batch_gradients(EncoderKind::Base);
}

#[test]
fn enhanced_batch_gradients() {
    check_batch_gradients(EncoderKind::Enhanced);
}

#[test]
fn weight_scales_loss() {
    let config = small_config(EncoderKind::Enhanced);
    let model = Model::new(&config, 8, 6, 8, &mut SeededRng::new(1)).unwrap();
    let mut p = pairs().remove(0);
    let negs = vec![vec![Negative { id: 2, prob: 0.2 }]];
    let one = batch_loss(&model, &[&p], &negs, true).unwrap().loss;
    p.weight = 2.5;
    let scaled = batch_loss(&model, &[&p], &negs, true).unwrap().loss;
    assert!((scaled - 2.5 * one).abs() < 1e-12);
}

#[test]
fn same_seed_same_trace() {
    for kind in [EncoderKind::Base, EncoderKind::Enhanced] {
        let run = || {
            let mut t = Trainer::new(small_config(kind), 8, 8, &[9, 7, 5, 3, 2, 1]).unwrap();
            t.fit(&pairs(), |_, _| Ok(())).unwrap();
            (t.step_losses().to_vec(), t.into_model())
        };
        let (a, ma) = run();
        let (b, mb) = run();
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(ma, mb);
        assert_eq!(a.len(), 2);
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    for kind in [EncoderKind::Base, EncoderKind::Enhanced] {
        let mut config = small_config(kind);
        config.lr = 0.0;
        let mut t = Trainer::new(config, 8, 8, &[9, 7, 5, 3, 2, 1]).unwrap();
        let before = t.model().to_flat();
        t.fit(&pairs(), |_, _| Ok(())).unwrap();
        assert_eq!(t.model().to_flat(), before);
    }
}

#[test]
fn untouched_entities_keep_initial_rows() {
    let mut config = small_config(EncoderKind::Enhanced);
    config.negatives = 1;
    let freqs = vec![1u64; 50];
    let mut t = Trainer::new(config, 8, 8, &freqs).unwrap();
    let init = t.model().entity_emb.clone();
    let data = pairs();
    t.step(&[&data[0]]).unwrap();
    let changed: Vec<usize> = (0..50).filter(|&i| t.model().entity_emb.row(i) != init.row(i)).collect();
    assert!(changed.contains(&0));
    assert!(changed.len() <= 2, "{changed:?}");
}

#[test]
fn negatives_clamped_to_vocabulary() {
    let mut config = small_config(EncoderKind::Enhanced);
    config.negatives = 100;
    let t = Trainer::new(config, 8, 8, &[3, 2, 1]).unwrap();
    assert_eq!(t.negatives_per_example(), 2);
}

#[test]
fn single_entity_vocabulary_rejected() {
    let r = Trainer::new(small_config(EncoderKind::Base), 8, 8, &[3]);
    assert!(matches!(r, Err(Error::VocabTooSmall(1))));
}

#[test]
fn single_pair_overfits() {
    for kind in [EncoderKind::Base, EncoderKind::Enhanced] {
        let mut config = small_config(kind);
        config.negatives = 4;
        let mut t = Trainer::new(config, 8, 8, &[1; 20]).unwrap();
        let data = vec![pairs().remove(0)];
        let mut trace = vec![t.model().full_softmax_loss(&data).unwrap()];
        for _ in 0..200 {
            t.step(&[&data[0]]).unwrap();
            trace.push(t.model().full_softmax_loss(&data).unwrap());
        }
        for s in 10..200 {
            assert!(trace[s + 1] < trace[s], "{kind} step {s}: {} >= {}", trace[s + 1], trace[s]);
        }
        let q = t.model().encoder.embed(&data[0].query).unwrap();
        let scores: Vec<f64> = t.model().entity_emb.iter_rows().map(|u| dot(u, &q)).collect();
        let best = (0..scores.len()).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
        assert_eq!(best, data[0].target as usize, "{kind}");
    }
}

#[test]
fn epoch_log_fields() {
    let mut t = Trainer::new(small_config(EncoderKind::Enhanced), 8, 8, &[1; 6]).unwrap();
    let mut seen = Vec::new();
    let logs = t
        .fit(&pairs(), |tr, log| {
            seen.push((tr.epoch(), log.epoch));
            Ok(())
        })
        .unwrap();
    assert_eq!(seen, vec![(1, 1), (2, 2)]);
    assert!(logs.iter().all(|l| l.seed == 11 && l.mean_loss > 0.0 && l.wall_ms >= 0.0));
}
