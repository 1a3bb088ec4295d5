mod common;

use common::*;
use ktlab::ktlp::{build_vocab, format_history, KtlpExample, PromptTemplate, RepresentationMode};
use ktlab::lm::{
    evaluate_loss, load_checkpoint, lora_attach, predict_correctness, save_checkpoint, train_clm, train_lora,
    Checkpoint, LmConfig, LmError, LmParams, Proj, TrainConfig,
};
use ktlab::optim::AdamWConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus(n_students: usize, len: usize, seed: u64) -> Vec<KtlpExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_students)
        .flat_map(|i| {
            let h = random_history(&format!("s{i}"), len, &mut rng);
            format_history(&h, RepresentationMode::Description, &PromptTemplate::default()).unwrap()
        })
        .collect()
}

fn tiny(vocab_size: usize) -> LmConfig {
    LmConfig {
        n_layers: 2,
        n_heads: 2,
        embed_dim: 16,
        mlp_dim: 32,
        context_len: 256,
        vocab_size,
    }
}

#[test]
fn initial_loss_is_near_uniform() {
    let examples = corpus(4, 8, 1);
    let vocab = build_vocab(&examples, &[]).unwrap();
    let params = LmParams::init(LmConfig::default().with_vocab(vocab.len()), 0).unwrap();
    let loss = evaluate_loss(&params, None, &examples, &vocab).unwrap();
    let uniform = (vocab.len() as f64).ln();
    assert!((loss - uniform).abs() <= 0.1 * uniform, "loss {loss} vs ln V {uniform}");
}

#[test]
fn training_lowers_loss() {
    let examples = corpus(6, 10, 2);
    let vocab = build_vocab(&examples, &[]).unwrap();
    let params = LmParams::init(tiny(vocab.len()), 0).unwrap();
    let before = evaluate_loss(&params, None, &examples, &vocab).unwrap();
    let tc = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    let (params, curve) = train_clm(params, &examples, &vocab, &tc).unwrap();
    let after = evaluate_loss(&params, None, &examples, &vocab).unwrap();
    assert_eq!(curve.epochs.len(), 20);
    assert!(after < 0.8, "loss after training {after}, before {before}");
    assert!(curve.epochs.iter().all(|l| l.is_finite()));
}

#[test]
fn same_seed_same_bits() {
    let examples = corpus(5, 8, 3);
    let vocab = build_vocab(&examples, &[]).unwrap();
    let run = |seed| {
        let params = LmParams::init(tiny(vocab.len()), seed).unwrap();
        let tc = TrainConfig {
            epochs: 3,
            seed,
            ..TrainConfig::default()
        };
        train_clm(params, &examples, &vocab, &tc).unwrap()
    };
    let (a, ca) = run(7);
    let (b, cb) = run(7);
    let (c, _) = run(8);
    assert_eq!(a.checksum(), b.checksum());
    assert_eq!(
        ca.epochs.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        cb.epochs.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
    assert_ne!(a.checksum(), c.checksum());
}

/// A frozen random head caps the logit margin, so the adapter is attached
/// to a base pretrained on a mixed-label corpus.
#[test]
fn lora_memorizes_an_unseen_example() {
    let pretrain = corpus(4, 8, 4);
    let ex = corpus(1, 6, 9).pop().unwrap();
    let vocab = build_vocab(&[pretrain.as_slice(), std::slice::from_ref(&ex)].concat(), &[]).unwrap();
    let schedule = |epochs, batch_size| TrainConfig {
        epochs,
        batch_size,
        seed: 0,
        optimizer: AdamWConfig {
            learning_rate: 1e-2,
            ..Default::default()
        },
    };
    let params = LmParams::init(tiny(vocab.len()), 1).unwrap();
    let (params, _) = train_clm(params, &pretrain, &vocab, &schedule(30, 1)).unwrap();
    let answer = |p_yes: f64| if ex.output == "yes" { p_yes } else { 1.0 - p_yes };
    let before = answer(predict_correctness(&params, None, &ex.input, &vocab).unwrap());

    let (base, adapter) = lora_attach(params, 4, 8.0, &[Proj::Query, Proj::Value], 2).unwrap();
    let (adapter, _) = train_lora(&base, adapter, std::slice::from_ref(&ex), &vocab, &schedule(150, 1)).unwrap();
    let after = answer(predict_correctness(base.params(), Some(&adapter), &ex.input, &vocab).unwrap());
    assert!(before < 0.5 && after > 0.9, "P(answer) {before} -> {after}");
}

#[test]
fn over_long_prompts_are_truncated_not_rejected() {
    let examples = corpus(2, 30, 5);
    let vocab = build_vocab(&examples, &[]).unwrap();
    let cfg = LmConfig {
        context_len: 32,
        ..tiny(vocab.len())
    };
    let params = LmParams::init(cfg, 0).unwrap();
    let tc = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let (params, curve) = train_clm(params, &examples, &vocab, &tc).unwrap();
    assert!(curve.last().unwrap().is_finite());
    let p = predict_correctness(&params, None, &examples.last().unwrap().input, &vocab).unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let examples = corpus(2, 6, 6);
    let vocab = build_vocab(&examples, &[]).unwrap();
    let params = LmParams::init(tiny(vocab.len()), 3).unwrap();
    let (base, adapter) = lora_attach(params, 2, 4.0, &[Proj::Value], 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let ckpt = Checkpoint::new(base.params().clone(), vocab.hash(), Some(adapter.clone()));
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path, &vocab.hash()).unwrap();
    let input = &examples[0].input;
    let before = predict_correctness(base.params(), Some(&adapter), input, &vocab).unwrap();
    let after = predict_correctness(&loaded.params, loaded.adapter.as_ref(), input, &vocab).unwrap();
    assert_eq!(before.to_bits(), after.to_bits());
    assert!(matches!(load_checkpoint(&path, "not-the-hash"), Err(LmError::VocabMismatch { .. })));
}
