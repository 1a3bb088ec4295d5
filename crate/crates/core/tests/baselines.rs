mod common;

use std::collections::BTreeMap;

use common::*;
use ktlab::baselines::{
    bkt_fit_all, bkt_fit_em, dkt_train, load_dkt, pfa_fit, save_dkt, BaselineError, BktFitConfig, BktParams, DktConfig,
    PfaConfig,
};
use ktlab::data::{split_holdout, InteractionDataset, StudentHistory, TestSpec};
use ktlab::eval::{auc, evaluate_tracer, extract_trajectory, synth_generate, BktWorld, SynthKc};
use ktlab::optim::AdamWConfig;
use ktlab::Tracer;

fn single_kc_world(params: BktParams) -> BktWorld {
    BktWorld {
        kcs: vec![SynthKc {
            id: "k".into(),
            name: "skill".into(),
            params,
            weight: 1.0,
        }],
        exercises_per_kc: 3,
        prior_logit_sd: 0.0,
    }
}

#[test]
fn pfa_rewards_success_and_penalizes_failure() {
    // Almost no learning: counts reveal the hidden mastery state.
    let world = single_kc_world(BktParams {
        prior: 0.5,
        learn: 0.01,
        guess: 0.15,
        slip: 0.1,
    });
    let (ds, _) = synth_generate(&world, 400, 15, 3, "").unwrap();
    let pfa = pfa_fit(&ds, &PfaConfig::default()).unwrap();
    let k = pfa.kcs["k"];
    assert!(k.gamma > 0.0, "gamma {}", k.gamma);
    assert!(k.rho < 0.0, "rho {}", k.rho);
}

#[test]
fn dkt_overfits_a_toy_set() {
    let (ds, _) = synth_generate(&BktWorld::standard(), 5, 20, 4, "").unwrap();
    let config = DktConfig {
        hidden: 32,
        epochs: 400,
        batch_size: 5,
        seed: 1,
        optimizer: AdamWConfig {
            learning_rate: 2e-2,
            weight_decay: 0.0,
            ..Default::default()
        },
    };
    let dkt = dkt_train(&ds, &config).unwrap();
    let train_auc = auc(&evaluate_tracer(&dkt, &ds).unwrap()).unwrap();
    assert!(train_auc >= 0.95, "train AUC {train_auc}");
}

#[test]
fn dkt_save_load_round_trip() {
    let (ds, _) = synth_generate(&BktWorld::standard(), 6, 8, 5, "").unwrap();
    let dkt = dkt_train(
        &ds,
        &DktConfig {
            hidden: 4,
            epochs: 2,
            ..DktConfig::default()
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dkt.json");
    save_dkt(&dkt, &path).unwrap();
    let back = load_dkt(&path).unwrap();
    let h = ds.histories.values().next().unwrap();
    assert_eq!(dkt.predict_sequence(h).unwrap(), back.predict_sequence(h).unwrap());
}

#[test]
fn all_correct_data_pins_the_prior_to_the_clamp() {
    let histories = (0..30).map(|s| StudentHistory {
        student_id: format!("s{s}"),
        interactions: (0..10).map(|t| interaction(&format!("s{s}"), t, "k1", "fractions", true)).collect(),
    });
    let ds = InteractionDataset::from_histories(histories, kc_table());
    let config = BktFitConfig::default();
    let fit = bkt_fit_em(&ds, "k1", &config).unwrap();
    let p = fit.params;
    assert!((p.prior - config.clamp_hi).abs() < 1e-6, "prior {}", p.prior);
    for v in [p.prior, p.learn, p.guess, p.slip] {
        assert!((config.clamp_lo..=config.clamp_hi).contains(&v));
    }
    assert!(p.guess < 0.5 && p.slip < 0.5);
}

#[test]
fn fitting_refuses_test_data() {
    let (ds, _) = synth_generate(&BktWorld::standard(), 20, 5, 6, "").unwrap();
    let (_, test) = split_holdout(&ds, TestSpec::Count(5), 0).unwrap();
    assert!(matches!(bkt_fit_all(&test, &BktFitConfig::default()), Err(BaselineError::TestDataInFit)));
    assert!(matches!(pfa_fit(&test, &PfaConfig::default()), Err(BaselineError::TestDataInFit)));
    assert!(matches!(dkt_train(&test, &DktConfig::default()), Err(BaselineError::TestDataInFit)));
}

fn two_kc_history() -> (StudentHistory, BTreeMap<String, String>) {
    let h = StudentHistory {
        student_id: "s".into(),
        interactions: [true, false, true, true]
            .iter()
            .enumerate()
            .map(|(t, &c)| interaction("s", t as u64, "k1", "fractions", c))
            .collect(),
    };
    (h, kc_table())
}

#[test]
fn trajectory_shape_and_untouched_columns() {
    let (h, table) = two_kc_history();
    let (ds, _) = synth_generate(&BktWorld::standard(), 50, 10, 7, "").unwrap();
    let ds = InteractionDataset::from_histories(
        ds.histories.into_values().map(|mut h| {
            for it in &mut h.interactions {
                // Map the world's KCs onto the two of the fixture table.
                let (id, name) = if it.kc_id == "k1" { ("k1", "fractions") } else { ("k2", "decimals") };
                it.kc_id = id.into();
                it.kc_name = name.into();
            }
            h
        }),
        BTreeMap::new(),
    );
    let model = bkt_fit_all(&ds, &BktFitConfig::default()).unwrap();
    let kcs: Vec<String> = vec!["k1".into(), "k2".into(), "k3".into()];
    let m = extract_trajectory(&model, &h, &kcs, &table).unwrap();

    assert_eq!(m.values.len(), h.len());
    assert!(m.values.iter().all(|r| r.len() == 3));
    // k2 is never practised: its column never moves.
    let k2: Vec<f64> = m.values.iter().map(|r| r[1].unwrap()).collect();
    assert!(k2.iter().all(|&v| v == m.initial[1].unwrap()));
    // k3 was never fitted: reported missing.
    assert_eq!(m.missing, vec![false, false, true]);
    assert!(m.values.iter().all(|r| r[2].is_none()));
    // Practised column: up after correct, down after incorrect.
    let d = m.deltas();
    let signs: Vec<bool> = d.iter().map(|r| r[0].unwrap() > 0.0).collect();
    assert_eq!(signs, vec![true, false, true, true]);
    for row in m.values.iter().flatten().flatten() {
        assert!((0.0..=1.0).contains(row));
    }

    let csv = m.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,answered_kc,correct,k1,k2,k3");
    assert_eq!(lines.len(), h.len() + 1);
    assert!(lines[2].starts_with("1,k1,0,"));
    assert!(lines[2].ends_with(','));
}

#[test]
fn trajectory_rejects_unknown_tracked_kc() {
    let (h, table) = two_kc_history();
    let (ds, _) = synth_generate(&BktWorld::standard(), 10, 5, 8, "").unwrap();
    let model = bkt_fit_all(&ds, &BktFitConfig::default()).unwrap();
    assert!(extract_trajectory(&model, &h, &["nope".to_string()], &table).is_err());
    assert!(extract_trajectory(&model, &h, &[], &table).is_err());
}
