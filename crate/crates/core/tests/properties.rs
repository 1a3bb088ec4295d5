mod common;

use common::*;
use ktlab::baselines::{bkt_fit_em, irt_fit, pfa_fit, pfa_predict, BktFitConfig, BktParams, DktParams, IrtConfig, PfaConfig};
use ktlab::data::{dataset_stats, filter_and_truncate, split_holdout, InteractionDataset, StudentHistory, TestSpec};
use ktlab::eval::{auc_scores, calibration, synth_generate, BktWorld, EvalRecord, SynthKc};
use ktlab::ktlp::{build_vocab, format_history, format_input, parse_example, tokenize, PromptTemplate, RepresentationMode};
use ktlab::lm::yes_no_probability;
use ktlab::{Interaction, Target, Tracer};
use proptest::prelude::*;
use proptest::sample::subsequence;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn labelled_scores(max: usize) -> impl Strategy<Value = (Vec<bool>, Vec<f64>)> {
    (2usize..=max, 2u32..20).prop_flat_map(|(n, levels)| {
        (
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec((0..levels).prop_map(move |k| k as f64 / levels as f64), n),
        )
    })
}

fn kc_name() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-z]{1,8}", 1..=3).prop_map(|w| w.join(" "))
}

fn dataset_strategy() -> impl Strategy<Value = InteractionDataset> {
    prop::collection::vec(prop::collection::vec((0usize..3, any::<bool>()), 0..15), 1..25).prop_map(|students| {
        let table = kc_table();
        let kcs: Vec<(String, String)> = table.clone().into_iter().collect();
        let histories = students.into_iter().enumerate().filter(|(_, s)| !s.is_empty()).map(|(i, s)| {
            let id = format!("u{i:03}");
            StudentHistory {
                student_id: id.clone(),
                interactions: s
                    .into_iter()
                    .enumerate()
                    .map(|(t, (k, c))| interaction(&id, t as u64, &kcs[k].0, &kcs[k].1, c))
                    .collect(),
            }
        });
        InteractionDataset::from_histories(histories, table)
    })
}

fn bkt_params() -> impl Strategy<Value = BktParams> {
    (0.01f64..0.99, 0.0f64..0.5, 0.0f64..0.45, 0.0f64..0.45).prop_map(|(prior, learn, guess, slip)| BktParams {
        prior,
        learn,
        guess,
        slip,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn auc_matches_pairwise_count((labels, scores) in labelled_scores(200)) {
        let n_pos = labels.iter().filter(|&&y| y).count();
        prop_assume!(n_pos > 0 && n_pos < labels.len());
        let got = auc_scores(&labels, &scores).unwrap();
        prop_assert!((got - brute_force_auc(&labels, &scores)).abs() <= 1e-12);
    }

    #[test]
    fn auc_ignores_monotone_transforms((labels, scores) in labelled_scores(100)) {
        let n_pos = labels.iter().filter(|&&y| y).count();
        prop_assume!(n_pos > 0 && n_pos < labels.len());
        let squashed: Vec<f64> = scores.iter().map(|s| (5.0 * s - 2.0).tanh() * 0.4 + 0.5).collect();
        prop_assert_eq!(auc_scores(&labels, &scores).unwrap(), auc_scores(&labels, &squashed).unwrap());
    }

    #[test]
    fn calibration_counts_are_conserved((labels, scores) in labelled_scores(150), n_bins in 2usize..20) {
        let recs: Vec<EvalRecord> = labels.iter().zip(&scores).map(|(&y, &s)| EvalRecord::bare(y, s)).collect();
        let r = calibration(&recs, n_bins).unwrap();
        prop_assert_eq!(r.bins.len(), n_bins);
        prop_assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), recs.len());
        prop_assert!((0.0..=1.0).contains(&r.ece));
    }

    #[test]
    fn calibrated_bins_have_zero_ece(groups in subsequence(vec![0usize, 1, 2, 3, 4], 1..=5), copies in 1usize..6) {
        // A group of 4 records scored k/4 with k positives is perfectly calibrated,
        // and the five groups fall in five different bins.
        let mut recs = Vec::new();
        for &k in &groups {
            for _ in 0..copies {
                for j in 0..4 {
                    recs.push(EvalRecord::bare(j < k, k as f64 / 4.0));
                }
            }
        }
        prop_assert_eq!(calibration(&recs, 10).unwrap().ece, 0.0);
    }

    #[test]
    fn prompt_round_trip(
        steps in prop::collection::vec((kc_name(), any::<bool>()), 0..8),
        target in kc_name(),
    ) {
        let template = PromptTemplate::default();
        let history: Vec<Interaction> = steps
            .iter()
            .enumerate()
            .map(|(t, (name, c))| interaction("s", t as u64, &format!("k{t}"), name, *c))
            .collect();
        let tgt = Target { exercise_id: "e".into(), kc_id: "kt".into(), kc_name: target.clone() };
        let text = format_input(&history, &tgt, RepresentationMode::Description, &template).unwrap();
        let parsed = parse_example(&text, &template).unwrap();
        let expected: Vec<(String, bool)> = steps.iter().map(|(n, c)| (template.sanitize(n), *c)).collect();
        prop_assert_eq!(parsed.pairs, expected);
        prop_assert_eq!(parsed.target, template.sanitize(&target));
        prop_assert!(!text.contains('<'));
    }

    #[test]
    fn vocab_round_trips_in_vocab_text(ds in dataset_strategy()) {
        let template = PromptTemplate::default();
        let examples: Vec<_> = ds
            .histories
            .values()
            .flat_map(|h| format_history(h, RepresentationMode::Description, &template).unwrap())
            .collect();
        prop_assume!(!examples.is_empty());
        let vocab = build_vocab(&examples, &[]).unwrap();
        prop_assert_eq!(vocab.encode("yes").len(), 1);
        prop_assert_eq!(vocab.encode("no").len(), 1);
        prop_assert_ne!(vocab.encode("yes"), vocab.encode("no"));
        for ex in &examples {
            let decoded = vocab.decode(&vocab.encode(&ex.input)).unwrap();
            prop_assert_eq!(tokenize(&decoded), tokenize(&ex.input));
        }
    }

    #[test]
    fn splits_are_disjoint_and_cover(ds in dataset_strategy(), frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let (train, test) = split_holdout(&ds, TestSpec::Fraction(frac), seed).unwrap();
        prop_assert!(train.student_ids().is_disjoint(&test.student_ids()));
        prop_assert_eq!(train.n_learners() + test.n_learners(), ds.n_learners());
        let again = split_holdout(&ds, TestSpec::Fraction(frac), seed).unwrap();
        prop_assert_eq!(again.1.student_ids(), test.student_ids());
    }

    #[test]
    fn filtering_is_idempotent(ds in dataset_strategy(), min in 0usize..10, extra in 0usize..6) {
        let max = min.max(1) + extra;
        let once = filter_and_truncate(&ds, min, max);
        prop_assert_eq!(filter_and_truncate(&once, min, max), once);
    }

    #[test]
    fn stats_are_consistent(ds in dataset_strategy()) {
        let s = dataset_stats(&ds);
        prop_assert_eq!(s.n_interactions, ds.histories.values().map(|h| h.len()).sum::<usize>());
        prop_assert_eq!(s.n_learners, ds.histories.len());
        prop_assert!(s.n_kcs <= ds.kc_table.len());
    }

    #[test]
    fn readout_is_sigmoid_and_monotone(a in -50.0f64..50.0, b in -50.0f64..50.0, d in 1e-3f64..10.0) {
        let p = yes_no_probability(a, b);
        prop_assert!((p - sigmoid_oracle(a - b)).abs() <= 1e-12);
        prop_assert!(yes_no_probability(a + d, b) >= p);
        prop_assert!(yes_no_probability(a, b + d) <= p);
    }

    #[test]
    fn bkt_correct_evidence_raises_mastery(params in bkt_params(), p_l in 0.01f64..0.99) {
        prop_assert!(params.update(p_l, true) > params.update(p_l, false));
        let p = params.p_correct(p_l);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn pfa_and_irt_ignore_presentation_order(ds in dataset_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pfa = pfa_fit(&ds, &PfaConfig::default()).unwrap();
        let irt = irt_fit(&ds, 0.1, &IrtConfig::default()).unwrap();
        for h in ds.histories.values() {
            let mut shuffled = h.interactions.clone();
            shuffled.shuffle(&mut rng);
            for kc in kc_table().keys() {
                prop_assert_eq!(
                    pfa_predict(&pfa, &h.interactions, kc).probability,
                    pfa_predict(&pfa, &shuffled, kc).probability
                );
            }
            let target = h.interactions[0].target();
            prop_assert_eq!(irt.predict(&h.interactions, &target).unwrap(), irt.predict(&shuffled, &target).unwrap());
        }
        // Refit with the students handed over in reverse order.
        let reversed = InteractionDataset::from_histories(ds.histories.values().rev().cloned(), ds.kc_table.clone());
        prop_assert_eq!(pfa_fit(&reversed, &PfaConfig::default()).unwrap(), pfa);
    }

    #[test]
    fn dkt_prefix_predictions_ignore_the_future(seed in any::<u64>(), len in 3usize..15, cut in 1usize..14) {
        prop_assume!(cut < len - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dkt = DktParams::init(kc_table().keys().cloned().collect(), 5, seed);
        let h = random_history("s", len, &mut rng);
        let mut other = h.clone();
        for it in &mut other.interactions[cut + 1..] {
            it.correct = !it.correct;
        }
        other.interactions[cut + 1..].shuffle(&mut rng);
        let a = dkt.predict_sequence(&h).unwrap();
        let b = dkt.predict_sequence(&other).unwrap();
        prop_assert_eq!(&a[..cut], &b[..cut]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn em_log_likelihood_never_decreases(params in bkt_params(), seed in any::<u64>(), n in 20usize..120) {
        let world = BktWorld {
            kcs: vec![SynthKc { id: "k".into(), name: "skill".into(), params, weight: 1.0 }],
            exercises_per_kc: 2,
            prior_logit_sd: 0.0,
        };
        let (ds, _) = synth_generate(&world, n, 12, seed, "").unwrap();
        let fit = bkt_fit_em(&ds, "k", &BktFitConfig::default()).unwrap();
        for w in fit.log_likelihoods.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9, "{} then {}", w[0], w[1]);
        }
        prop_assert!(fit.params.guess < 0.5 && fit.params.slip < 0.5);
    }

    #[test]
    fn tracers_output_probabilities(ds in dataset_strategy()) {
        let bkt = ktlab::baselines::bkt_fit_all(&ds, &BktFitConfig::default()).unwrap();
        let pfa = pfa_fit(&ds, &PfaConfig::default()).unwrap();
        let irt = irt_fit(&ds, 0.1, &IrtConfig::default()).unwrap();
        let dkt = DktParams::init(ds.kc_table.keys().cloned().collect(), 4, 0);
        let tracers: [&dyn Tracer; 4] = [&bkt, &pfa, &irt, &dkt];
        for h in ds.histories.values() {
            for t in tracers {
                let a = t.predict_sequence(h).unwrap();
                prop_assert!(a.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)));
                prop_assert_eq!(&a, &t.predict_sequence(h).unwrap());
            }
        }
    }
}
