#![allow(dead_code)]

use std::collections::BTreeMap;

use ktlab::baselines::DktParams;
use ktlab::data::{Interaction, StudentHistory};
use ktlab::ktlp::{build_vocab, catalog_corpus, PromptTemplate, RepresentationMode, Vocab};
use ktlab::lm::{loss_and_grads, LmConfig, LmParams, LoraAdapter, PackedSequence, PrefixTrie};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;

/// Relative error with an absolute floor for numerically-zero entries.
/// Returns `(max relative error over significant entries, all entries ok)`.
pub fn compare_grads(analytic: &[f64], numeric: &[f64]) -> (f64, bool) {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for (a, n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs());
        if scale < 1e-7 {
            ok &= (a - n).abs() <= 1e-9;
        } else {
            let rel = (a - n).abs() / scale;
            worst = worst.max(rel);
            ok &= rel < REL_TOL;
        }
    }
    (worst, ok)
}

/// Plain oracle: loops over every positive-negative pair.
pub fn brute_force_auc(labels: &[bool], scores: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        if !yi {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / pairs
}

pub fn sigmoid_oracle(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn kc_table() -> BTreeMap<String, String> {
    [
        ("k1", "fractions"),
        ("k2", "decimals"),
        ("k3", "ratios"),
    ]
    .iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect()
}

pub fn small_vocab() -> Vocab {
    build_vocab(
        &catalog_corpus(&kc_table(), RepresentationMode::Description, &PromptTemplate::default()).unwrap(),
        &[],
    )
    .unwrap()
}

pub fn interaction(student: &str, step: u64, kc: &str, name: &str, correct: bool) -> Interaction {
    Interaction {
        student_id: student.into(),
        step,
        exercise_id: format!("{kc}-e{}", step % 3),
        kc_id: kc.into(),
        kc_name: name.into(),
        correct,
    }
}

pub fn random_history(student: &str, len: usize, rng: &mut impl Rng) -> StudentHistory {
    let table: Vec<(String, String)> = kc_table().into_iter().collect();
    StudentHistory {
        student_id: student.into(),
        interactions: (0..len)
            .map(|t| {
                let (k, n) = &table[rng.gen_range(0..table.len())];
                interaction(student, t as u64, k, n, rng.gen())
            })
            .collect(),
    }
}

pub fn random_small_config(rng: &mut impl Rng, vocab_size: usize) -> LmConfig {
    let n_heads = rng.gen_range(1..=2);
    LmConfig {
        n_layers: rng.gen_range(1..=2),
        n_heads,
        embed_dim: n_heads * rng.gen_range(2..=4),
        mlp_dim: rng.gen_range(4..=12),
        context_len: 24,
        vocab_size,
    }
}

/// Random LM weights on a larger scale than the default init, so every
/// gradient path carries signal.
pub fn random_params(config: LmConfig, seed: u64) -> LmParams {
    let mut p = LmParams::init(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    for s in p.slices_mut() {
        for v in s.iter_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    p
}

/// Two prompts sharing a prefix, packed in a trie, with targets on a few
/// rows of each branch.
pub fn random_packed(rng: &mut impl Rng, vocab_size: usize) -> (PackedSequence, Vec<(usize, u32)>) {
    let shared: Vec<u32> = (0..5).map(|_| rng.gen_range(0..vocab_size as u32)).collect();
    let mut a = shared.clone();
    a.extend((0..4).map(|_| rng.gen_range(0..vocab_size as u32)));
    let mut b = shared;
    b.extend((0..3).map(|_| rng.gen_range(0..vocab_size as u32)));
    let mut trie = PrefixTrie::new();
    let na = trie.insert(&a);
    let nb = trie.insert(&b);
    let targets = vec![
        (na[3], rng.gen_range(0..vocab_size as u32)),
        (na[7], rng.gen_range(0..vocab_size as u32)),
        (nb[6], rng.gen_range(0..vocab_size as u32)),
        (nb[7], rng.gen_range(0..vocab_size as u32)),
    ];
    (trie.finish(), targets)
}

/// Fourth-order central difference. The plain two-point stencil's
/// truncation error alone reaches 1e-4 relative on small embedding
/// gradients, which would make the oracle, not the code, the weak link.
fn central_difference(mut f: impl FnMut(f64) -> f64) -> f64 {
    let h = FD_STEP;
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

/// Full-parameter gradient check over every parameter.
pub fn lm_full_grad_check(params: &LmParams, seq: &PackedSequence, targets: &[(usize, u32)]) -> (f64, bool) {
    let (_, grads) = loss_and_grads(params, None, seq, targets, true, false).unwrap();
    let g = grads.base.unwrap();
    let analytic: Vec<f64> = g.slices().into_iter().flatten().copied().collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut p = params.clone();
    let n_groups = p.slices().len();
    for gi in 0..n_groups {
        let len = p.slices()[gi].len();
        for i in 0..len {
            let orig = p.slices()[gi][i];
            numeric.push(central_difference(|h| {
                p.slices_mut()[gi][i] = orig + h;
                let l = loss_and_grads(&p, None, seq, targets, false, false).unwrap().0;
                p.slices_mut()[gi][i] = orig;
                l
            }));
        }
    }
    compare_grads(&analytic, &numeric)
}

/// Adapter-only gradient check; also asserts no base gradient is produced.
pub fn lm_lora_grad_check(
    params: &LmParams,
    adapter: &LoraAdapter,
    seq: &PackedSequence,
    targets: &[(usize, u32)],
) -> (f64, bool) {
    let (_, grads) = loss_and_grads(params, Some(adapter), seq, targets, false, true).unwrap();
    assert!(grads.base.is_none());
    let g = grads.adapter.unwrap();
    let analytic: Vec<f64> = g.slices().into_iter().flatten().copied().collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut a = adapter.clone();
    let n_groups = a.slices().len();
    for gi in 0..n_groups {
        let len = a.slices()[gi].len();
        for i in 0..len {
            let orig = a.slices()[gi][i];
            numeric.push(central_difference(|h| {
                a.slices_mut()[gi][i] = orig + h;
                let l = loss_and_grads(params, Some(&a), seq, targets, false, false).unwrap().0;
                a.slices_mut()[gi][i] = orig;
                l
            }));
        }
    }
    compare_grads(&analytic, &numeric)
}

pub fn dkt_grad_check(params: &DktParams, seqs: &[Vec<(usize, bool)>]) -> (f64, bool) {
    let (_, _, g) = params.loss_and_grads(seqs);
    let analytic: Vec<f64> = g.slices().into_iter().flatten().copied().collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut p = params.clone();
    let n_groups = p.slices().len();
    for gi in 0..n_groups {
        let len = p.slices()[gi].len();
        for i in 0..len {
            let orig = p.slices()[gi][i];
            numeric.push(central_difference(|h| {
                p.slices_mut()[gi][i] = orig + h;
                let l = p.loss_and_grads(seqs).0;
                p.slices_mut()[gi][i] = orig;
                l
            }));
        }
    }
    compare_grads(&analytic, &numeric)
}

pub fn random_dkt(rng: &mut impl Rng, seed: u64) -> (DktParams, Vec<Vec<(usize, bool)>>) {
    let k = rng.gen_range(2..=4);
    let hidden = rng.gen_range(2..=5);
    let kcs: Vec<String> = (0..k).map(|i| format!("k{i}")).collect();
    let mut p = DktParams::init(kcs, hidden, seed);
    for s in p.slices_mut() {
        for v in s.iter_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
    }
    let seqs = (0..3)
        .map(|_| {
            let n = rng.gen_range(2..=7);
            (0..n).map(|_| (rng.gen_range(0..k), rng.gen())).collect()
        })
        .collect();
    (p, seqs)
}
