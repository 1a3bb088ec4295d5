//! Causal-LM fine-tuning with the loss restricted to answer tokens.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lora::{FrozenBase, LoraAdapter};
use super::model::loss_and_grads;
use super::pack::{encode_example, left_truncate, PackedSequence, PrefixTrie};
use super::{LmError, LmParams, Result};
use crate::ktlp::{KtlpExample, Vocab};
use crate::optim::{AdamW, AdamWConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Packed sequences (one per student, or one per over-long example)
    /// per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 4,
            seed: 0,
            optimizer: AdamWConfig {
                learning_rate: 3e-3,
                ..Default::default()
            },
        }
    }
}

/// Per-epoch mean loss over answer tokens.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub epochs: Vec<f64>,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss\n");
        for (i, l) in self.epochs.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i + 1, l));
        }
        s
    }

    pub fn last(&self) -> Option<f64> {
        self.epochs.last().copied()
    }
}

/// A packed sequence and the `(row, token)` pairs scored on it.
#[derive(Debug, Clone)]
pub struct TrainingPack {
    pub seq: PackedSequence,
    pub targets: Vec<(usize, u32)>,
}

fn push_example(trie: &mut PrefixTrie, ids: &[u32], n_out: usize, targets: &mut Vec<(usize, u32)>) {
    let nodes = trie.insert(&ids[..ids.len() - 1]);
    for k in ids.len() - n_out..ids.len() {
        targets.push((nodes[k - 1], ids[k]));
    }
}

/// Groups examples by student and packs each group into one prefix-shared
/// sequence. Examples longer than the context are left-truncated and packed
/// on their own.
pub fn prepare_packs(examples: &[KtlpExample], vocab: &Vocab, context_len: usize) -> Vec<TrainingPack> {
    let mut groups: BTreeMap<&str, Vec<&KtlpExample>> = BTreeMap::new();
    for ex in examples {
        groups.entry(ex.student_id.as_str()).or_default().push(ex);
    }
    let mut packs = Vec::new();
    for (_, mut exs) in groups {
        exs.sort_by_key(|e| e.step);
        let mut trie = PrefixTrie::new();
        let mut targets = Vec::new();
        for ex in exs {
            let (ids, n_out) = encode_example(ex, vocab);
            if n_out == 0 {
                log::warn!("example for student `{}` step {} has an empty output; skipped", ex.student_id, ex.step);
                continue;
            }
            if ids.len() - 1 > context_len {
                let ids = left_truncate(&ids, context_len + 1);
                let n_out = n_out.min(ids.len() - 1);
                let mut own = PrefixTrie::new();
                let mut own_targets = Vec::new();
                push_example(&mut own, &ids, n_out, &mut own_targets);
                packs.push(TrainingPack {
                    seq: own.finish(),
                    targets: own_targets,
                });
            } else {
                push_example(&mut trie, &ids, n_out, &mut targets);
            }
        }
        if !targets.is_empty() {
            packs.push(TrainingPack {
                seq: trie.finish(),
                targets,
            });
        }
    }
    packs
}

trait Trainable {
    fn grads(&self, pack: &TrainingPack) -> Result<(f64, Vec<Vec<f64>>)>;
    fn shapes(&self) -> Vec<usize>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;
}

struct Full(LmParams);

impl Trainable for Full {
    fn grads(&self, pack: &TrainingPack) -> Result<(f64, Vec<Vec<f64>>)> {
        let (loss, g) = loss_and_grads(&self.0, None, &pack.seq, &pack.targets, true, false)?;
        let g = g.base.expect("base gradients requested");
        Ok((loss, g.slices().into_iter().map(<[f64]>::to_vec).collect()))
    }
    fn shapes(&self) -> Vec<usize> {
        self.0.slices().iter().map(|s| s.len()).collect()
    }
    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.0.slices_mut()
    }
}

struct Adapted<'a> {
    base: &'a LmParams,
    adapter: LoraAdapter,
}

impl Trainable for Adapted<'_> {
    fn grads(&self, pack: &TrainingPack) -> Result<(f64, Vec<Vec<f64>>)> {
        let (loss, g) = loss_and_grads(self.base, Some(&self.adapter), &pack.seq, &pack.targets, false, true)?;
        let g = g.adapter.expect("adapter gradients requested");
        Ok((loss, g.slices().into_iter().map(<[f64]>::to_vec).collect()))
    }
    fn shapes(&self) -> Vec<usize> {
        self.adapter.slices().iter().map(|s| s.len()).collect()
    }
    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.adapter.slices_mut()
    }
}

fn run<T: Trainable>(model: &mut T, packs: &[TrainingPack], config: &TrainConfig) -> Result<LossCurve> {
    if config.batch_size == 0 {
        return Err(LmError::Config("batch_size must be positive".into()));
    }
    let shapes = model.shapes();
    let mut opt = AdamW::new(config.optimizer, &shapes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..packs.len()).collect();
    let mut curve = LossCurve::default();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_n = 0usize;
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            let mut acc: Vec<Vec<f64>> = shapes.iter().map(|&n| vec![0.0; n]).collect();
            let mut loss = 0.0;
            let mut n = 0usize;
            for &pi in batch {
                let (l, g) = model.grads(&packs[pi])?;
                loss += l;
                n += packs[pi].targets.len();
                for (a, gi) in acc.iter_mut().zip(&g) {
                    for (x, y) in a.iter_mut().zip(gi) {
                        *x += y;
                    }
                }
            }
            if !loss.is_finite() {
                return Err(LmError::Divergence { epoch, batch: bi + 1 });
            }
            let inv = 1.0 / n.max(1) as f64;
            for a in &mut acc {
                for x in a.iter_mut() {
                    *x *= inv;
                }
            }
            let views: Vec<&[f64]> = acc.iter().map(Vec::as_slice).collect();
            opt.step(model.slices_mut(), &views);
            epoch_loss += loss;
            epoch_n += n;
        }
        let mean = epoch_loss / epoch_n.max(1) as f64;
        log::debug!("epoch {epoch}: mean loss {mean:.5}");
        curve.epochs.push(mean);
    }
    Ok(curve)
}

fn packs_for(examples: &[KtlpExample], vocab: &Vocab, context_len: usize) -> Result<Vec<TrainingPack>> {
    if examples.is_empty() {
        return Err(LmError::NoExamples);
    }
    let packs = prepare_packs(examples, vocab, context_len);
    if packs.is_empty() {
        return Err(LmError::NoExamples);
    }
    Ok(packs)
}

/// Full-parameter fine-tuning.
pub fn train_clm(
    params: LmParams,
    examples: &[KtlpExample],
    vocab: &Vocab,
    config: &TrainConfig,
) -> Result<(LmParams, LossCurve)> {
    let packs = packs_for(examples, vocab, params.config.context_len)?;
    let mut model = Full(params);
    let curve = run(&mut model, &packs, config)?;
    Ok((model.0, curve))
}

/// Adapter-only fine-tuning; the base is read but never written.
pub fn train_lora(
    base: &FrozenBase,
    adapter: LoraAdapter,
    examples: &[KtlpExample],
    vocab: &Vocab,
    config: &TrainConfig,
) -> Result<(LoraAdapter, LossCurve)> {
    let packs = packs_for(examples, vocab, base.params().config.context_len)?;
    let mut model = Adapted {
        base: base.params(),
        adapter,
    };
    let curve = run(&mut model, &packs, config)?;
    Ok((model.adapter, curve))
}

/// Mean cross-entropy per answer token.
pub fn evaluate_loss(
    params: &LmParams,
    adapter: Option<&LoraAdapter>,
    examples: &[KtlpExample],
    vocab: &Vocab,
) -> Result<f64> {
    let packs = packs_for(examples, vocab, params.config.context_len)?;
    let mut total = 0.0;
    let mut n = 0;
    for p in &packs {
        let (l, _) = loss_and_grads(params, adapter, &p.seq, &p.targets, false, false)?;
        total += l;
        n += p.targets.len();
    }
    Ok(total / n as f64)
}
