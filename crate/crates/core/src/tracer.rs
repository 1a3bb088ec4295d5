//! The interface every knowledge tracer implements, and the language-model
//! tracer that scores KTLP prompts.

use thiserror::Error;

use crate::data::{Interaction, StudentHistory, Target};
use crate::ktlp::{format_input, KtlpError, PromptTemplate, RepresentationMode, Vocab};
use crate::lm::{self, left_truncate, LmError, LmParams, LoraAdapter, PackedSequence, PrefixTrie};

#[derive(Error, Debug)]
pub enum TracerError {
    #[error("unknown KC `{0}`")]
    UnknownKc(String),
    #[error(transparent)]
    Format(#[from] KtlpError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("{0}")]
    Model(String),
}

/// `f(X_{1:t}, e_{t+1})`: the probability that the next exercise is solved.
///
/// Implementations are read-only: predicting never changes the tracer.
pub trait Tracer {
    fn name(&self) -> &str;

    fn predict(&self, history: &[Interaction], target: &Target) -> Result<f64, TracerError>;

    /// Scores interactions `1..n` of a history, each from its true
    /// preceding prefix.
    fn predict_sequence(&self, history: &StudentHistory) -> Result<Vec<f64>, TracerError> {
        let its = &history.interactions;
        (1..its.len()).map(|t| self.predict(&its[..t], &its[t].target())).collect()
    }

    /// Whether the tracer has any information about the target's KC.
    fn can_score(&self, _target: &Target) -> bool {
        true
    }
}

/// A language model (optionally with an adapter) wrapped with the prompt
/// formatter and the yes/no readout.
#[derive(Debug, Clone)]
pub struct LmTracer {
    pub params: LmParams,
    pub adapter: Option<LoraAdapter>,
    pub vocab: Vocab,
    pub template: PromptTemplate,
    pub mode: RepresentationMode,
    name: String,
    yes_id: u32,
    no_id: u32,
}

impl LmTracer {
    pub fn new(
        params: LmParams,
        adapter: Option<LoraAdapter>,
        vocab: Vocab,
        template: PromptTemplate,
        mode: RepresentationMode,
    ) -> Result<Self, TracerError> {
        template.validate()?;
        let (yes_id, no_id) = lm::answer_ids(&vocab)?;
        if params.config.vocab_size != vocab.len() {
            return Err(TracerError::Model(format!(
                "model vocabulary size {} differs from tokenizer size {}",
                params.config.vocab_size,
                vocab.len()
            )));
        }
        Ok(LmTracer {
            params,
            adapter,
            vocab,
            template,
            mode,
            name: "lm".into(),
            yes_id,
            no_id,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    fn prompt_ids(&self, history: &[Interaction], target: &Target) -> Result<Vec<u32>, TracerError> {
        let text = format_input(history, target, self.mode, &self.template)?;
        let mut ids = vec![Vocab::BOS_ID];
        ids.extend(self.vocab.encode(&text));
        Ok(ids)
    }

    fn score(&self, seq: &PackedSequence, rows: &[usize]) -> Result<Vec<f64>, TracerError> {
        Ok(lm::yes_no_logits(&self.params, self.adapter.as_ref(), seq, rows, self.yes_id, self.no_id)?
            .into_iter()
            .map(|(y, n)| lm::yes_no_probability(y, n))
            .collect())
    }
}

impl Tracer for LmTracer {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, history: &[Interaction], target: &Target) -> Result<f64, TracerError> {
        let ids = left_truncate(&self.prompt_ids(history, target)?, self.params.config.context_len);
        let last = ids.len() - 1;
        Ok(self.score(&PackedSequence::causal(ids), &[last])?[0])
    }

    /// All prompts of one student share a prefix trie, so the whole history
    /// is scored in one pass. Prompts longer than the context are scored on
    /// their own after left truncation.
    fn predict_sequence(&self, history: &StudentHistory) -> Result<Vec<f64>, TracerError> {
        let its = &history.interactions;
        let n = its.len().saturating_sub(1);
        let mut out = vec![f64::NAN; n];
        let mut trie = PrefixTrie::new();
        let mut rows = Vec::new();
        let mut slots = Vec::new();
        let c = self.params.config.context_len;
        for t in 1..its.len() {
            let ids = self.prompt_ids(&its[..t], &its[t].target())?;
            if ids.len() > c {
                out[t - 1] = self.predict(&its[..t], &its[t].target())?;
            } else {
                rows.push(*trie.insert(&ids).last().unwrap());
                slots.push(t - 1);
            }
        }
        if !rows.is_empty() {
            let scores = self.score(&trie.finish(), &rows)?;
            for (slot, s) in slots.into_iter().zip(scores) {
                out[slot] = s;
            }
        }
        Ok(out)
    }
}
