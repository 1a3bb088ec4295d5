//! Model files written by the training commands and read back by the
//! evaluation commands.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use ktlab::baselines::{load_dkt, BktModel, DktParams, IrtParams, PfaParams, DKT_FORMAT};
use ktlab::ktlp::{PromptTemplate, RepresentationMode, Vocab};
use ktlab::lm::{load_checkpoint, CHECKPOINT_FORMAT};
use ktlab::{LmTracer, Tracer};
use serde::{Deserialize, Serialize};

pub const BASELINE_FORMAT: &str = "ktlab-baseline";

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum Baseline {
    Bkt(BktModel),
    Irt(IrtParams),
    Pfa(PfaParams),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BaselineFile {
    pub format: String,
    #[serde(flatten)]
    pub model: Baseline,
}

impl BaselineFile {
    pub fn new(model: Baseline) -> Self {
        BaselineFile {
            format: BASELINE_FORMAT.into(),
            model,
        }
    }
}

pub enum LoadedModel {
    Lm(Box<LmTracer>),
    Baseline(Baseline),
    Dkt(DktParams),
}

impl LoadedModel {
    pub fn tracer(&self) -> &dyn Tracer {
        match self {
            LoadedModel::Lm(t) => t.as_ref(),
            LoadedModel::Baseline(Baseline::Bkt(m)) => m,
            LoadedModel::Baseline(Baseline::Irt(m)) => m,
            LoadedModel::Baseline(Baseline::Pfa(m)) => m,
            LoadedModel::Dkt(m) => m,
        }
    }
}

#[derive(Deserialize)]
struct Header {
    format: String,
}

pub fn read_vocab(path: &Path) -> Result<Vocab> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading vocabulary {}", path.display()))?;
    Ok(Vocab::from_json(&text)?)
}

/// Opens any model file, telling the kinds apart by their `format` field.
/// LM checkpoints also need their vocabulary.
pub fn load_model(
    path: &Path,
    vocab: Option<&Path>,
    mode: RepresentationMode,
    template: &PromptTemplate,
) -> Result<LoadedModel> {
    let bytes = std::fs::read(path).with_context(|| format!("reading model {}", path.display()))?;
    let header: Header =
        serde_json::from_slice(&bytes).with_context(|| format!("{} is not a model file", path.display()))?;
    match header.format.as_str() {
        CHECKPOINT_FORMAT => {
            let vocab_path = vocab.ok_or_else(|| anyhow!("LM checkpoints need --vocab"))?;
            let vocab = read_vocab(vocab_path)?;
            let ckpt = load_checkpoint(path, &vocab.hash())?;
            let tracer = LmTracer::new(ckpt.params, ckpt.adapter, vocab, template.clone(), mode)?;
            Ok(LoadedModel::Lm(Box::new(tracer)))
        }
        BASELINE_FORMAT => {
            let file: BaselineFile = serde_json::from_slice(&bytes)?;
            Ok(LoadedModel::Baseline(file.model))
        }
        DKT_FORMAT => Ok(LoadedModel::Dkt(load_dkt(path).map_err(|e| anyhow!("{e}"))?)),
        other => bail!("{}: unknown model format `{other}`", path.display()),
    }
}
