//! A small causal transformer trained to answer yes/no correctness
//! questions, with optional low-rank adapters.
//!
//! Tensors are `f64` throughout so analytic gradients can be checked
//! against finite differences at tight tolerances.

mod checkpoint;
mod lora;
mod model;
mod pack;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use lora::{lora_attach, lora_merge, FrozenBase, LoraAdapter, LoraTarget};
pub use model::{
    answer_ids, forward, forward_packed, loss_and_grads, next_token_distribution, predict_correctness, sample_token,
    yes_no_logits, yes_no_probability, Grads,
};
pub use pack::{encode_example, left_truncate, Mask, PackedSequence, PrefixTrie};
pub use train::{evaluate_loss, prepare_packs, train_clm, train_lora, LossCurve, TrainConfig, TrainingPack};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum LmError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds context length {context_len}")]
    SequenceTooLong { len: usize, context_len: usize },
    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    InvalidToken { id: u32, vocab_size: usize },
    #[error("answer word `{0}` is not a single token in the vocabulary")]
    MissingAnswerWord(String),
    #[error("LoRA rank {rank} invalid for target with dimensions {d_out}x{d_in}")]
    Rank { rank: usize, d_out: usize, d_in: usize },
    #[error("adapter does not fit the base model: {0}")]
    Merge(String),
    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("no training examples")]
    NoExamples,
    #[error("checkpoint vocabulary hash {found} does not match expected {expected}")]
    VocabMismatch { expected: String, found: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LmError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub embed_dim: usize,
    pub mlp_dim: usize,
    pub context_len: usize,
    pub vocab_size: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            n_layers: 2,
            n_heads: 4,
            embed_dim: 128,
            mlp_dim: 512,
            context_len: 512,
            vocab_size: 0,
        }
    }
}

impl LmConfig {
    pub fn with_vocab(mut self, vocab_size: usize) -> Self {
        self.vocab_size = vocab_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("embed_dim", self.embed_dim),
            ("mlp_dim", self.mlp_dim),
            ("context_len", self.context_len),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(LmError::Config(format!("{name} must be positive")));
            }
        }
        if self.embed_dim % self.n_heads != 0 {
            return Err(LmError::Config(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }
}

/// Linear maps inside a transformer block that an adapter may target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proj {
    Query,
    Key,
    Value,
    Output,
    MlpIn,
    MlpOut,
}

impl std::str::FromStr for Proj {
    type Err = LmError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "query" | "q" => Proj::Query,
            "key" | "k" => Proj::Key,
            "value" | "v" => Proj::Value,
            "output" | "o" => Proj::Output,
            "mlp_in" => Proj::MlpIn,
            "mlp_out" => Proj::MlpOut,
            other => return Err(LmError::Config(format!("unknown projection `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl LayerParams {
    /// Weight matrix (`d_out x d_in`) and bias for a projection.
    pub fn proj(&self, p: Proj) -> (&Array2<f64>, &Array1<f64>) {
        match p {
            Proj::Query => (&self.wq, &self.bq),
            Proj::Key => (&self.wk, &self.bk),
            Proj::Value => (&self.wv, &self.bv),
            Proj::Output => (&self.wo, &self.bo),
            Proj::MlpIn => (&self.w1, &self.b1),
            Proj::MlpOut => (&self.w2, &self.b2),
        }
    }

    pub fn proj_weight_mut(&mut self, p: Proj) -> &mut Array2<f64> {
        match p {
            Proj::Query => &mut self.wq,
            Proj::Key => &mut self.wk,
            Proj::Value => &mut self.wv,
            Proj::Output => &mut self.wo,
            Proj::MlpIn => &mut self.w1,
            Proj::MlpOut => &mut self.w2,
        }
    }

    fn zeros(d: usize, m: usize) -> Self {
        LayerParams {
            ln1_g: Array1::zeros(d),
            ln1_b: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            bq: Array1::zeros(d),
            wk: Array2::zeros((d, d)),
            bk: Array1::zeros(d),
            wv: Array2::zeros((d, d)),
            bv: Array1::zeros(d),
            wo: Array2::zeros((d, d)),
            bo: Array1::zeros(d),
            ln2_g: Array1::zeros(d),
            ln2_b: Array1::zeros(d),
            w1: Array2::zeros((m, d)),
            b1: Array1::zeros(m),
            w2: Array2::zeros((d, m)),
            b2: Array1::zeros(d),
        }
    }
}

/// Dense transformer parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmParams {
    pub config: LmConfig,
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    pub w_out: Array2<f64>,
}

const INIT_STD: f64 = 0.02;

impl LmParams {
    pub fn zeros(config: LmConfig) -> Self {
        let (d, m, v, c) = (config.embed_dim, config.mlp_dim, config.vocab_size, config.context_len);
        LmParams {
            config,
            tok_emb: Array2::zeros((v, d)),
            pos_emb: Array2::zeros((c, d)),
            layers: (0..config.n_layers).map(|_| LayerParams::zeros(d, m)).collect(),
            lnf_g: Array1::zeros(d),
            lnf_b: Array1::zeros(d),
            w_out: Array2::zeros((v, d)),
        }
    }

    /// Seeded initialization: weights uniform with standard deviation 0.02,
    /// biases zero, layer-norm gains one.
    pub fn init(config: LmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half_width = INIT_STD * 3f64.sqrt();
        let mut fill = |a: &mut [f64]| {
            for x in a {
                *x = rng.gen_range(-half_width..half_width);
            }
        };
        fill(p.tok_emb.as_slice_mut().unwrap());
        fill(p.pos_emb.as_slice_mut().unwrap());
        for l in &mut p.layers {
            for w in [&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo, &mut l.w1, &mut l.w2] {
                fill(w.as_slice_mut().unwrap());
            }
            l.ln1_g.fill(1.0);
            l.ln2_g.fill(1.0);
        }
        p.lnf_g.fill(1.0);
        fill(p.w_out.as_slice_mut().unwrap());
        Ok(p)
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.tok_emb.as_slice().unwrap(), self.pos_emb.as_slice().unwrap()];
        for l in &self.layers {
            out.extend([
                l.ln1_g.as_slice().unwrap(),
                l.ln1_b.as_slice().unwrap(),
                l.wq.as_slice().unwrap(),
                l.bq.as_slice().unwrap(),
                l.wk.as_slice().unwrap(),
                l.bk.as_slice().unwrap(),
                l.wv.as_slice().unwrap(),
                l.bv.as_slice().unwrap(),
                l.wo.as_slice().unwrap(),
                l.bo.as_slice().unwrap(),
                l.ln2_g.as_slice().unwrap(),
                l.ln2_b.as_slice().unwrap(),
                l.w1.as_slice().unwrap(),
                l.b1.as_slice().unwrap(),
                l.w2.as_slice().unwrap(),
                l.b2.as_slice().unwrap(),
            ]);
        }
        out.extend([
            self.lnf_g.as_slice().unwrap(),
            self.lnf_b.as_slice().unwrap(),
            self.w_out.as_slice().unwrap(),
        ]);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.tok_emb.as_slice_mut().unwrap(),
            self.pos_emb.as_slice_mut().unwrap(),
        ];
        for l in &mut self.layers {
            out.extend([
                l.ln1_g.as_slice_mut().unwrap(),
                l.ln1_b.as_slice_mut().unwrap(),
                l.wq.as_slice_mut().unwrap(),
                l.bq.as_slice_mut().unwrap(),
                l.wk.as_slice_mut().unwrap(),
                l.bk.as_slice_mut().unwrap(),
                l.wv.as_slice_mut().unwrap(),
                l.bv.as_slice_mut().unwrap(),
                l.wo.as_slice_mut().unwrap(),
                l.bo.as_slice_mut().unwrap(),
                l.ln2_g.as_slice_mut().unwrap(),
                l.ln2_b.as_slice_mut().unwrap(),
                l.w1.as_slice_mut().unwrap(),
                l.b1.as_slice_mut().unwrap(),
                l.w2.as_slice_mut().unwrap(),
                l.b2.as_slice_mut().unwrap(),
            ]);
        }
        out.extend([
            self.lnf_g.as_slice_mut().unwrap(),
            self.lnf_b.as_slice_mut().unwrap(),
            self.w_out.as_slice_mut().unwrap(),
        ]);
        out
    }

    pub fn n_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// SHA-256 over the raw bits of every parameter, in a fixed order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for s in self.slices() {
            for x in s {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }
}
