//! Knowledge tracing framed as language processing.
//!
//! Student histories become natural-language prompts ([`ktlp`]), a small
//! causal transformer ([`lm`]) learns to answer them, and its answer-word
//! logits become correctness probabilities. Classical tracers
//! ([`baselines`]) and the evaluation protocols ([`eval`]) share the
//! [`Tracer`] interface.

pub mod baselines;
pub mod data;
pub mod eval;
pub mod ktlp;
pub mod lm;
pub mod optim;
pub mod tracer;

pub use data::{Interaction, InteractionDataset, StudentHistory, Target};
pub use tracer::{LmTracer, Tracer, TracerError};
