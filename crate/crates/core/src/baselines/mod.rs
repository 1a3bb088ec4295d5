//! Classical knowledge tracers: BKT, 1PL IRT, PFA and a single-layer LSTM
//! DKT. All of them implement [`Tracer`](crate::Tracer).

pub mod bkt;
pub mod dkt;
pub mod irt;
pub mod pfa;

pub use bkt::{bkt_fit_all, bkt_fit_em, bkt_predict_and_update, BktFit, BktFitConfig, BktModel, BktParams};
pub use dkt::{dkt_predict, dkt_train, load_dkt, one_hot_input, save_dkt, DktConfig, DktParams, DKT_FORMAT};
pub use irt::{irt_fit, irt_predict, IrtConfig, IrtParams};
pub use pfa::{pfa_features, pfa_fit, pfa_predict, PfaConfig, PfaKcParams, PfaParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{InteractionDataset, SplitRole};

#[derive(Error, Debug)]
pub enum BaselineError {
    #[error("parameter `{name}` = {value} outside [0, 1]")]
    Parameter { name: &'static str, value: f64 },
    #[error("no interactions for KC `{0}`")]
    MissingKc(String),
    #[error("unknown KC `{0}`")]
    UnknownKc(String),
    #[error("no training data")]
    NoData,
    #[error("optimization diverged: {0}")]
    Divergence(String),
    #[error("refusing to fit on a held-out test split")]
    TestDataInFit,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BaselineError>;

/// A probability plus whether it came from an unseen-entity fallback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub probability: f64,
    pub fallback: bool,
}

pub(crate) fn ensure_trainable(ds: &InteractionDataset) -> Result<()> {
    if ds.role == SplitRole::Test {
        return Err(BaselineError::TestDataInFit);
    }
    Ok(())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
