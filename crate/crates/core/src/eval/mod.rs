//! Metrics, experiment protocols, trajectory probing and synthetic worlds.

pub mod grid;
pub mod metrics;
pub mod synth;
pub mod trajectory;

pub use grid::{
    fit_model, run_cold_start, run_cross_domain, write_atomic, AggregateRow, CellResult, ColdStartResults,
    CrossDomainReport, CrossDomainSettings, DatasetSplit, ExperimentGrid, FitContext, LmSpec, LoraSpec, ModelKind,
    ModelSpec, RunOptions,
};
pub use metrics::{auc, auc_scores, calibration, evaluate_tracer, spearman, CalibrationBin, CalibrationReport, EvalRecord};
pub use synth::{synth_generate, synth_irt, BktWorld, GroundTruth, OracleTracer, SynthKc};
pub use trajectory::{extract_trajectory, probe_target, TrajectoryMatrix, TrajectoryStep};

use thiserror::Error;

use crate::baselines::BaselineError;
use crate::data::DataError;
use crate::ktlp::KtlpError;
use crate::lm::LmError;
use crate::tracer::TracerError;

#[derive(Error, Debug)]
pub enum EvalError {
    #[error("AUC undefined with {n_pos} positive and {n_neg} negative labels")]
    UndefinedAuc { n_pos: usize, n_neg: usize },
    #[error("score {0} is not a probability")]
    NonFinite(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Format(#[from] KtlpError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Tracer(#[from] TracerError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;
