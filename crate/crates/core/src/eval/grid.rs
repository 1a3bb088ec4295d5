//! Cold-start and cross-domain protocols.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{auc, calibration, evaluate_tracer};
use super::{EvalError, Result};
use crate::baselines::{bkt_fit_all, dkt_train, irt_fit, pfa_fit, BktFitConfig, DktConfig, IrtConfig, PfaConfig};
use crate::data::{sample_cold_start, InteractionDataset, SplitRole};
use crate::ktlp::{build_vocab, catalog_corpus, format_dataset, PromptTemplate, RepresentationMode, Vocab};
use crate::lm::{lora_attach, load_checkpoint, train_clm, train_lora, LmConfig, LmParams, Proj, TrainConfig};
use crate::tracer::{LmTracer, Tracer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraSpec {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<Proj>,
}

impl Default for LoraSpec {
    fn default() -> Self {
        LoraSpec {
            rank: 4,
            alpha: 8.0,
            targets: vec![Proj::Query, Proj::Value],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LmSpec {
    /// Architecture; the vocabulary size is filled in at fit time.
    #[serde(default)]
    pub config: LmConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Adapter-only tuning when present, full fine-tuning otherwise.
    #[serde(default)]
    pub lora: Option<LoraSpec>,
    /// Starting checkpoint; a fresh random model when absent.
    #[serde(default)]
    pub base: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelKind {
    Lm(LmSpec),
    Bkt(BktFitConfig),
    Irt {
        #[serde(default = "default_irt_lambda")]
        lambda: f64,
        #[serde(default)]
        config: IrtConfig,
    },
    Pfa(PfaConfig),
    Dkt(DktConfig),
}

fn default_irt_lambda() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ModelKind,
    /// Restricts this model to a subset of the grid's sizes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<usize>>,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, kind: ModelKind) -> Self {
        ModelSpec {
            name: name.into(),
            kind,
            sizes: None,
        }
    }

    pub fn is_lm(&self) -> bool {
        matches!(self.kind, ModelKind::Lm(_))
    }
}

/// Everything a model needs besides its training data.
#[derive(Debug, Clone)]
pub struct FitContext {
    pub vocab: Vocab,
    pub mode: RepresentationMode,
    pub template: PromptTemplate,
}

impl FitContext {
    /// Vocabulary built from the catalogs of all given KC tables, never from
    /// student data.
    pub fn from_tables(
        tables: &[&BTreeMap<String, String>],
        mode: RepresentationMode,
        template: PromptTemplate,
    ) -> Result<Self> {
        let mut merged = BTreeMap::new();
        for t in tables {
            for (k, v) in t.iter() {
                merged.entry(k.clone()).or_insert_with(|| v.clone());
            }
        }
        let vocab = build_vocab(&catalog_corpus(&merged, mode, &template)?, &[])?;
        Ok(FitContext { vocab, mode, template })
    }
}

/// Fits or tunes one model on `train`, returning it as a tracer.
pub fn fit_model(spec: &ModelSpec, train: &InteractionDataset, ctx: &FitContext, seed: u64) -> Result<Box<dyn Tracer + Send>> {
    if train.role == SplitRole::Test {
        return Err(EvalError::ProtocolViolation(format!(
            "model `{}` was handed test-split data for fitting",
            spec.name
        )));
    }
    let tracer: Box<dyn Tracer + Send> = match &spec.kind {
        ModelKind::Lm(lm) => Box::new(fit_lm(lm, train, ctx, seed)?.with_name(spec.name.clone())),
        ModelKind::Bkt(c) => Box::new(bkt_fit_all(train, c)?),
        ModelKind::Irt { lambda, config } => Box::new(irt_fit(train, *lambda, config)?),
        ModelKind::Pfa(c) => Box::new(pfa_fit(train, c)?),
        ModelKind::Dkt(c) => Box::new(dkt_train(train, &DktConfig { seed, ..*c })?),
    };
    Ok(tracer)
}

fn fit_lm(spec: &LmSpec, train: &InteractionDataset, ctx: &FitContext, seed: u64) -> Result<LmTracer> {
    let params = match &spec.base {
        Some(path) => load_checkpoint(path, &ctx.vocab.hash())?.params,
        None => LmParams::init(spec.config.with_vocab(ctx.vocab.len()), seed)?,
    };
    let tc = TrainConfig { seed, ..spec.train };
    let examples = if tc.epochs > 0 {
        format_dataset(train, ctx.mode, &ctx.template)?
    } else {
        Vec::new()
    };
    let (params, adapter) = match &spec.lora {
        Some(l) => {
            let (base, adapter) = lora_attach(params, l.rank, l.alpha, &l.targets, seed)?;
            let adapter = if examples.is_empty() {
                adapter
            } else {
                train_lora(&base, adapter, &examples, &ctx.vocab, &tc)?.0
            };
            (base.into_inner(), Some(adapter))
        }
        None if examples.is_empty() => (params, None),
        None => (train_clm(params, &examples, &ctx.vocab, &tc)?.0, None),
    };
    Ok(LmTracer::new(params, adapter, ctx.vocab.clone(), ctx.template.clone(), ctx.mode)?)
}

/// A fixed learner-level split of one dataset.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub name: String,
    pub train: InteractionDataset,
    pub test: InteractionDataset,
}

impl DatasetSplit {
    pub fn new(name: impl Into<String>, train: InteractionDataset, test: InteractionDataset) -> Result<Self> {
        let name = name.into();
        if train.role == SplitRole::Test || test.role != SplitRole::Test {
            return Err(EvalError::ProtocolViolation(format!(
                "split `{name}` needs a non-test train pool and a test-role test set"
            )));
        }
        if train.student_ids().intersection(&test.student_ids()).next().is_some() {
            return Err(EvalError::ProtocolViolation(format!("split `{name}` shares students across train and test")));
        }
        Ok(DatasetSplit { name, train, test })
    }

    fn fingerprint(&self) -> String {
        format!("{}:{}", self.train.fingerprint(), self.test.fingerprint())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub models: Vec<ModelSpec>,
    #[serde(default = "default_sizes")]
    pub sizes: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub mode: RepresentationMode,
    #[serde(default)]
    pub template: PromptTemplate,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
}

pub fn default_sizes() -> Vec<usize> {
    vec![8, 16, 32, 64]
}

pub fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_bins() -> usize {
    10
}

impl ExperimentGrid {
    pub fn new(models: Vec<ModelSpec>) -> Self {
        ExperimentGrid {
            models,
            sizes: default_sizes(),
            seeds: default_seeds(),
            mode: RepresentationMode::default(),
            template: PromptTemplate::default(),
            n_bins: default_bins(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(EvalError::InvalidArgument("grid has no models".into()));
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(EvalError::InvalidArgument("grid sizes must be positive".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() || seeds.is_empty() {
            return Err(EvalError::InvalidArgument("grid seeds must be distinct and non-empty".into()));
        }
        let mut names: Vec<&str> = self.models.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.models.len() {
            return Err(EvalError::InvalidArgument("model names must be distinct".into()));
        }
        for m in &self.models {
            if let Some(s) = &m.sizes {
                if s.iter().any(|x| !self.sizes.contains(x)) {
                    return Err(EvalError::InvalidArgument(format!(
                        "model `{}` lists sizes outside the grid",
                        m.name
                    )));
                }
            }
        }
        Ok(())
    }

    fn sizes_for<'a>(&'a self, m: &'a ModelSpec) -> &'a [usize] {
        m.sizes.as_deref().unwrap_or(&self.sizes)
    }

    fn representation(&self, m: &ModelSpec) -> String {
        if m.is_lm() {
            self.mode.to_string()
        } else {
            "none".into()
        }
    }
}

/// One (dataset, model, size, seed) run. `auc` is `None` when undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dataset: String,
    pub model: String,
    pub representation: String,
    pub n_students: usize,
    pub seed: u64,
    pub auc: Option<f64>,
    pub ece: Option<f64>,
    pub n_records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub model: String,
    pub representation: String,
    pub n_students: usize,
    pub n_valid: usize,
    pub mean_auc: Option<f64>,
    /// Sample standard deviation; `None` with fewer than two valid cells.
    pub std_auc: Option<f64>,
    pub mean_ece: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdStartResults {
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<AggregateRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ColdStartResults {
    pub fn results_csv(&self) -> String {
        let mut s = String::from("dataset,model,representation,n_students,seed,auc\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.dataset,
                c.model,
                c.representation,
                c.n_students,
                c.seed,
                opt(c.auc)
            ));
        }
        s
    }

    pub fn aggregate_csv(&self) -> String {
        let mut s = String::from("dataset,model,representation,n_students,n_valid,mean_auc,std_auc,mean_ece\n");
        for a in &self.aggregates {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                a.dataset,
                a.model,
                a.representation,
                a.n_students,
                a.n_valid,
                opt(a.mean_auc),
                opt(a.std_auc),
                opt(a.mean_ece)
            ));
        }
        s
    }

    pub fn aggregate(&self, dataset: &str, model: &str, n_students: usize) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.dataset == dataset && a.model == model && a.n_students == n_students)
    }

    /// Best versus second-best mean AUC per (dataset, size), as an absolute
    /// gap and as a percentage of the second-best.
    pub fn gains_csv(&self) -> String {
        let mut groups: BTreeMap<(&str, usize), Vec<&AggregateRow>> = BTreeMap::new();
        for a in self.aggregates.iter().filter(|a| a.mean_auc.is_some()) {
            groups.entry((a.dataset.as_str(), a.n_students)).or_default().push(a);
        }
        let mut s = String::from("dataset,n_students,best_model,best_auc,second_model,second_auc,abs_gain,rel_gain_pct\n");
        for ((ds, n), mut rows) in groups {
            if rows.len() < 2 {
                continue;
            }
            rows.sort_by(|a, b| b.mean_auc.unwrap().total_cmp(&a.mean_auc.unwrap()));
            let (b, c) = (rows[0].mean_auc.unwrap(), rows[1].mean_auc.unwrap());
            s.push_str(&format!(
                "{ds},{n},{},{b},{},{c},{},{}\n",
                rows[0].model,
                rows[1].model,
                b - c,
                (b - c) / c * 100.0
            ));
        }
        s
    }
}

pub fn mean_and_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory of cached cell results; cells found there are not re-run.
    pub cache_dir: Option<PathBuf>,
    /// Worker threads for independent cells.
    pub threads: usize,
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

struct CellJob<'a> {
    split: &'a DatasetSplit,
    ctx: &'a FitContext,
    fingerprint: &'a str,
    model: &'a ModelSpec,
    size: usize,
    seed: u64,
}

fn cell_key(grid: &ExperimentGrid, job: &CellJob<'_>) -> Result<String> {
    let mut h = Sha256::new();
    h.update(b"ktlab-cell-v1\0");
    h.update(job.fingerprint.as_bytes());
    h.update(serde_json::to_vec(job.model)?);
    h.update(serde_json::to_vec(&grid.mode)?);
    h.update(serde_json::to_vec(&grid.template)?);
    h.update(grid.n_bins.to_le_bytes());
    h.update((job.size as u64).to_le_bytes());
    h.update(job.seed.to_le_bytes());
    Ok(format!("{:x}", h.finalize()))
}

fn score_cell(
    tracer: &dyn Tracer,
    test: &InteractionDataset,
    n_bins: usize,
) -> Result<(Option<f64>, Option<f64>, usize)> {
    let records = evaluate_tracer(tracer, test)?;
    let a = match auc(&records) {
        Ok(v) => Some(v),
        Err(EvalError::UndefinedAuc { .. }) => None,
        Err(e) => return Err(e),
    };
    let ece = if records.is_empty() {
        None
    } else {
        Some(calibration(&records, n_bins)?.ece)
    };
    Ok((a, ece, records.len()))
}

fn run_cell(grid: &ExperimentGrid, job: &CellJob<'_>) -> Result<CellResult> {
    let sample = sample_cold_start(&job.split.train, job.size, job.seed)?;
    let tracer = fit_model(job.model, &sample, job.ctx, job.seed)?;
    let (auc, ece, n_records) = score_cell(tracer.as_ref(), &job.split.test, grid.n_bins)?;
    if auc.is_none() {
        log::warn!(
            "cell {}/{}/{}/{}: AUC undefined, marked invalid",
            job.split.name,
            job.model.name,
            job.size,
            job.seed
        );
    }
    Ok(CellResult {
        dataset: job.split.name.clone(),
        model: job.model.name.clone(),
        representation: grid.representation(job.model),
        n_students: job.size,
        seed: job.seed,
        auc,
        ece,
        n_records,
    })
}

fn cached_or_run(grid: &ExperimentGrid, job: &CellJob<'_>, cache: Option<&Path>) -> Result<CellResult> {
    let path = match cache {
        Some(dir) => Some(dir.join(format!("{}.json", cell_key(grid, job)?))),
        None => None,
    };
    if let Some(p) = &path {
        if let Ok(bytes) = std::fs::read(p) {
            match serde_json::from_slice::<CellResult>(&bytes) {
                Ok(c) => {
                    log::info!("cell {}/{}/{}/{}: cached", c.dataset, c.model, c.n_students, c.seed);
                    return Ok(c);
                }
                Err(e) => log::warn!("ignoring unreadable cache entry {}: {e}", p.display()),
            }
        }
    }
    let started = std::time::Instant::now();
    let cell = run_cell(grid, job)?;
    log::info!(
        "cell {}/{}/{}/{}: auc {} ({:.1}s)",
        cell.dataset,
        cell.model,
        cell.n_students,
        cell.seed,
        opt(cell.auc),
        started.elapsed().as_secs_f64()
    );
    if let Some(p) = &path {
        write_atomic(p, &serde_json::to_vec_pretty(&cell)?)?;
    }
    Ok(cell)
}

/// Runs every (dataset, model, size, seed) cell: sample a cold-start train
/// set, fit, score every test interaction from its true prefix.
pub fn run_cold_start(grid: &ExperimentGrid, splits: &[DatasetSplit], options: &RunOptions) -> Result<ColdStartResults> {
    grid.validate()?;
    if let Some(dir) = &options.cache_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut contexts = Vec::with_capacity(splits.len());
    for s in splits {
        let ctx = FitContext::from_tables(&[&s.train.kc_table, &s.test.kc_table], grid.mode, grid.template.clone())?;
        contexts.push((ctx, s.fingerprint()));
    }
    let mut jobs = Vec::new();
    for (split, (ctx, fp)) in splits.iter().zip(&contexts) {
        for model in &grid.models {
            for &size in grid.sizes_for(model) {
                for &seed in &grid.seeds {
                    jobs.push(CellJob {
                        split,
                        ctx,
                        fingerprint: fp,
                        model,
                        size,
                        seed,
                    });
                }
            }
        }
    }
    let cache = options.cache_dir.as_deref();
    let threads = options.threads.max(1).min(jobs.len().max(1));
    let cells: Vec<CellResult> = if threads == 1 {
        jobs.iter().map(|j| cached_or_run(grid, j, cache)).collect::<Result<_>>()?
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<CellResult>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= jobs.len() {
                        break;
                    }
                    let r = cached_or_run(grid, &jobs[i], cache);
                    slots.lock().expect("result lock poisoned")[i] = Some(r);
                });
            }
        });
        slots
            .into_inner()
            .expect("result lock poisoned")
            .into_iter()
            .map(|r| r.expect("every job ran"))
            .collect::<Result<_>>()?
    };
    let mut aggregates = Vec::new();
    for split in splits {
        for model in &grid.models {
            for &size in grid.sizes_for(model) {
                let group: Vec<&CellResult> = cells
                    .iter()
                    .filter(|c| c.dataset == split.name && c.model == model.name && c.n_students == size)
                    .collect();
                let aucs: Vec<f64> = group.iter().filter_map(|c| c.auc).collect();
                let eces: Vec<f64> = group.iter().filter_map(|c| c.ece).collect();
                let (mean_auc, std_auc) = mean_and_std(&aucs);
                aggregates.push(AggregateRow {
                    dataset: split.name.clone(),
                    model: model.name.clone(),
                    representation: grid.representation(model),
                    n_students: size,
                    n_valid: aucs.len(),
                    mean_auc,
                    std_auc,
                    mean_ece: mean_and_std(&eces).0,
                });
            }
        }
    }
    Ok(ColdStartResults { cells, aggregates })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainSettings {
    #[serde(default)]
    pub mode: RepresentationMode,
    #[serde(default)]
    pub template: PromptTemplate,
    /// Cold-start sample size from the source pool; the whole pool if absent.
    #[serde(default)]
    pub n_students: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
}

impl Default for CrossDomainSettings {
    fn default() -> Self {
        CrossDomainSettings {
            mode: RepresentationMode::default(),
            template: PromptTemplate::default(),
            n_students: None,
            seed: 0,
            n_bins: default_bins(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainReport {
    pub source: String,
    pub target: String,
    pub model: String,
    pub representation: String,
    pub n_students: usize,
    pub seed: u64,
    pub auc: Option<f64>,
    pub ece: Option<f64>,
    pub n_records: usize,
}

impl CrossDomainReport {
    pub fn to_csv(&self) -> String {
        format!(
            "source,target,model,representation,n_students,seed,auc,ece,n_records\n{},{},{},{},{},{},{},{},{}\n",
            self.source,
            self.target,
            self.model,
            self.representation,
            self.n_students,
            self.seed,
            opt(self.auc),
            opt(self.ece),
            self.n_records
        )
    }
}

/// Fits on the source pool and scores the target test split. The vocabulary
/// covers both domains' catalogs, so with `source == target` the result is
/// identical to the in-domain cold-start cell with the same size and seed.
pub fn run_cross_domain(
    source: &DatasetSplit,
    target: &DatasetSplit,
    spec: &ModelSpec,
    settings: &CrossDomainSettings,
) -> Result<CrossDomainReport> {
    if settings.mode == RepresentationMode::Id && spec.is_lm() {
        let shared = source.train.kc_table.keys().any(|k| target.test.kc_table.contains_key(k));
        if !shared {
            return Err(EvalError::Unsupported(format!(
                "id representation cannot transfer from `{}` to `{}`: no KC ids in common",
                source.name, target.name
            )));
        }
    }
    let ctx = FitContext::from_tables(
        &[
            &source.train.kc_table,
            &source.test.kc_table,
            &target.train.kc_table,
            &target.test.kc_table,
        ],
        settings.mode,
        settings.template.clone(),
    )?;
    let n = settings.n_students.unwrap_or(source.train.n_learners());
    let sample = sample_cold_start(&source.train, n, settings.seed)?;
    let tracer = fit_model(spec, &sample, &ctx, settings.seed)?;
    let (auc, ece, n_records) = score_cell(tracer.as_ref(), &target.test, settings.n_bins)?;
    Ok(CrossDomainReport {
        source: source.name.clone(),
        target: target.name.clone(),
        model: spec.name.clone(),
        representation: if spec.is_lm() {
            settings.mode.to_string()
        } else {
            "none".into()
        },
        n_students: n,
        seed: settings.seed,
        auc,
        ece,
        n_records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        let (m, s) = mean_and_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, Some(2.5));
        assert!((s.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_and_std(&[0.7]), (Some(0.7), None));
        assert_eq!(mean_and_std(&[]), (None, None));
    }

    #[test]
    fn model_spec_json() {
        let spec = ModelSpec::new("bkt", ModelKind::Bkt(BktFitConfig::default()));
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"kind\":\"bkt\""));
        assert_eq!(serde_json::from_str::<ModelSpec>(&json).unwrap(), spec);
        let lm: ModelSpec = serde_json::from_str(r#"{"name":"clst","kind":"lm","lora":{"rank":2,"alpha":4.0,"targets":["query"]}}"#).unwrap();
        assert!(lm.is_lm());
    }

    #[test]
    fn grid_validation() {
        let mut g = ExperimentGrid::new(vec![ModelSpec::new("pfa", ModelKind::Pfa(PfaConfig::default()))]);
        assert!(g.validate().is_ok());
        g.seeds = vec![1, 1];
        assert!(g.validate().is_err());
        g.seeds = vec![1];
        g.sizes = vec![0];
        assert!(g.validate().is_err());
    }
}
