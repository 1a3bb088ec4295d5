use std::fmt;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ktlab::baselines::{bkt_fit_all, dkt_train, irt_fit, pfa_fit, save_dkt, DktConfig};
use ktlab::data::{
    dataset_stats, filter_and_truncate, load_interactions, split_holdout, write_canonical, ColumnMap,
    InteractionDataset,
};
use ktlab::eval::{
    auc, calibration, evaluate_tracer, extract_trajectory, run_cold_start, run_cross_domain, synth_generate,
    BktWorld, CrossDomainSettings, DatasetSplit, EvalRecord, ExperimentGrid, RunOptions,
};
use ktlab::ktlp::{build_vocab, format_dataset, read_jsonl, write_jsonl, KtlpExample, PromptTemplate, RepresentationMode};
use ktlab::lm::{load_checkpoint, lora_attach, save_checkpoint, train_clm, train_lora, Checkpoint, LmParams, TrainConfig};
use serde::Serialize;

use crate::config::{DatasetConfig, RunConfig};
use crate::models::{load_model, read_vocab, Baseline, BaselineFile};
use crate::output::OutputDir;
use crate::{
    BaselineArgs, BaselineKind, CalibrateArgs, Cli, Command, CrossArgs, DataArg, FinetuneArgs, FormatArgs,
    IngestArgs, ModelDataArgs, PromptArgs, ScheduleArgs, SynthArgs, TrainLmArgs, TrajectoryArgs,
};

/// Marks an error as caused by the user's inputs rather than by a failed
/// computation.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

trait InputContext<T> {
    fn input(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> InputContext<T> for std::result::Result<T, E> {
    fn input(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| {
            let e: anyhow::Error = e.into();
            anyhow::Error::new(InputError(format!("{}: {e:#}", what())))
        })
    }
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|c| c.is::<InputError>()) {
        2
    } else {
        3
    }
}

struct Ctx {
    config: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn from_cli(cli: &Cli) -> Result<Self> {
        let mut config = match &cli.config {
            Some(p) => RunConfig::load(p).input(|| "invalid config".into())?,
            None => RunConfig::default(),
        };
        if let Some(seed) = cli.seed {
            config.seed = seed;
        }
        if let Some(t) = cli.threads {
            config.threads = t;
        }
        config.validate().input(|| "invalid config".into())?;
        let out = cli
            .out
            .clone()
            .or_else(|| config.out.clone())
            .unwrap_or_else(|| PathBuf::from("ktlab-out"));
        Ok(Ctx { config, out })
    }

    fn output(&self) -> Result<OutputDir> {
        OutputDir::acquire(&self.out)
    }

    fn prompt(&self, args: &PromptArgs) -> Result<(RepresentationMode, PromptTemplate)> {
        let mode = args.mode.map(Into::into).unwrap_or(self.config.mode);
        let template = match &args.template {
            Some(p) => {
                let text = std::fs::read_to_string(p).input(|| format!("reading template {}", p.display()))?;
                let t: PromptTemplate =
                    serde_json::from_str(&text).input(|| format!("parsing template {}", p.display()))?;
                t.validate().input(|| format!("template {}", p.display()))?;
                t
            }
            None => self.config.template.clone(),
        };
        Ok((mode, template))
    }

    fn schedule(&self, args: &ScheduleArgs) -> TrainConfig {
        let mut tc = TrainConfig {
            seed: self.config.seed,
            ..self.config.lm.train
        };
        if let Some(e) = args.epochs {
            tc.epochs = e;
        }
        if let Some(lr) = args.lr {
            tc.optimizer.learning_rate = lr;
        }
        if let Some(b) = args.batch_size {
            tc.batch_size = b;
        }
        tc
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx::from_cli(&cli)?;
    match &cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Stats(a) => stats(a),
        Command::Format(a) => format(&ctx, a),
        Command::TrainLm(a) => train_lm(&ctx, a),
        Command::FinetuneLora(a) => finetune_lora(&ctx, a),
        Command::TrainBaseline(a) => train_baseline(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Coldstart => coldstart(&ctx),
        Command::Crossdomain(a) => crossdomain(&ctx, a),
        Command::Calibrate(a) => calibrate(&ctx, a),
        Command::Trajectory(a) => trajectory(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
    }
}

fn read_dataset(path: &Path) -> Result<InteractionDataset> {
    load_interactions(path, &ColumnMap::default()).input(|| format!("loading {}", path.display()))
}

fn canonical_bytes(ds: &InteractionDataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_canonical(ds, &mut buf)?;
    Ok(buf)
}

fn ingest(ctx: &Ctx, a: &IngestArgs) -> Result<()> {
    let schema = ColumnMap {
        student_id: a.student_col.clone(),
        step: a.step_col.clone(),
        exercise_id: a.exercise_col.clone(),
        kc_id: a.kc_col.clone(),
        kc_name: a.kc_name_col.clone(),
        correct: a.correct_col.clone(),
    };
    if a.max_interactions.is_some_and(|m| m < a.min_interactions.max(1)) {
        bail!(InputError("--max-interactions is below --min-interactions".into()));
    }
    let raw = load_interactions(&a.input, &schema).input(|| format!("ingesting {}", a.input.display()))?;
    let ds = filter_and_truncate(&raw, a.min_interactions, a.max_interactions.unwrap_or(usize::MAX));
    let out = ctx.output()?;
    out.write("dataset.csv", &canonical_bytes(&ds)?)?;
    out.write_json("stats.json", &dataset_stats(&ds))?;
    Ok(())
}

fn stats(a: &DataArg) -> Result<()> {
    let ds = read_dataset(&a.data)?;
    println!("{}", serde_json::to_string_pretty(&dataset_stats(&ds))?);
    Ok(())
}

fn format(ctx: &Ctx, a: &FormatArgs) -> Result<()> {
    let (mode, template) = ctx.prompt(&a.prompt)?;
    let ds = read_dataset(&a.data)?;
    let examples = format_dataset(&ds, mode, &template).input(|| "formatting".into())?;
    let mut buf = Vec::new();
    write_jsonl(&examples, &mut buf)?;
    ctx.output()?.write("ktlp.jsonl", &buf)?;
    Ok(())
}

fn read_examples(path: &Path) -> Result<Vec<KtlpExample>> {
    let f = std::fs::File::open(path).input(|| format!("opening {}", path.display()))?;
    let examples = read_jsonl(BufReader::new(f)).input(|| format!("reading {}", path.display()))?;
    if examples.is_empty() {
        return Err(anyhow!(InputError(format!("{} holds no examples", path.display()))));
    }
    Ok(examples)
}

fn train_lm(ctx: &Ctx, a: &TrainLmArgs) -> Result<()> {
    let examples = read_examples(&a.examples)?;
    let vocab = match &a.vocab {
        Some(p) => read_vocab(p).input(|| "vocabulary".into())?,
        None => build_vocab(&examples, &[]).input(|| "building vocabulary".into())?,
    };
    let spec = &ctx.config.lm;
    let params = match &spec.base {
        Some(p) => load_checkpoint(p, &vocab.hash()).input(|| format!("base checkpoint {}", p.display()))?.params,
        None => LmParams::init(spec.config.with_vocab(vocab.len()), ctx.config.seed).input(|| "LM config".into())?,
    };
    let tc = ctx.schedule(&a.schedule);
    let (params, curve) = train_clm(params, &examples, &vocab, &tc).context("training")?;
    let out = ctx.output()?;
    let ckpt = Checkpoint::new(params, vocab.hash(), None);
    save_checkpoint(&ckpt, out.path("lm.json.tmp"))?;
    std::fs::rename(out.path("lm.json.tmp"), out.path("lm.json"))?;
    out.write("vocab.json", vocab.to_json()?.as_bytes())?;
    out.write("loss.csv", curve.to_csv().as_bytes())?;
    log::info!("final loss {}", curve.last().unwrap_or(f64::NAN));
    Ok(())
}

fn finetune_lora(ctx: &Ctx, a: &FinetuneArgs) -> Result<()> {
    let vocab = read_vocab(&a.vocab).input(|| "vocabulary".into())?;
    let base = load_checkpoint(&a.base, &vocab.hash()).input(|| format!("base checkpoint {}", a.base.display()))?;
    let examples = read_examples(&a.examples)?;
    let lora = &ctx.config.lora;
    let rank = a.rank.unwrap_or(lora.rank);
    let alpha = a.alpha.unwrap_or(lora.alpha);
    let (frozen, adapter) =
        lora_attach(base.params, rank, alpha, &lora.targets, ctx.config.seed).input(|| "LoRA config".into())?;
    let tc = ctx.schedule(&a.schedule);
    let (adapter, curve) = train_lora(&frozen, adapter, &examples, &vocab, &tc).context("tuning")?;
    let out = ctx.output()?;
    let ckpt = Checkpoint::new(frozen.into_inner(), vocab.hash(), Some(adapter));
    save_checkpoint(&ckpt, out.path("lora.json.tmp"))?;
    std::fs::rename(out.path("lora.json.tmp"), out.path("lora.json"))?;
    out.write("loss.csv", curve.to_csv().as_bytes())?;
    Ok(())
}

fn train_baseline(ctx: &Ctx, a: &BaselineArgs) -> Result<()> {
    let ds = read_dataset(&a.data)?;
    let b = &ctx.config.baselines;
    let out = ctx.output()?;
    let model = match a.kind {
        BaselineKind::Bkt => Baseline::Bkt(bkt_fit_all(&ds, &b.bkt)?),
        BaselineKind::Irt => Baseline::Irt(irt_fit(&ds, b.irt_lambda, &b.irt)?),
        BaselineKind::Pfa => Baseline::Pfa(pfa_fit(&ds, &b.pfa)?),
        BaselineKind::Dkt => {
            let params = dkt_train(
                &ds,
                &DktConfig {
                    seed: ctx.config.seed,
                    ..b.dkt
                },
            )?;
            save_dkt(&params, out.path("dkt.json.tmp"))?;
            std::fs::rename(out.path("dkt.json.tmp"), out.path("dkt.json"))?;
            return Ok(());
        }
    };
    let name = format!("{}.json", format!("{:?}", a.kind).to_lowercase());
    out.write_json(&name, &BaselineFile::new(model))?;
    Ok(())
}

#[derive(Serialize)]
struct Metrics {
    model: String,
    n_records: usize,
    auc: Option<f64>,
    ece: Option<f64>,
    n_bins: usize,
}

fn score(ctx: &Ctx, model: &Path, vocab: Option<&Path>, data: &Path, prompt: &PromptArgs) -> Result<(String, Vec<EvalRecord>)> {
    let (mode, template) = ctx.prompt(prompt)?;
    let loaded = load_model(model, vocab, mode, &template).map_err(|e| anyhow!(InputError(format!("{e:#}"))))?;
    let ds = read_dataset(data)?;
    let records = evaluate_tracer(loaded.tracer(), &ds)?;
    Ok((loaded.tracer().name().to_string(), records))
}

fn records_csv(records: &[EvalRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    Ok(w.into_inner()?)
}

fn evaluate(ctx: &Ctx, a: &ModelDataArgs) -> Result<()> {
    let (model, records) = score(ctx, &a.model, a.vocab.as_deref(), &a.data, &a.prompt)?;
    let metrics = Metrics {
        model,
        n_records: records.len(),
        auc: auc(&records).ok(),
        ece: calibration(&records, a.bins).ok().map(|c| c.ece),
        n_bins: a.bins,
    };
    let out = ctx.output()?;
    out.write("records.csv", &records_csv(&records)?)?;
    out.write_json("metrics.json", &metrics)?;
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(())
}

fn calibrate(ctx: &Ctx, a: &CalibrateArgs) -> Result<()> {
    let records: Vec<EvalRecord> = match (&a.records, &a.model, &a.data) {
        (Some(p), _, _) => csv::Reader::from_path(p)
            .and_then(|mut r| r.deserialize().collect::<std::result::Result<_, _>>())
            .input(|| format!("reading records {}", p.display()))?,
        (None, Some(m), Some(d)) => score(ctx, m, a.vocab.as_deref(), d, &a.prompt)?.1,
        _ => bail!(InputError("calibrate needs --records or --model with --data".into())),
    };
    let report = calibration(&records, a.bins).input(|| "calibration".into())?;
    ctx.output()?.write("calibration.csv", report.to_csv().as_bytes())?;
    println!("ece {}", report.ece);
    Ok(())
}

fn trajectory(ctx: &Ctx, a: &TrajectoryArgs) -> Result<()> {
    let (mode, template) = ctx.prompt(&a.prompt)?;
    let loaded = load_model(&a.model, a.vocab.as_deref(), mode, &template)
        .map_err(|e| anyhow!(InputError(format!("{e:#}"))))?;
    let ds = read_dataset(&a.data)?;
    let history = ds
        .histories
        .get(&a.student)
        .ok_or_else(|| anyhow!(InputError(format!("student `{}` is not in {}", a.student, a.data.display()))))?;
    let kcs: Vec<String> = if a.kcs.is_empty() {
        ds.kc_table.keys().cloned().collect()
    } else {
        a.kcs.clone()
    };
    let m = extract_trajectory(loaded.tracer(), history, &kcs, &ds.kc_table)?;
    let out = ctx.output()?;
    out.write("trajectory.csv", m.to_csv().as_bytes())?;
    out.write("trajectory_deltas.csv", m.deltas_csv().as_bytes())?;
    Ok(())
}

fn load_split(ctx: &Ctx, d: &DatasetConfig) -> Result<DatasetSplit> {
    let raw = load_interactions(&d.path, &d.schema).input(|| format!("dataset `{}`", d.name))?;
    let ds = filter_and_truncate(&raw, d.min_interactions, d.max_interactions);
    let (train, test) =
        split_holdout(&ds, d.test, d.split_seed.unwrap_or(ctx.config.seed)).input(|| format!("splitting `{}`", d.name))?;
    Ok(DatasetSplit::new(d.name.clone(), train, test)?)
}

/// Writes a split's two halves next to the reports so any cell can be
/// re-scored with `evaluate`.
fn write_split(out: &OutputDir, split: &DatasetSplit) -> Result<()> {
    out.write(&format!("{}_train.csv", split.name), &canonical_bytes(&split.train)?)?;
    out.write(&format!("{}_test.csv", split.name), &canonical_bytes(&split.test)?)?;
    Ok(())
}

fn coldstart(ctx: &Ctx) -> Result<()> {
    let c = &ctx.config;
    if c.datasets.is_empty() {
        bail!(InputError("coldstart needs at least one dataset in the config".into()));
    }
    let splits = c.datasets.iter().map(|d| load_split(ctx, d)).collect::<Result<Vec<_>>>()?;
    let grid = ExperimentGrid {
        models: c.models_or_default(),
        sizes: c.grid.sizes.clone(),
        seeds: c.grid.seeds.clone(),
        mode: c.mode,
        template: c.template.clone(),
        n_bins: c.grid.n_bins,
    };
    grid.validate().input(|| "grid".into())?;
    let out = ctx.output()?;
    for s in &splits {
        write_split(&out, s)?;
    }
    let options = RunOptions {
        cache_dir: Some(out.path("cache")),
        threads: c.threads.max(1),
    };
    let results = run_cold_start(&grid, &splits, &options)?;
    out.write("coldstart_results.csv", results.results_csv().as_bytes())?;
    out.write("coldstart_aggregate.csv", results.aggregate_csv().as_bytes())?;
    out.write("coldstart_gains.csv", results.gains_csv().as_bytes())?;
    Ok(())
}

fn crossdomain(ctx: &Ctx, a: &CrossArgs) -> Result<()> {
    let c = &ctx.config;
    let pick = |flag: &Option<String>, from_cfg: Option<&String>, what: &str| -> Result<String> {
        flag.clone()
            .or_else(|| from_cfg.cloned())
            .ok_or_else(|| anyhow!(InputError(format!("crossdomain needs a {what}"))))
    };
    let cd = c.crossdomain.as_ref();
    let source = pick(&a.source, cd.map(|x| &x.source), "source dataset")?;
    let target = pick(&a.target, cd.map(|x| &x.target), "target dataset")?;
    let model = pick(&a.model, cd.map(|x| &x.model), "model")?;
    let spec = c
        .models_or_default()
        .into_iter()
        .find(|m| m.name == model)
        .ok_or_else(|| anyhow!(InputError(format!("no model named `{model}`"))))?;
    let src = load_split(ctx, c.dataset(&source).input(|| "source".into())?)?;
    let tgt = if target == source {
        src.clone()
    } else {
        load_split(ctx, c.dataset(&target).input(|| "target".into())?)?
    };
    let settings = CrossDomainSettings {
        mode: c.mode,
        template: c.template.clone(),
        n_students: a.n_students.or(cd.and_then(|x| x.n_students)),
        seed: c.seed,
        n_bins: c.grid.n_bins,
    };
    let report = run_cross_domain(&src, &tgt, &spec, &settings)?;
    let out = ctx.output()?;
    write_split(&out, &src)?;
    if target != source {
        write_split(&out, &tgt)?;
    }
    out.write("crossdomain.csv", report.to_csv().as_bytes())?;
    Ok(())
}

fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    let world = match &a.world {
        Some(p) => {
            let text = std::fs::read_to_string(p).input(|| format!("reading world {}", p.display()))?;
            serde_json::from_str(&text).input(|| format!("parsing world {}", p.display()))?
        }
        None => BktWorld::standard(),
    };
    let (ds, truth) =
        synth_generate(&world, a.students, a.steps, ctx.config.seed, &a.prefix).input(|| "synthetic world".into())?;
    let out = ctx.output()?;
    out.write("dataset.csv", &canonical_bytes(&ds)?)?;
    out.write_json("world.json", &world)?;
    out.write_json("ground_truth.json", &truth)?;
    Ok(())
}
