mod common;

use std::collections::BTreeMap;

use ktlab::baselines::{BktFitConfig, IrtConfig, PfaConfig};
use ktlab::data::{split_holdout, TestSpec};
use ktlab::eval::{
    auc, evaluate_tracer, fit_model, run_cold_start, run_cross_domain, synth_generate, BktWorld, CellResult,
    CrossDomainSettings, DatasetSplit, EvalError, ExperimentGrid, FitContext, ModelKind, ModelSpec, OracleTracer,
    RunOptions,
};
use ktlab::ktlp::{PromptTemplate, RepresentationMode};

fn split(n_students: usize, n_test: usize, steps: usize, seed: u64, prefix: &str) -> (DatasetSplit, OracleTracer) {
    let world = BktWorld::standard();
    let (ds, truth) = synth_generate(&world, n_students, steps, seed, prefix).unwrap();
    let (train, test) = split_holdout(&ds, TestSpec::Count(n_test), seed).unwrap();
    (
        DatasetSplit::new(format!("world{seed}"), train, test).unwrap(),
        OracleTracer::new(world, truth),
    )
}

fn two_model_grid() -> ExperimentGrid {
    ExperimentGrid::new(vec![
        ModelSpec::new("bkt", ModelKind::Bkt(BktFitConfig::default())),
        ModelSpec::new("pfa", ModelKind::Pfa(PfaConfig::default())),
    ])
}

#[test]
fn grid_counts_and_aggregates() {
    let (s, _) = split(160, 60, 10, 1, "");
    let results = run_cold_start(&two_model_grid(), &[s], &RunOptions::default()).unwrap();
    assert_eq!(results.cells.len(), 40);
    assert_eq!(results.aggregates.len(), 8);
    for a in &results.aggregates {
        let aucs: Vec<f64> = results
            .cells
            .iter()
            .filter(|c| c.model == a.model && c.n_students == a.n_students)
            .filter_map(|c| c.auc)
            .collect();
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        assert_eq!(a.n_valid, aucs.len());
        assert!((a.mean_auc.unwrap() - mean).abs() < 1e-15);
        assert_eq!(a.representation, "none");
    }
    let csv = results.aggregate_csv();
    assert!(csv.starts_with("dataset,model,representation,n_students,n_valid,mean_auc,std_auc,mean_ece\n"));
    assert_eq!(csv.lines().count(), 9);
    assert_eq!(results.results_csv().lines().count(), 41);
    let gains = results.gains_csv();
    assert_eq!(gains.lines().count(), 5);
}

#[test]
fn cached_cells_are_reused_and_threads_agree() {
    let (s, _) = split(120, 40, 8, 2, "");
    let mut grid = two_model_grid();
    grid.sizes = vec![8, 16];
    grid.seeds = vec![0, 1];
    let dir = tempfile::tempdir().unwrap();
    let cached = RunOptions {
        cache_dir: Some(dir.path().to_path_buf()),
        threads: 1,
    };
    let first = run_cold_start(&grid, std::slice::from_ref(&s), &cached).unwrap();
    let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(entries.len(), 8);

    // Tamper with one entry: a resumed run must read it instead of recomputing.
    let victim = &entries[0];
    let mut cell: CellResult = serde_json::from_slice(&std::fs::read(victim).unwrap()).unwrap();
    cell.auc = Some(0.123);
    std::fs::write(victim, serde_json::to_vec(&cell).unwrap()).unwrap();
    let resumed = run_cold_start(&grid, std::slice::from_ref(&s), &cached).unwrap();
    assert!(resumed.cells.iter().any(|c| c.auc == Some(0.123)));

    let threaded = run_cold_start(
        &grid,
        std::slice::from_ref(&s),
        &RunOptions {
            cache_dir: None,
            threads: 2,
        },
    )
    .unwrap();
    assert_eq!(threaded, first);
}

#[test]
fn id_mode_cannot_cross_disjoint_catalogs() {
    let (a, _) = split(60, 20, 6, 3, "a");
    let (b, _) = split(60, 20, 6, 4, "b");
    let rename = |ds: &ktlab::InteractionDataset| {
        let histories = ds.histories.values().cloned().map(|mut h| {
            for it in &mut h.interactions {
                it.kc_id = format!("z{}", it.kc_id);
            }
            h
        });
        let mut out = ktlab::InteractionDataset::from_histories(histories, BTreeMap::new());
        out.role = ds.role;
        out
    };
    let b = DatasetSplit::new("b", rename(&b.train), rename(&b.test)).unwrap();
    let lm = ModelSpec::new("lm", ModelKind::Lm(Default::default()));
    let settings = CrossDomainSettings {
        mode: RepresentationMode::Id,
        n_students: Some(8),
        ..Default::default()
    };
    assert!(matches!(run_cross_domain(&a, &b, &lm, &settings), Err(EvalError::Unsupported(_))));
}

#[test]
fn cross_domain_identity_matches_grid_cell() {
    let (s, _) = split(120, 50, 8, 5, "");
    let mut grid = two_model_grid();
    grid.sizes = vec![32];
    grid.seeds = vec![3];
    let results = run_cold_start(&grid, std::slice::from_ref(&s), &RunOptions::default()).unwrap();
    for spec in &grid.models {
        let report = run_cross_domain(
            &s,
            &s,
            spec,
            &CrossDomainSettings {
                n_students: Some(32),
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let cell = results.cells.iter().find(|c| c.model == spec.name).unwrap();
        assert_eq!(report.auc, cell.auc);
        assert_eq!(report.ece, cell.ece);
        assert_eq!(report.n_records, cell.n_records);
    }
}

#[test]
fn test_split_never_reaches_a_fit() {
    let (s, _) = split(40, 10, 5, 6, "");
    let ctx = FitContext::from_tables(&[&s.train.kc_table], RepresentationMode::Description, PromptTemplate::default())
        .unwrap();
    let spec = ModelSpec::new("bkt", ModelKind::Bkt(BktFitConfig::default()));
    assert!(matches!(fit_model(&spec, &s.test, &ctx, 0), Err(EvalError::ProtocolViolation(_))));
    // Swapped roles and shared students are rejected when building a split.
    assert!(DatasetSplit::new("x", s.test.clone(), s.train.clone()).is_err());
    let mut overlapping = s.train.clone();
    let (id, h) = s.test.histories.iter().next().unwrap();
    overlapping.histories.insert(id.clone(), h.clone());
    assert!(DatasetSplit::new("x", overlapping, s.test.clone()).is_err());
}

/// Hanley-McNeil standard error of an AUC estimate.
fn auc_se(a: f64, n_pos: f64, n_neg: f64) -> f64 {
    let q1 = a / (2.0 - a);
    let q2 = 2.0 * a * a / (1.0 + a);
    ((a * (1.0 - a) + (n_pos - 1.0) * (q1 - a * a) + (n_neg - 1.0) * (q2 - a * a)) / (n_pos * n_neg)).sqrt()
}

#[test]
fn oracle_dominates_fitted_models() {
    let (s, oracle) = split(900, 500, 15, 7, "");
    let records = evaluate_tracer(&oracle, &s.test).unwrap();
    let n_pos = records.iter().filter(|r| r.y_true).count() as f64;
    let n_neg = records.len() as f64 - n_pos;
    let oracle_auc = auc(&records).unwrap();
    let ctx = FitContext::from_tables(&[&s.train.kc_table], RepresentationMode::Description, PromptTemplate::default())
        .unwrap();
    let specs = [
        ModelSpec::new("bkt", ModelKind::Bkt(BktFitConfig::default())),
        ModelSpec::new("pfa", ModelKind::Pfa(PfaConfig::default())),
        ModelSpec::new(
            "irt",
            ModelKind::Irt {
                lambda: 0.1,
                config: IrtConfig::default(),
            },
        ),
    ];
    for spec in &specs {
        let tracer = fit_model(spec, &s.train, &ctx, 0).unwrap();
        let a = auc(&evaluate_tracer(tracer.as_ref(), &s.test).unwrap()).unwrap();
        let sigma = auc_se(a, n_pos, n_neg);
        assert!(oracle_auc >= a - 3.0 * sigma, "{}: {a} vs oracle {oracle_auc} (sigma {sigma})", spec.name);
    }
}
