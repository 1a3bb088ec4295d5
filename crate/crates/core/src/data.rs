//! Interaction data model, CSV ingestion, filtering and learner-level splits.
//!
//! Every dataset is keyed by student id in a `BTreeMap` so iteration order,
//! and therefore every seeded operation built on top of it, is deterministic.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum DataError {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("row {row}: exercise `{exercise_id}` maps to more than one KC ({first}, {second}); multi-KC exercises are not supported")]
    MultiKc {
        row: usize,
        exercise_id: String,
        first: String,
        second: String,
    },
    #[error("row {row}: KC `{kc_id}` has conflicting names `{first}` and `{second}`")]
    KcNameConflict {
        row: usize,
        kc_id: String,
        first: String,
        second: String,
    },
    #[error("student `{student_id}` has duplicate step {step}")]
    DuplicateStep { student_id: String, step: u64 },
    #[error("dataset is empty")]
    Empty,
    #[error("infeasible {what}: requested {requested} learners but only {available} available")]
    Infeasible {
        what: &'static str,
        requested: usize,
        available: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One graded attempt by a student.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub student_id: String,
    pub step: u64,
    pub exercise_id: String,
    pub kc_id: String,
    pub kc_name: String,
    pub correct: bool,
}

impl Interaction {
    /// The exercise part of the interaction, without its outcome.
    pub fn target(&self) -> Target {
        Target {
            exercise_id: self.exercise_id.clone(),
            kc_id: self.kc_id.clone(),
            kc_name: self.kc_name.clone(),
        }
    }
}

/// An exercise to be predicted: an interaction without its correctness.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Target {
    pub exercise_id: String,
    pub kc_id: String,
    pub kc_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentHistory {
    pub student_id: String,
    pub interactions: Vec<Interaction>,
}

impl StudentHistory {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }
}

/// Where a dataset came from relative to the learner-level split.
///
/// Fitting code asserts it never receives a `Test` dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    #[default]
    Source,
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct InteractionDataset {
    pub histories: BTreeMap<String, StudentHistory>,
    pub kc_table: BTreeMap<String, String>,
    pub exercise_set: BTreeSet<String>,
    #[serde(default)]
    pub role: SplitRole,
}

impl InteractionDataset {
    /// Builds a dataset from already-ordered histories, re-indexing steps
    /// to `0..n` and collecting the KC table and exercise set.
    pub fn from_histories(
        histories: impl IntoIterator<Item = StudentHistory>,
        kc_table: BTreeMap<String, String>,
    ) -> Self {
        let mut ds = InteractionDataset {
            kc_table,
            ..Default::default()
        };
        for mut h in histories {
            for (i, it) in h.interactions.iter_mut().enumerate() {
                it.step = i as u64;
                ds.exercise_set.insert(it.exercise_id.clone());
                ds.kc_table
                    .entry(it.kc_id.clone())
                    .or_insert_with(|| it.kc_name.clone());
            }
            ds.histories.insert(h.student_id.clone(), h);
        }
        ds
    }

    pub fn n_learners(&self) -> usize {
        self.histories.len()
    }

    pub fn n_interactions(&self) -> usize {
        self.histories.values().map(|h| h.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.histories.is_empty()
    }

    pub fn student_ids(&self) -> BTreeSet<&str> {
        self.histories.keys().map(String::as_str).collect()
    }

    /// Keeps only the listed students; the KC table is carried over unchanged.
    fn restrict(&self, keep: &BTreeSet<String>, role: SplitRole) -> Self {
        let histories: BTreeMap<_, _> = self
            .histories
            .iter()
            .filter(|(id, _)| keep.contains(*id))
            .map(|(id, h)| (id.clone(), h.clone()))
            .collect();
        let exercise_set = histories
            .values()
            .flat_map(|h| h.interactions.iter().map(|i| i.exercise_id.clone()))
            .collect();
        InteractionDataset {
            histories,
            kc_table: self.kc_table.clone(),
            exercise_set,
            role,
        }
    }

    /// Content hash over the canonical CSV form plus the KC table.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::new();
        write_canonical(self, &mut buf).expect("writing to a Vec cannot fail");
        let mut hasher = Sha256::new();
        hasher.update(&buf);
        for (k, v) in &self.kc_table {
            hasher.update(k.as_bytes());
            hasher.update([0]);
            hasher.update(v.as_bytes());
            hasher.update([0]);
        }
        format!("{:x}", hasher.finalize())
    }
}

/// Names of the CSV columns feeding each interaction field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub student_id: String,
    pub step: String,
    pub exercise_id: String,
    pub kc_id: String,
    pub kc_name: String,
    pub correct: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            student_id: "student_id".into(),
            step: "step".into(),
            exercise_id: "exercise_id".into(),
            kc_id: "kc_id".into(),
            kc_name: "kc_name".into(),
            correct: "correct".into(),
        }
    }
}

pub fn load_interactions(path: impl AsRef<Path>, schema: &ColumnMap) -> Result<InteractionDataset> {
    let mut buf = String::new();
    File::open(path.as_ref())?.read_to_string(&mut buf)?;
    read_interactions(buf.as_bytes(), schema)
}

/// Parses interaction CSV from any reader. Row numbers in errors are
/// 1-based over data rows (the header is not counted).
pub fn read_interactions<R: Read>(reader: R, schema: &ColumnMap) -> Result<InteractionDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let required = |name: &str| col(name).ok_or_else(|| DataError::MissingColumn(name.to_string()));

    let c_student = required(&schema.student_id)?;
    let c_exercise = required(&schema.exercise_id)?;
    let c_kc = required(&schema.kc_id)?;
    let c_correct = required(&schema.correct)?;
    let c_name = col(&schema.kc_name);
    let c_step = col(&schema.step);

    let mut per_student: BTreeMap<String, Vec<(u64, Interaction)>> = BTreeMap::new();
    let mut kc_table: BTreeMap<String, String> = BTreeMap::new();
    let mut exercise_kc: BTreeMap<String, String> = BTreeMap::new();
    let mut n_rows = 0usize;

    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record?;
        n_rows += 1;
        let field = |c: usize| record.get(c).unwrap_or("").trim().to_string();

        let student_id = field(c_student);
        if student_id.is_empty() {
            return Err(DataError::Parse {
                row,
                message: "empty student_id".into(),
            });
        }
        let exercise_id = field(c_exercise);
        let kc_id = field(c_kc);
        if kc_id.is_empty() {
            return Err(DataError::Parse {
                row,
                message: "empty kc_id".into(),
            });
        }
        if kc_id.contains(|c: char| c == ';' || c == '~' || c == '|') {
            return Err(DataError::Parse {
                row,
                message: format!("kc_id `{kc_id}` lists several KCs; multi-KC exercises are not supported"),
            });
        }
        let kc_name = c_name.map(field).unwrap_or_default();
        let correct = match field(c_correct).as_str() {
            "1" => true,
            "0" => false,
            other => {
                return Err(DataError::Parse {
                    row,
                    message: format!("correct must be 0 or 1, got `{other}`"),
                })
            }
        };

        if let Some(prev) = exercise_kc.get(&exercise_id) {
            if *prev != kc_id {
                return Err(DataError::MultiKc {
                    row,
                    exercise_id,
                    first: prev.clone(),
                    second: kc_id,
                });
            }
        } else {
            exercise_kc.insert(exercise_id.clone(), kc_id.clone());
        }
        match kc_table.get(&kc_id) {
            Some(prev) if *prev != kc_name => {
                return Err(DataError::KcNameConflict {
                    row,
                    kc_id,
                    first: prev.clone(),
                    second: kc_name,
                })
            }
            Some(_) => {}
            None => {
                kc_table.insert(kc_id.clone(), kc_name.clone());
            }
        }

        let entry = per_student.entry(student_id.clone()).or_default();
        let order = match c_step {
            Some(c) => {
                let raw = field(c);
                raw.parse::<u64>().map_err(|_| DataError::Parse {
                    row,
                    message: format!("step must be a non-negative integer, got `{raw}`"),
                })?
            }
            None => entry.len() as u64,
        };
        entry.push((
            order,
            Interaction {
                student_id,
                step: order,
                exercise_id,
                kc_id,
                kc_name,
                correct,
            },
        ));
    }

    if n_rows == 0 {
        return Err(DataError::Empty);
    }

    let mut histories = Vec::with_capacity(per_student.len());
    for (student_id, mut rows) in per_student {
        // stable: equal keys cannot occur after the duplicate check below
        rows.sort_by_key(|(order, _)| *order);
        for w in rows.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(DataError::DuplicateStep {
                    student_id,
                    step: w[0].0,
                });
            }
        }
        histories.push(StudentHistory {
            student_id,
            interactions: rows.into_iter().map(|(_, i)| i).collect(),
        });
    }
    Ok(InteractionDataset::from_histories(histories, kc_table))
}

/// Writes the canonical CSV (`student_id,step,exercise_id,kc_id,kc_name,correct`).
pub fn write_canonical<W: Write>(ds: &InteractionDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["student_id", "step", "exercise_id", "kc_id", "kc_name", "correct"])?;
    for h in ds.histories.values() {
        for it in &h.interactions {
            w.write_record([
                it.student_id.as_str(),
                &it.step.to_string(),
                &it.exercise_id,
                &it.kc_id,
                &it.kc_name,
                if it.correct { "1" } else { "0" },
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_interactions(ds: &InteractionDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_canonical(ds, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Drops students with fewer than `min_interactions` attempts and keeps the
/// first `max_interactions` of everyone else. Repeating the call is a no-op
/// as long as `max_interactions >= min_interactions`.
pub fn filter_and_truncate(
    ds: &InteractionDataset,
    min_interactions: usize,
    max_interactions: usize,
) -> InteractionDataset {
    let min_interactions = min_interactions.max(1);
    let histories = ds
        .histories
        .values()
        .filter(|h| h.len() >= min_interactions)
        .map(|h| StudentHistory {
            student_id: h.student_id.clone(),
            interactions: h.interactions.iter().take(max_interactions).cloned().collect(),
        });
    let mut out = InteractionDataset::from_histories(histories, ds.kc_table.clone());
    out.role = ds.role;
    out
}

/// How many learners to hold out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestSpec {
    Fraction(f64),
    Count(usize),
}

impl TestSpec {
    /// Number of test learners for a population; fractions floor.
    pub fn resolve(&self, population: usize) -> Result<usize> {
        match *self {
            TestSpec::Fraction(f) => {
                if !(0.0..=1.0).contains(&f) {
                    return Err(DataError::InvalidArgument(format!(
                        "test fraction must lie in [0, 1], got {f}"
                    )));
                }
                Ok((f * population as f64).floor() as usize)
            }
            TestSpec::Count(n) if n > population => Err(DataError::Infeasible {
                what: "split",
                requested: n,
                available: population,
            }),
            TestSpec::Count(n) => Ok(n),
        }
    }
}

fn shuffled_ids(ds: &InteractionDataset, seed: u64) -> Vec<String> {
    let mut ids: Vec<String> = ds.histories.keys().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    ids
}

/// Learner-level holdout split. Returns `(train, test)`.
pub fn split_holdout(
    ds: &InteractionDataset,
    test_spec: TestSpec,
    seed: u64,
) -> Result<(InteractionDataset, InteractionDataset)> {
    let n_test = test_spec.resolve(ds.n_learners())?;
    let ids = shuffled_ids(ds, seed);
    let test: BTreeSet<String> = ids[..n_test].iter().cloned().collect();
    let train: BTreeSet<String> = ids[n_test..].iter().cloned().collect();
    Ok((
        ds.restrict(&train, SplitRole::Train),
        ds.restrict(&test, SplitRole::Test),
    ))
}

/// Uniform sample of `n_students` learners without replacement.
pub fn sample_cold_start(train: &InteractionDataset, n_students: usize, seed: u64) -> Result<InteractionDataset> {
    if n_students > train.n_learners() {
        return Err(DataError::Infeasible {
            what: "cold-start sample",
            requested: n_students,
            available: train.n_learners(),
        });
    }
    let ids = shuffled_ids(train, seed);
    let keep: BTreeSet<String> = ids.into_iter().take(n_students).collect();
    Ok(train.restrict(&keep, train.role))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct StatsReport {
    pub n_interactions: usize,
    pub n_learners: usize,
    pub n_exercises: usize,
    pub n_kcs: usize,
    pub median_interactions_per_learner: usize,
    pub median_kcs_per_learner: usize,
}

/// Lower median: for even lengths the smaller of the two middle values.
pub fn lower_median(values: &mut [usize]) -> usize {
    if values.is_empty() {
        return 0;
    }
    values.sort_unstable();
    values[(values.len() - 1) / 2]
}

pub fn dataset_stats(ds: &InteractionDataset) -> StatsReport {
    let mut lengths: Vec<usize> = ds.histories.values().map(|h| h.len()).collect();
    let mut kcs_per: Vec<usize> = ds
        .histories
        .values()
        .map(|h| {
            h.interactions
                .iter()
                .map(|i| i.kc_id.as_str())
                .collect::<BTreeSet<_>>()
                .len()
        })
        .collect();
    let kcs: BTreeSet<&str> = ds
        .histories
        .values()
        .flat_map(|h| h.interactions.iter().map(|i| i.kc_id.as_str()))
        .collect();
    StatsReport {
        n_interactions: lengths.iter().sum(),
        n_learners: ds.n_learners(),
        n_exercises: ds.exercise_set.len(),
        n_kcs: kcs.len(),
        median_interactions_per_learner: lower_median(&mut lengths),
        median_kcs_per_learner: lower_median(&mut kcs_per),
    }
}
