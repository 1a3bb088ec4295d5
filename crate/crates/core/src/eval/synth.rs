//! Synthetic worlds with known ground truth: a BKT generator with a matching
//! oracle tracer, and a Rasch generator for difficulty recovery.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::baselines::{irt_predict, BktParams};
use crate::data::{Interaction, InteractionDataset, StudentHistory, Target};
use crate::tracer::{Tracer, TracerError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthKc {
    pub id: String,
    pub name: String,
    pub params: BktParams,
    /// Relative frequency of this KC in a student's exercise stream.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BktWorld {
    pub kcs: Vec<SynthKc>,
    pub exercises_per_kc: usize,
    /// Standard deviation of a per-student shift added to every KC's prior
    /// on the logit scale. Zero makes all students identical in law.
    #[serde(default)]
    pub prior_logit_sd: f64,
}

impl BktWorld {
    /// Five single-word KCs with distinct difficulty; the overall correct
    /// rate sits around 0.7.
    pub fn standard() -> Self {
        let spec = [
            ("k1", "fractions", 0.35, 0.20, 0.20, 0.10),
            ("k2", "decimals", 0.55, 0.15, 0.25, 0.08),
            ("k3", "percentages", 0.70, 0.25, 0.30, 0.10),
            ("k4", "ratios", 0.45, 0.20, 0.15, 0.05),
            ("k5", "exponents", 0.80, 0.10, 0.25, 0.12),
        ];
        BktWorld {
            kcs: spec
                .iter()
                .map(|&(id, name, prior, learn, guess, slip)| SynthKc {
                    id: id.into(),
                    name: name.into(),
                    params: BktParams {
                        prior,
                        learn,
                        guess,
                        slip,
                    },
                    weight: 1.0,
                })
                .collect(),
            exercises_per_kc: 4,
            prior_logit_sd: 0.0,
        }
    }

    /// Same KCs with a different mixture.
    pub fn with_weights(mut self, weights: &[f64]) -> Self {
        for (kc, &w) in self.kcs.iter_mut().zip(weights) {
            kc.weight = w;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kcs.is_empty() || self.exercises_per_kc == 0 {
            return Err(EvalError::InvalidArgument("world needs KCs and exercises".into()));
        }
        for kc in &self.kcs {
            kc.params.validate()?;
            if !(kc.weight >= 0.0 && kc.weight.is_finite()) {
                return Err(EvalError::InvalidArgument(format!("KC `{}` has invalid weight", kc.id)));
            }
        }
        if !(self.prior_logit_sd >= 0.0 && self.prior_logit_sd.is_finite()) {
            return Err(EvalError::InvalidArgument("prior_logit_sd must be non-negative".into()));
        }
        Ok(())
    }

    pub fn kc_table(&self) -> BTreeMap<String, String> {
        self.kcs.iter().map(|k| (k.id.clone(), k.name.clone())).collect()
    }

    fn student_prior(&self, kc: &BktParams, shift: f64) -> f64 {
        if shift == 0.0 {
            return kc.prior;
        }
        let p = kc.prior.clamp(1e-9, 1.0 - 1e-9);
        let z = (p / (1.0 - p)).ln() + shift;
        1.0 / (1.0 + (-z).exp())
    }
}

/// Per-student latent draws needed to replay the generator exactly.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub prior_shift: BTreeMap<String, f64>,
}

/// Simulates `n_students` learners for `steps` interactions each. Student
/// ids are `{prefix}s00000`, `{prefix}s00001`, ...
pub fn synth_generate(
    world: &BktWorld,
    n_students: usize,
    steps: usize,
    seed: u64,
    prefix: &str,
) -> Result<(InteractionDataset, GroundTruth)> {
    world.validate()?;
    let weights = WeightedIndex::new(world.kcs.iter().map(|k| k.weight))
        .map_err(|e| EvalError::InvalidArgument(format!("KC weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut histories = Vec::with_capacity(n_students);
    let mut truth = GroundTruth::default();
    for s in 0..n_students {
        let student_id = format!("{prefix}s{s:05}");
        let shift = if world.prior_logit_sd > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * world.prior_logit_sd
        } else {
            0.0
        };
        truth.prior_shift.insert(student_id.clone(), shift);
        let mut mastered: Vec<bool> = world
            .kcs
            .iter()
            .map(|k| rng.gen::<f64>() < world.student_prior(&k.params, shift))
            .collect();
        let mut interactions = Vec::with_capacity(steps);
        for t in 0..steps {
            let k = weights.sample(&mut rng);
            let kc = &world.kcs[k];
            let e = rng.gen_range(0..world.exercises_per_kc);
            let u: f64 = rng.gen();
            let correct = if mastered[k] {
                u >= kc.params.slip
            } else {
                u < kc.params.guess
            };
            if !mastered[k] && rng.gen::<f64>() < kc.params.learn {
                mastered[k] = true;
            }
            interactions.push(Interaction {
                student_id: student_id.clone(),
                step: t as u64,
                exercise_id: format!("{}-e{e}", kc.id),
                kc_id: kc.id.clone(),
                kc_name: kc.name.clone(),
                correct,
            });
        }
        histories.push(StudentHistory {
            student_id,
            interactions,
        });
    }
    Ok((InteractionDataset::from_histories(histories, world.kc_table()), truth))
}

/// BKT with the generator's own parameters and each student's prior.
#[derive(Debug, Clone)]
pub struct OracleTracer {
    params: HashMap<String, BktParams>,
    world: BktWorld,
    truth: GroundTruth,
}

impl OracleTracer {
    pub fn new(world: BktWorld, truth: GroundTruth) -> Self {
        OracleTracer {
            params: world.kcs.iter().map(|k| (k.id.clone(), k.params)).collect(),
            world,
            truth,
        }
    }

    fn prior(&self, student: &str, p: &BktParams) -> f64 {
        let shift = self.truth.prior_shift.get(student).copied().unwrap_or(0.0);
        self.world.student_prior(p, shift)
    }
}

impl Tracer for OracleTracer {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict(&self, history: &[Interaction], target: &Target) -> std::result::Result<f64, TracerError> {
        let p = self
            .params
            .get(&target.kc_id)
            .ok_or_else(|| TracerError::UnknownKc(target.kc_id.clone()))?;
        let student = history.first().map(|i| i.student_id.as_str()).unwrap_or("");
        let p_l = history
            .iter()
            .filter(|i| i.kc_id == target.kc_id)
            .fold(self.prior(student, p), |p_l, i| p.update(p_l, i.correct));
        Ok(p.p_correct(p_l))
    }

    fn can_score(&self, target: &Target) -> bool {
        self.params.contains_key(&target.kc_id)
    }
}

/// Rasch data: every student answers every exercise once, in a shuffled
/// order. Abilities and difficulties are standard normal. Returns the
/// dataset and the true difficulty of each exercise.
pub fn synth_irt(n_students: usize, n_exercises: usize, seed: u64) -> Result<(InteractionDataset, BTreeMap<String, f64>)> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let difficulty: BTreeMap<String, f64> = (0..n_exercises)
        .map(|e| (format!("x{e:04}"), StandardNormal.sample(&mut rng)))
        .collect();
    let names: Vec<&String> = difficulty.keys().collect();
    let mut histories = Vec::with_capacity(n_students);
    for s in 0..n_students {
        let student_id = format!("s{s:05}");
        let theta: f64 = StandardNormal.sample(&mut rng);
        let mut order = names.clone();
        order.shuffle(&mut rng);
        let interactions = order
            .into_iter()
            .enumerate()
            .map(|(t, ex)| Interaction {
                student_id: student_id.clone(),
                step: t as u64,
                exercise_id: ex.clone(),
                kc_id: "kc".into(),
                kc_name: "skill".into(),
                correct: rng.gen::<f64>() < irt_predict(theta, difficulty[ex]),
            })
            .collect();
        histories.push(StudentHistory {
            student_id,
            interactions,
        });
    }
    let kc_table = [("kc".to_string(), "skill".to_string())].into();
    Ok((InteractionDataset::from_histories(histories, kc_table), difficulty))
}
