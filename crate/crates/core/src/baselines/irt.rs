//! One-parameter logistic (Rasch) model.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{ensure_trainable, sigmoid, BaselineError, Result, Scored};
use crate::data::{Interaction, InteractionDataset, Target};
use crate::tracer::{Tracer, TracerError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrtParams {
    pub ability: BTreeMap<String, f64>,
    pub difficulty: BTreeMap<String, f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrtConfig {
    pub max_iters: usize,
    /// Stop once no parameter moves more than this.
    pub tol: f64,
    /// Largest per-iteration change of any single parameter.
    pub max_step: f64,
}

impl Default for IrtConfig {
    fn default() -> Self {
        IrtConfig {
            max_iters: 500,
            tol: 1e-7,
            max_step: 1.0,
        }
    }
}

pub fn irt_predict(theta: f64, b: f64) -> f64 {
    sigmoid(theta - b)
}

impl IrtParams {
    pub fn score(&self, student: &str, exercise: &str) -> Scored {
        let theta = self.ability.get(student);
        let b = self.difficulty.get(exercise);
        if theta.is_none() {
            log::debug!("IRT: unseen student `{student}`, using ability 0");
        }
        if b.is_none() {
            log::debug!("IRT: unseen exercise `{exercise}`, using difficulty 0");
        }
        Scored {
            probability: irt_predict(*theta.unwrap_or(&0.0), *b.unwrap_or(&0.0)),
            fallback: theta.is_none() || b.is_none(),
        }
    }

    pub fn log_likelihood(&self, ds: &InteractionDataset) -> f64 {
        let mut ll = 0.0;
        for it in ds.histories.values().flat_map(|h| &h.interactions) {
            let p = self.score(&it.student_id, &it.exercise_id).probability;
            ll += if it.correct { p.ln() } else { (1.0 - p).ln() };
        }
        let reg: f64 = self.ability.values().chain(self.difficulty.values()).map(|v| v * v).sum();
        ll - 0.5 * self.lambda * reg
    }
}

/// Maximizes the L2-regularized Bernoulli log-likelihood by alternating
/// gradient ascent on abilities and difficulties. Each step is scaled by the
/// inverse diagonal curvature, which for a fixed opposite block is the exact
/// 1-D Newton step per parameter.
pub fn irt_fit(ds: &InteractionDataset, lambda: f64, config: &IrtConfig) -> Result<IrtParams> {
    ensure_trainable(ds)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(BaselineError::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let mut students: HashMap<&str, usize> = HashMap::new();
    let mut exercises: HashMap<&str, usize> = HashMap::new();
    let mut obs: Vec<(usize, usize, f64)> = Vec::new();
    for it in ds.histories.values().flat_map(|h| &h.interactions) {
        let n = students.len();
        let s = *students.entry(it.student_id.as_str()).or_insert(n);
        let n = exercises.len();
        let e = *exercises.entry(it.exercise_id.as_str()).or_insert(n);
        obs.push((s, e, if it.correct { 1.0 } else { 0.0 }));
    }
    if obs.is_empty() {
        return Err(BaselineError::NoData);
    }
    let mut theta = vec![0.0; students.len()];
    let mut b = vec![0.0; exercises.len()];
    // A small curvature floor keeps the step finite when lambda = 0 and a
    // block is saturated.
    let floor = lambda.max(1e-6);
    for iter in 0..config.max_iters {
        let mut grad = vec![0.0; theta.len()];
        let mut curv = vec![floor; theta.len()];
        for &(s, e, y) in &obs {
            let p = irt_predict(theta[s], b[e]);
            grad[s] += y - p;
            curv[s] += p * (1.0 - p);
        }
        let mut moved: f64 = 0.0;
        for (s, t) in theta.iter_mut().enumerate() {
            let step = ((grad[s] - lambda * *t) / curv[s]).clamp(-config.max_step, config.max_step);
            *t += step;
            moved = moved.max(step.abs());
        }
        let mut grad = vec![0.0; b.len()];
        let mut curv = vec![floor; b.len()];
        for &(s, e, y) in &obs {
            let p = irt_predict(theta[s], b[e]);
            grad[e] -= y - p;
            curv[e] += p * (1.0 - p);
        }
        for (e, d) in b.iter_mut().enumerate() {
            let step = ((grad[e] - lambda * *d) / curv[e]).clamp(-config.max_step, config.max_step);
            *d += step;
            moved = moved.max(step.abs());
        }
        if !moved.is_finite() || theta.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(BaselineError::Divergence(format!("IRT parameters became non-finite at iteration {iter}")));
        }
        if moved < config.tol {
            break;
        }
    }
    let name = |m: HashMap<&str, usize>, v: &[f64]| m.into_iter().map(|(k, i)| (k.to_string(), v[i])).collect();
    Ok(IrtParams {
        ability: name(students, &theta),
        difficulty: name(exercises, &b),
        lambda,
    })
}

impl Tracer for IrtParams {
    fn name(&self) -> &str {
        "irt"
    }

    fn predict(&self, history: &[Interaction], target: &Target) -> std::result::Result<f64, TracerError> {
        let student = history.first().map(|i| i.student_id.as_str()).unwrap_or("");
        Ok(self.score(student, &target.exercise_id).probability)
    }

    fn can_score(&self, target: &Target) -> bool {
        self.difficulty.contains_key(&target.exercise_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_values() {
        assert_eq!(irt_predict(0.7, 0.7), 0.5);
        assert!((irt_predict(1.0, 0.0) - 0.731_058_578_630_004_9).abs() < 1e-12);
    }

    #[test]
    fn unseen_entities_fall_back() {
        let p = IrtParams {
            ability: BTreeMap::new(),
            difficulty: [("e".to_string(), 1.0)].into(),
            lambda: 0.0,
        };
        let s = p.score("nobody", "e");
        assert!(s.fallback);
        assert_eq!(s.probability, irt_predict(0.0, 1.0));
        assert_eq!(p.score("nobody", "x").probability, 0.5);
    }
}
