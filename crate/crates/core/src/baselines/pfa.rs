//! Performance factor analysis: a per-KC logistic model over counts of prior
//! successes and failures on that KC.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{ensure_trainable, sigmoid, BaselineError, Result, Scored};
use crate::data::{Interaction, InteractionDataset, StudentHistory, Target};
use crate::tracer::{Tracer, TracerError};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PfaKcParams {
    /// Easiness.
    pub beta: f64,
    /// Weight on prior successes.
    pub gamma: f64,
    /// Weight on prior failures.
    pub rho: f64,
}

impl PfaKcParams {
    pub fn logit(&self, s: f64, f: f64) -> f64 {
        self.beta + self.gamma * s + self.rho * f
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PfaParams {
    pub kcs: BTreeMap<String, PfaKcParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PfaConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for PfaConfig {
    fn default() -> Self {
        PfaConfig {
            lambda: 0.01,
            max_iters: 100,
            tol: 1e-10,
        }
    }
}

/// Prior successes and failures on `kc` within `history`.
pub fn pfa_features(history: &[Interaction], kc: &str) -> (f64, f64) {
    history
        .iter()
        .filter(|i| i.kc_id == kc)
        .fold((0.0, 0.0), |(s, f), i| if i.correct { (s + 1.0, f) } else { (s, f + 1.0) })
}

pub fn pfa_predict(params: &PfaParams, history: &[Interaction], kc: &str) -> Scored {
    let (s, f) = pfa_features(history, kc);
    match params.kcs.get(kc) {
        Some(p) => Scored {
            probability: sigmoid(p.logit(s, f)),
            fallback: false,
        },
        None => {
            log::debug!("PFA: unseen KC `{kc}`, scoring 0.5");
            Scored {
                probability: 0.5,
                fallback: true,
            }
        }
    }
}

fn objective(w: &[f64; 3], rows: &[([f64; 3], f64)], lambda: f64) -> f64 {
    let mut ll = 0.0;
    for (x, y) in rows {
        let z = w[0] * x[0] + w[1] * x[1] + w[2] * x[2];
        // log sigma(z) = -softplus(-z)
        let sp = |v: f64| if v > 0.0 { v + (-v).exp().ln_1p() } else { v.exp().ln_1p() };
        ll -= if *y > 0.5 { sp(-z) } else { sp(z) };
    }
    ll - 0.5 * lambda * (w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&a);
    if d.abs() < 1e-300 || !d.is_finite() {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        *o = det(&m) / d;
    }
    Some(out)
}

/// Damped Newton ascent on one KC's regularized log-likelihood.
fn fit_kc(rows: &[([f64; 3], f64)], config: &PfaConfig) -> Result<PfaKcParams> {
    let lambda = config.lambda.max(1e-9);
    let mut w = [0.0; 3];
    let mut obj = objective(&w, rows, lambda);
    for _ in 0..config.max_iters {
        let mut g = [-lambda * w[0], -lambda * w[1], -lambda * w[2]];
        let mut h = [[0.0; 3]; 3];
        for (r, row) in h.iter_mut().enumerate() {
            row[r] = lambda;
        }
        for (x, y) in rows {
            let p = sigmoid(w[0] * x[0] + w[1] * x[1] + w[2] * x[2]);
            let v = p * (1.0 - p);
            for r in 0..3 {
                g[r] += (y - p) * x[r];
                for c in 0..3 {
                    h[r][c] += v * x[r] * x[c];
                }
            }
        }
        let Some(step) = solve3(h, g) else {
            return Err(BaselineError::Divergence("singular PFA Hessian".into()));
        };
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand = [w[0] + scale * step[0], w[1] + scale * step[1], w[2] + scale * step[2]];
            let o = objective(&cand, rows, lambda);
            if o >= obj {
                let gain = o - obj;
                w = cand;
                obj = o;
                improved = gain > config.tol;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(BaselineError::Divergence("PFA weights became non-finite".into()));
    }
    Ok(PfaKcParams {
        beta: w[0],
        gamma: w[1],
        rho: w[2],
    })
}

pub fn pfa_fit(ds: &InteractionDataset, config: &PfaConfig) -> Result<PfaParams> {
    ensure_trainable(ds)?;
    let mut rows: BTreeMap<&str, Vec<([f64; 3], f64)>> = BTreeMap::new();
    for h in ds.histories.values() {
        let mut counts: HashMap<&str, (f64, f64)> = HashMap::new();
        for it in &h.interactions {
            let c = counts.entry(it.kc_id.as_str()).or_default();
            rows.entry(it.kc_id.as_str())
                .or_default()
                .push(([1.0, c.0, c.1], if it.correct { 1.0 } else { 0.0 }));
            if it.correct {
                c.0 += 1.0;
            } else {
                c.1 += 1.0;
            }
        }
    }
    if rows.is_empty() {
        return Err(BaselineError::NoData);
    }
    let mut kcs = BTreeMap::new();
    for (kc, r) in rows {
        kcs.insert(kc.to_string(), fit_kc(&r, config)?);
    }
    Ok(PfaParams { kcs })
}

impl Tracer for PfaParams {
    fn name(&self) -> &str {
        "pfa"
    }

    fn predict(&self, history: &[Interaction], target: &Target) -> std::result::Result<f64, TracerError> {
        Ok(pfa_predict(self, history, &target.kc_id).probability)
    }

    fn predict_sequence(&self, history: &StudentHistory) -> std::result::Result<Vec<f64>, TracerError> {
        let mut counts: HashMap<&str, (f64, f64)> = HashMap::new();
        let mut out = Vec::with_capacity(history.len().saturating_sub(1));
        for (t, it) in history.interactions.iter().enumerate() {
            let c = counts.entry(it.kc_id.as_str()).or_default();
            if t > 0 {
                out.push(self.kcs.get(&it.kc_id).map_or(0.5, |p| sigmoid(p.logit(c.0, c.1))));
            }
            if it.correct {
                c.0 += 1.0;
            } else {
                c.1 += 1.0;
            }
        }
        Ok(out)
    }

    fn can_score(&self, target: &Target) -> bool {
        self.kcs.contains_key(&target.kc_id)
    }
}
