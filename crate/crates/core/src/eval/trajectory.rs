//! Per-KC mastery trajectories probed from any tracer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::data::{StudentHistory, Target};
use crate::tracer::{Tracer, TracerError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub step: u64,
    pub answered_kc: String,
    pub correct: bool,
}

/// `values[t][k]`: predicted correctness on a probe of KC `k` after the
/// first `t + 1` interactions. Missing columns hold `None` throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMatrix {
    pub student_id: String,
    pub kcs: Vec<String>,
    pub steps: Vec<TrajectoryStep>,
    pub values: Vec<Vec<Option<f64>>>,
    /// Probe predictions from the empty history.
    pub initial: Vec<Option<f64>>,
    pub missing: Vec<bool>,
}

/// Probe target for a KC: the KC's own name with a synthetic exercise id.
pub fn probe_target(kc_id: &str, kc_name: &str) -> Target {
    Target {
        exercise_id: format!("probe:{kc_id}"),
        kc_id: kc_id.to_string(),
        kc_name: kc_name.to_string(),
    }
}

impl TrajectoryMatrix {
    /// Step-to-step change; row 0 is relative to the empty-history probe.
    pub fn deltas(&self) -> Vec<Vec<Option<f64>>> {
        let mut prev = &self.initial;
        let mut out = Vec::with_capacity(self.values.len());
        for row in &self.values {
            out.push(
                row.iter()
                    .zip(prev)
                    .map(|(a, b)| match (a, b) {
                        (Some(a), Some(b)) => Some(a - b),
                        _ => None,
                    })
                    .collect(),
            );
            prev = row;
        }
        out
    }

    fn csv_with(&self, rows: &[Vec<Option<f64>>]) -> String {
        let mut s = String::from("step,answered_kc,correct");
        for k in &self.kcs {
            s.push(',');
            s.push_str(k);
        }
        s.push('\n');
        for (st, row) in self.steps.iter().zip(rows) {
            s.push_str(&format!("{},{},{}", st.step, st.answered_kc, st.correct as u8));
            for v in row {
                s.push(',');
                if let Some(v) = v {
                    s.push_str(&v.to_string());
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> String {
        self.csv_with(&self.values)
    }

    pub fn deltas_csv(&self) -> String {
        self.csv_with(&self.deltas())
    }
}

/// Probes `tracer` on every tracked KC after each prefix of `history`.
/// Predicting is read-only, so the tracer is shared, not cloned.
pub fn extract_trajectory(
    tracer: &dyn Tracer,
    history: &StudentHistory,
    tracked_kcs: &[String],
    kc_table: &BTreeMap<String, String>,
) -> Result<TrajectoryMatrix> {
    if tracked_kcs.is_empty() {
        return Err(EvalError::InvalidArgument("no KCs to track".into()));
    }
    let mut probes = Vec::with_capacity(tracked_kcs.len());
    for kc in tracked_kcs {
        let name = kc_table
            .get(kc)
            .ok_or_else(|| EvalError::InvalidArgument(format!("tracked KC `{kc}` is not in the KC table")))?;
        probes.push(probe_target(kc, name));
    }
    let mut missing: Vec<bool> = probes.iter().map(|p| !tracer.can_score(p)).collect();
    let its = &history.interactions;
    let mut rows: Vec<Vec<Option<f64>>> = vec![vec![None; probes.len()]; its.len() + 1];
    for (k, probe) in probes.iter().enumerate() {
        if missing[k] {
            continue;
        }
        for (t, row) in rows.iter_mut().enumerate() {
            match tracer.predict(&its[..t], probe) {
                Ok(p) => row[k] = Some(p),
                Err(TracerError::UnknownKc(_)) => {
                    missing[k] = true;
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
        if missing[k] {
            rows.iter_mut().for_each(|r| r[k] = None);
        }
    }
    let initial = rows.remove(0);
    Ok(TrajectoryMatrix {
        student_id: history.student_id.clone(),
        kcs: tracked_kcs.to_vec(),
        steps: its
            .iter()
            .map(|i| TrajectoryStep {
                step: i.step,
                answered_kc: i.kc_id.clone(),
                correct: i.correct,
            })
            .collect(),
        values: rows,
        initial,
        missing,
    })
}
