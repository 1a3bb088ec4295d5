//! AUC, calibration and rank correlation.

use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::data::InteractionDataset;
use crate::tracer::Tracer;

/// One scored prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub y_true: bool,
    pub y_score: f64,
    pub student_id: String,
    pub step: u64,
    pub kc_id: String,
}

impl EvalRecord {
    pub fn bare(y_true: bool, y_score: f64) -> Self {
        EvalRecord {
            y_true,
            y_score,
            student_id: String::new(),
            step: 0,
            kc_id: String::new(),
        }
    }
}

/// Average 1-based ranks, ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Mann-Whitney AUC with ties counted half.
pub fn auc_scores(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(EvalError::InvalidArgument(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite(*s));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::UndefinedAuc { n_pos, n_neg });
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y).map(|(r, _)| r).sum();
    let p = n_pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n_neg as f64))
}

pub fn auc(records: &[EvalRecord]) -> Result<f64> {
    let labels: Vec<bool> = records.iter().map(|r| r.y_true).collect();
    let scores: Vec<f64> = records.iter().map(|r| r.y_score).collect();
    auc_scores(&labels, &scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    /// `None` for an empty bin.
    pub mean_conf: Option<f64>,
    pub frac_pos: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
    pub n_bins: usize,
}

impl CalibrationReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from("bin_lo,bin_hi,mean_conf,frac_pos,count\n");
        for b in &self.bins {
            s.push_str(&format!("{},{},{},{},{}\n", b.lo, b.hi, opt(b.mean_conf), opt(b.frac_pos), b.count));
        }
        s.push_str(&format!("ece,{},,,\n", self.ece));
        s
    }
}

/// Equal-width reliability bins over `[0, 1]`; the last bin is closed on
/// the right. Empty bins carry no weight in the ECE.
pub fn calibration(records: &[EvalRecord], n_bins: usize) -> Result<CalibrationReport> {
    if n_bins < 2 {
        return Err(EvalError::InvalidArgument(format!("need at least 2 bins, got {n_bins}")));
    }
    let mut sum_conf = vec![0.0; n_bins];
    let mut n_pos = vec![0usize; n_bins];
    let mut counts = vec![0usize; n_bins];
    for r in records {
        if !(0.0..=1.0).contains(&r.y_score) {
            return Err(EvalError::NonFinite(r.y_score));
        }
        let b = ((r.y_score * n_bins as f64).floor() as usize).min(n_bins - 1);
        sum_conf[b] += r.y_score;
        n_pos[b] += r.y_true as usize;
        counts[b] += 1;
    }
    let total = records.len() as f64;
    let mut ece = 0.0;
    let bins = (0..n_bins)
        .map(|b| {
            let lo = b as f64 / n_bins as f64;
            let hi = (b + 1) as f64 / n_bins as f64;
            if counts[b] == 0 {
                return CalibrationBin {
                    lo,
                    hi,
                    mean_conf: None,
                    frac_pos: None,
                    count: 0,
                };
            }
            let c = counts[b] as f64;
            let conf = sum_conf[b] / c;
            let acc = n_pos[b] as f64 / c;
            ece += c / total * (conf - acc).abs();
            CalibrationBin {
                lo,
                hi,
                mean_conf: Some(conf),
                frac_pos: Some(acc),
                count: counts[b],
            }
        })
        .collect();
    Ok(CalibrationReport { bins, ece, n_bins })
}

/// Spearman rank correlation, ties resolved by average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(EvalError::InvalidArgument("spearman needs two equal-length series of length >= 2".into()));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(EvalError::InvalidArgument("spearman undefined for a constant series".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

/// Scores every interaction at step >= 1 of every history from its true
/// preceding prefix.
pub fn evaluate_tracer(tracer: &dyn Tracer, ds: &InteractionDataset) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::with_capacity(ds.n_interactions());
    for h in ds.histories.values() {
        let scores = tracer.predict_sequence(h)?;
        if scores.len() != h.len().saturating_sub(1) {
            return Err(EvalError::InvalidArgument(format!(
                "tracer `{}` returned {} scores for {} targets",
                tracer.name(),
                scores.len(),
                h.len().saturating_sub(1)
            )));
        }
        for (it, s) in h.interactions.iter().skip(1).zip(scores) {
            if !(0.0..=1.0).contains(&s) {
                return Err(EvalError::NonFinite(s));
            }
            out.push(EvalRecord {
                y_true: it.correct,
                y_score: s,
                student_id: it.student_id.clone(),
                step: it.step,
                kc_id: it.kc_id.clone(),
            });
        }
    }
    Ok(out)
}
