//! Bayesian knowledge tracing: one two-state hidden Markov model per KC,
//! fitted with Baum-Welch.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{ensure_trainable, BaselineError, Result};
use crate::data::{Interaction, InteractionDataset, StudentHistory, Target};
use crate::tracer::{Tracer, TracerError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BktParams {
    /// P(L0): mastered before the first attempt.
    pub prior: f64,
    /// P(T): unmastered to mastered after an attempt.
    pub learn: f64,
    /// P(G): correct without mastery.
    pub guess: f64,
    /// P(S): incorrect despite mastery.
    pub slip: f64,
}

impl Default for BktParams {
    fn default() -> Self {
        BktParams {
            prior: 0.5,
            learn: 0.1,
            guess: 0.2,
            slip: 0.1,
        }
    }
}

impl BktParams {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("prior", self.prior),
            ("learn", self.learn),
            ("guess", self.guess),
            ("slip", self.slip),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(BaselineError::Parameter { name, value });
            }
        }
        Ok(())
    }

    /// P(correct) given mastery probability `p_l`.
    pub fn p_correct(&self, p_l: f64) -> f64 {
        p_l * (1.0 - self.slip) + (1.0 - p_l) * self.guess
    }

    /// Posterior mastery after observing `correct`, followed by the learning
    /// transition.
    pub fn update(&self, p_l: f64, correct: bool) -> f64 {
        let posterior = if correct {
            let num = p_l * (1.0 - self.slip);
            let den = self.p_correct(p_l);
            if den > 0.0 {
                num / den
            } else {
                p_l
            }
        } else {
            let num = p_l * self.slip;
            let den = 1.0 - self.p_correct(p_l);
            if den > 0.0 {
                num / den
            } else {
                p_l
            }
        };
        posterior + (1.0 - posterior) * self.learn
    }
}

/// Returns `(P(correct), updated P(L))`.
pub fn bkt_predict_and_update(params: &BktParams, p_l: f64, correct: bool) -> Result<(f64, f64)> {
    params.validate()?;
    if !(0.0..=1.0).contains(&p_l) {
        return Err(BaselineError::Parameter {
            name: "p_l",
            value: p_l,
        });
    }
    Ok((params.p_correct(p_l), params.update(p_l, correct)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BktFitConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub init: BktParams,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
    /// Upper bound for guess and slip.
    pub max_guess_slip: f64,
}

impl Default for BktFitConfig {
    fn default() -> Self {
        BktFitConfig {
            max_iters: 200,
            tol: 1e-6,
            init: BktParams::default(),
            clamp_lo: 0.001,
            clamp_hi: 0.999,
            max_guess_slip: 0.499,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BktFit {
    pub params: BktParams,
    /// Log-likelihood of the parameters entering each EM iteration, plus
    /// that of the final parameters.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
}

#[derive(Default)]
struct Stats {
    ll: f64,
    first_l: f64,
    n_seq: f64,
    learn_num: f64,
    learn_den: f64,
    guess_num: f64,
    guess_den: f64,
    slip_num: f64,
    slip_den: f64,
}

fn emission(p: &BktParams, correct: bool) -> [f64; 2] {
    // [unmastered, mastered]
    if correct {
        [p.guess, 1.0 - p.slip]
    } else {
        [1.0 - p.guess, p.slip]
    }
}

/// Scaled forward-backward for one observation sequence.
fn accumulate(p: &BktParams, obs: &[bool], st: &mut Stats) {
    let n = obs.len();
    if n == 0 {
        return;
    }
    let mut alpha = vec![[0.0; 2]; n];
    let mut scale = vec![0.0; n];
    let e0 = emission(p, obs[0]);
    alpha[0] = [(1.0 - p.prior) * e0[0], p.prior * e0[1]];
    for t in 0..n {
        if t > 0 {
            let prev = alpha[t - 1];
            let e = emission(p, obs[t]);
            alpha[t] = [prev[0] * (1.0 - p.learn) * e[0], (prev[0] * p.learn + prev[1]) * e[1]];
        }
        let c = alpha[t][0] + alpha[t][1];
        scale[t] = c;
        alpha[t][0] /= c;
        alpha[t][1] /= c;
        st.ll += c.ln();
    }
    let mut beta = vec![[1.0; 2]; n];
    for t in (0..n - 1).rev() {
        let e = emission(p, obs[t + 1]);
        let nb = beta[t + 1];
        beta[t] = [
            ((1.0 - p.learn) * e[0] * nb[0] + p.learn * e[1] * nb[1]) / scale[t + 1],
            (e[1] * nb[1]) / scale[t + 1],
        ];
    }
    for t in 0..n {
        let g = [alpha[t][0] * beta[t][0], alpha[t][1] * beta[t][1]];
        if t == 0 {
            st.first_l += g[1];
        }
        if obs[t] {
            st.guess_num += g[0];
        } else {
            st.slip_num += g[1];
        }
        st.guess_den += g[0];
        st.slip_den += g[1];
        if t + 1 < n {
            let e = emission(p, obs[t + 1]);
            let xi_ul = alpha[t][0] * p.learn * e[1] * beta[t + 1][1] / scale[t + 1];
            st.learn_num += xi_ul;
            st.learn_den += g[0];
        }
    }
    st.n_seq += 1.0;
}

fn kc_sequences(ds: &InteractionDataset, kc: &str) -> Vec<Vec<bool>> {
    ds.histories
        .values()
        .map(|h| {
            h.interactions
                .iter()
                .filter(|i| i.kc_id == kc)
                .map(|i| i.correct)
                .collect::<Vec<_>>()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

fn e_step(p: &BktParams, seqs: &[Vec<bool>]) -> Stats {
    let mut st = Stats::default();
    for s in seqs {
        accumulate(p, s, &mut st);
    }
    st
}

fn ratio_or(num: f64, den: f64, fallback: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        fallback
    }
}

/// Baum-Welch for one KC. Each M-step coordinate is a concave Bernoulli
/// objective, so clamping it to the allowed box keeps every iteration a
/// generalized EM step and the likelihood non-decreasing.
pub fn bkt_fit_em(ds: &InteractionDataset, kc: &str, config: &BktFitConfig) -> Result<BktFit> {
    ensure_trainable(ds)?;
    config.init.validate()?;
    let seqs = kc_sequences(ds, kc);
    if seqs.is_empty() {
        return Err(BaselineError::MissingKc(kc.to_string()));
    }
    let lo = config.clamp_lo;
    let hi = config.clamp_hi;
    let gs_hi = config.max_guess_slip.min(hi);
    let clamp = |p: BktParams| BktParams {
        prior: p.prior.clamp(lo, hi),
        learn: p.learn.clamp(lo, hi),
        guess: p.guess.clamp(lo, gs_hi),
        slip: p.slip.clamp(lo, gs_hi),
    };
    let mut params = clamp(config.init);
    let mut lls = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iters {
        let st = e_step(&params, &seqs);
        if let Some(&prev) = lls.last() {
            if st.ll - prev < config.tol {
                lls.push(st.ll);
                converged = true;
                break;
            }
        }
        lls.push(st.ll);
        params = clamp(BktParams {
            prior: ratio_or(st.first_l, st.n_seq, params.prior),
            learn: ratio_or(st.learn_num, st.learn_den, params.learn),
            guess: ratio_or(st.guess_num, st.guess_den, params.guess),
            slip: ratio_or(st.slip_num, st.slip_den, params.slip),
        });
    }
    if !converged {
        lls.push(e_step(&params, &seqs).ll);
    }
    Ok(BktFit {
        params,
        log_likelihoods: lls,
        converged,
    })
}

/// Per-KC BKT tracer. KCs without fitted parameters score 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BktModel {
    pub kcs: BTreeMap<String, BktParams>,
}

impl BktModel {
    pub fn new(kcs: BTreeMap<String, BktParams>) -> Self {
        BktModel { kcs }
    }

    /// Mastery probability of `kc` after replaying `history`.
    pub fn mastery(&self, history: &[Interaction], kc: &str) -> Option<f64> {
        let p = self.kcs.get(kc)?;
        Some(
            history
                .iter()
                .filter(|i| i.kc_id == kc)
                .fold(p.prior, |p_l, i| p.update(p_l, i.correct)),
        )
    }
}

pub fn bkt_fit_all(ds: &InteractionDataset, config: &BktFitConfig) -> Result<BktModel> {
    ensure_trainable(ds)?;
    let mut kcs: Vec<&str> = ds
        .histories
        .values()
        .flat_map(|h| h.interactions.iter().map(|i| i.kc_id.as_str()))
        .collect();
    kcs.sort_unstable();
    kcs.dedup();
    if kcs.is_empty() {
        return Err(BaselineError::NoData);
    }
    let mut out = BTreeMap::new();
    for kc in kcs {
        out.insert(kc.to_string(), bkt_fit_em(ds, kc, config)?.params);
    }
    Ok(BktModel::new(out))
}

impl Tracer for BktModel {
    fn name(&self) -> &str {
        "bkt"
    }

    fn predict(&self, history: &[Interaction], target: &Target) -> std::result::Result<f64, TracerError> {
        match self.mastery(history, &target.kc_id) {
            Some(p_l) => Ok(self.kcs[&target.kc_id].p_correct(p_l)),
            None => {
                log::debug!("BKT has no parameters for KC `{}`; scoring 0.5", target.kc_id);
                Ok(0.5)
            }
        }
    }

    fn predict_sequence(&self, history: &StudentHistory) -> std::result::Result<Vec<f64>, TracerError> {
        let mut state: HashMap<&str, f64> = HashMap::new();
        let mut out = Vec::with_capacity(history.len().saturating_sub(1));
        for (t, it) in history.interactions.iter().enumerate() {
            let Some(p) = self.kcs.get(&it.kc_id) else {
                if t > 0 {
                    out.push(0.5);
                }
                continue;
            };
            let p_l = *state.get(it.kc_id.as_str()).unwrap_or(&p.prior);
            if t > 0 {
                out.push(p.p_correct(p_l));
            }
            state.insert(it.kc_id.as_str(), p.update(p_l, it.correct));
        }
        Ok(out)
    }

    fn can_score(&self, target: &Target) -> bool {
        self.kcs.contains_key(&target.kc_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_arithmetic() {
        let p = BktParams {
            prior: 0.5,
            learn: 0.3,
            guess: 0.2,
            slip: 0.1,
        };
        let (pc, next) = bkt_predict_and_update(&p, 0.5, true).unwrap();
        assert!((pc - 0.55).abs() < 1e-12);
        let posterior: f64 = 0.45 / 0.55;
        assert!((posterior - 0.818_181_818_181_818_2).abs() < 1e-12);
        assert!((next - (posterior + (1.0 - posterior) * 0.3)).abs() < 1e-12);
        assert!((next - 0.872_727_272_727_272_7).abs() < 1e-12);
    }

    #[test]
    fn noiseless_mastery() {
        let p = BktParams {
            prior: 1.0,
            learn: 0.0,
            guess: 0.0,
            slip: 0.0,
        };
        let (pc, next) = bkt_predict_and_update(&p, 1.0, true).unwrap();
        assert_eq!(pc, 1.0);
        assert_eq!(next, 1.0);
    }

    #[test]
    fn invalid_parameters() {
        let p = BktParams {
            guess: 1.2,
            ..Default::default()
        };
        assert!(matches!(
            bkt_predict_and_update(&p, 0.5, true),
            Err(BaselineError::Parameter { name: "guess", .. })
        ));
        assert!(bkt_predict_and_update(&BktParams::default(), -0.1, true).is_err());
    }

    #[test]
    fn correct_beats_incorrect() {
        let p = BktParams {
            prior: 0.3,
            learn: 0.2,
            guess: 0.25,
            slip: 0.1,
        };
        for i in 1..100 {
            let p_l = i as f64 / 100.0;
            assert!(p.update(p_l, true) > p.update(p_l, false));
        }
    }

    #[test]
    fn sequence_matches_pointwise() {
        let mut kcs = BTreeMap::new();
        kcs.insert("a".to_string(), BktParams::default());
        let m = BktModel::new(kcs);
        let its: Vec<Interaction> = [("a", true), ("b", false), ("a", false), ("a", true), ("b", true)]
            .iter()
            .enumerate()
            .map(|(i, (k, c))| Interaction {
                student_id: "s".into(),
                step: i as u64,
                exercise_id: "e".into(),
                kc_id: k.to_string(),
                kc_name: k.to_string(),
                correct: *c,
            })
            .collect();
        let h = StudentHistory {
            student_id: "s".into(),
            interactions: its.clone(),
        };
        let seq = m.predict_sequence(&h).unwrap();
        for t in 1..its.len() {
            assert_eq!(seq[t - 1], m.predict(&its[..t], &its[t].target()).unwrap());
        }
        assert_eq!(seq[3], 0.5);
    }
}
