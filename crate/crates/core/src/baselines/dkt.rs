//! Deep knowledge tracing with a single LSTM layer, trained by
//! backpropagation through time.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ensure_trainable, sigmoid, BaselineError, Result};
use crate::data::{Interaction, InteractionDataset, StudentHistory, Target};
use crate::optim::{AdamW, AdamWConfig};
use crate::tracer::{Tracer, TracerError};

pub const DKT_FORMAT: &str = "ktlab-dkt";
pub const DKT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DktConfig {
    pub hidden: usize,
    pub epochs: usize,
    /// Students per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl Default for DktConfig {
    fn default() -> Self {
        DktConfig {
            hidden: 64,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            optimizer: AdamWConfig {
                learning_rate: 1e-2,
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
        }
    }
}

/// LSTM weights. Gate rows are stacked in the order input, forget, cell,
/// output; matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DktParams {
    /// KC universe; index `k` is KC `kcs[k]`.
    pub kcs: Vec<String>,
    pub hidden: usize,
    /// `4h x 2K`
    pub w_x: Vec<f64>,
    /// `4h x h`
    pub w_h: Vec<f64>,
    /// `4h`
    pub b: Vec<f64>,
    /// `K x h`
    pub w_y: Vec<f64>,
    /// `K`
    pub b_y: Vec<f64>,
}

/// Input index of `(kc, correct)`: `kc + K * correct`.
pub fn input_index(kc: usize, correct: bool, n_kcs: usize) -> usize {
    kc + if correct { n_kcs } else { 0 }
}

/// Dense one-hot input vector of length `2K`.
pub fn one_hot_input(kc: usize, correct: bool, n_kcs: usize) -> Vec<f64> {
    let mut v = vec![0.0; 2 * n_kcs];
    v[input_index(kc, correct, n_kcs)] = 1.0;
    v
}

struct StepCache {
    x: usize,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

impl DktParams {
    pub fn zeros(kcs: Vec<String>, hidden: usize) -> Self {
        let k = kcs.len();
        DktParams {
            kcs,
            hidden,
            w_x: vec![0.0; 4 * hidden * 2 * k],
            w_h: vec![0.0; 4 * hidden * hidden],
            b: vec![0.0; 4 * hidden],
            w_y: vec![0.0; k * hidden],
            b_y: vec![0.0; k],
        }
    }

    /// Uniform init in `±1/sqrt(h)` with forget-gate bias 1.
    pub fn init(kcs: Vec<String>, hidden: usize, seed: u64) -> Self {
        let mut p = Self::zeros(kcs, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (hidden as f64).sqrt();
        for v in p.w_x.iter_mut().chain(&mut p.w_h).chain(&mut p.w_y) {
            *v = rng.gen_range(-s..s);
        }
        for v in &mut p.b[hidden..2 * hidden] {
            *v = 1.0;
        }
        p
    }

    pub fn n_kcs(&self) -> usize {
        self.kcs.len()
    }

    pub fn input_dim(&self) -> usize {
        2 * self.kcs.len()
    }

    pub fn kc_index(&self, kc: &str) -> Option<usize> {
        self.kcs.binary_search_by(|k| k.as_str().cmp(kc)).ok()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        vec![&self.w_x, &self.w_h, &self.b, &self.w_y, &self.b_y]
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w_x, &mut self.w_h, &mut self.b, &mut self.w_y, &mut self.b_y]
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Maps a history to `(kc index, correct)` pairs.
    pub fn encode(&self, history: &[Interaction]) -> Result<Vec<(usize, bool)>> {
        history
            .iter()
            .map(|i| {
                self.kc_index(&i.kc_id)
                    .map(|k| (k, i.correct))
                    .ok_or_else(|| BaselineError::UnknownKc(i.kc_id.clone()))
            })
            .collect()
    }

    fn step(&self, x: usize, h_prev: &[f64], c_prev: &[f64]) -> StepCache {
        let h = self.hidden;
        let d_in = self.input_dim();
        let mut z = self.b.clone();
        for (r, zr) in z.iter_mut().enumerate() {
            *zr += self.w_x[r * d_in + x];
            let row = &self.w_h[r * h..(r + 1) * h];
            *zr += row.iter().zip(h_prev).map(|(a, b)| a * b).sum::<f64>();
        }
        let i: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[2 * h..3 * h].iter().map(|v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * h..].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<f64> = (0..h).map(|j| f[j] * c_prev[j] + i[j] * g[j]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let hn: Vec<f64> = (0..h).map(|j| o[j] * tanh_c[j]).collect();
        StepCache {
            x,
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            i,
            f,
            g,
            o,
            tanh_c,
            h: hn,
        }
    }

    fn run(&self, seq: &[(usize, bool)]) -> Vec<StepCache> {
        let k = self.n_kcs();
        let mut h = vec![0.0; self.hidden];
        let mut c = vec![0.0; self.hidden];
        let mut out = Vec::with_capacity(seq.len());
        for &(kc, correct) in seq {
            let st = self.step(input_index(kc, correct, k), &h, &c);
            c = (0..self.hidden).map(|j| st.f[j] * st.c_prev[j] + st.i[j] * st.g[j]).collect();
            h = st.h.clone();
            out.push(st);
        }
        out
    }

    fn output_logit(&self, h: &[f64], kc: usize) -> f64 {
        let row = &self.w_y[kc * self.hidden..(kc + 1) * self.hidden];
        self.b_y[kc] + row.iter().zip(h).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Probability for `kc` after each prefix `seq[..t]`, `t = 0..=len`.
    fn prefix_probabilities(&self, seq: &[(usize, bool)], targets: &[usize]) -> Vec<f64> {
        let zero = vec![0.0; self.hidden];
        let caches = self.run(seq);
        targets
            .iter()
            .enumerate()
            .map(|(t, &kc)| {
                let h = if t == 0 { &zero } else { &caches[t - 1].h };
                sigmoid(self.output_logit(h, kc))
            })
            .collect()
    }

    /// Summed binary cross-entropy of every next-step prediction in `seqs`,
    /// the number of predictions, and the gradient of the sum.
    pub fn loss_and_grads(&self, seqs: &[Vec<(usize, bool)>]) -> (f64, usize, DktParams) {
        let h = self.hidden;
        let d_in = self.input_dim();
        let mut grads = DktParams::zeros(self.kcs.clone(), h);
        let mut loss = 0.0;
        let mut count = 0;
        for seq in seqs {
            if seq.len() < 2 {
                continue;
            }
            let inputs = &seq[..seq.len() - 1];
            let caches = self.run(inputs);
            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            for t in (0..inputs.len()).rev() {
                let st = &caches[t];
                let (kc, y) = seq[t + 1];
                let p = sigmoid(self.output_logit(&st.h, kc));
                loss -= if y { p.max(1e-300).ln() } else { (1.0 - p).max(1e-300).ln() };
                count += 1;
                let dlogit = p - if y { 1.0 } else { 0.0 };
                grads.b_y[kc] += dlogit;
                let mut dh = dh_next.clone();
                for j in 0..h {
                    grads.w_y[kc * h + j] += dlogit * st.h[j];
                    dh[j] += dlogit * self.w_y[kc * h + j];
                }
                let mut dz = vec![0.0; 4 * h];
                for j in 0..h {
                    let d_o = dh[j] * st.tanh_c[j];
                    let dc = dh[j] * st.o[j] * (1.0 - st.tanh_c[j] * st.tanh_c[j]) + dc_next[j];
                    let di = dc * st.g[j];
                    let dg = dc * st.i[j];
                    let df = dc * st.c_prev[j];
                    dc_next[j] = dc * st.f[j];
                    dz[j] = di * st.i[j] * (1.0 - st.i[j]);
                    dz[h + j] = df * st.f[j] * (1.0 - st.f[j]);
                    dz[2 * h + j] = dg * (1.0 - st.g[j] * st.g[j]);
                    dz[3 * h + j] = d_o * st.o[j] * (1.0 - st.o[j]);
                }
                dh_next = vec![0.0; h];
                for (r, &d) in dz.iter().enumerate() {
                    grads.b[r] += d;
                    grads.w_x[r * d_in + st.x] += d;
                    for j in 0..h {
                        grads.w_h[r * h + j] += d * st.h_prev[j];
                        dh_next[j] += d * self.w_h[r * h + j];
                    }
                }
            }
        }
        (loss, count, grads)
    }
}

/// Trains on every history of `ds`. The KC universe is the dataset's KC
/// table, so KCs that never occur in training still have an output unit.
pub fn dkt_train(ds: &InteractionDataset, config: &DktConfig) -> Result<DktParams> {
    ensure_trainable(ds)?;
    if config.hidden == 0 || config.batch_size == 0 {
        return Err(BaselineError::Config("hidden size and batch size must be positive".into()));
    }
    let mut kcs: Vec<String> = ds.kc_table.keys().cloned().collect();
    for it in ds.histories.values().flat_map(|h| &h.interactions) {
        kcs.push(it.kc_id.clone());
    }
    kcs.sort();
    kcs.dedup();
    if kcs.is_empty() {
        return Err(BaselineError::NoData);
    }
    let mut params = DktParams::init(kcs, config.hidden, config.seed);
    let seqs: Vec<Vec<(usize, bool)>> = ds
        .histories
        .values()
        .map(|h| params.encode(&h.interactions))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..seqs.len()).filter(|&i| seqs[i].len() >= 2).collect();
    if order.is_empty() {
        return Err(BaselineError::NoData);
    }
    let shapes: Vec<usize> = params.slices().iter().map(|s| s.len()).collect();
    let mut opt = AdamW::new(config.optimizer, &shapes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0;
        for batch in order.chunks(config.batch_size) {
            let batch_seqs: Vec<Vec<(usize, bool)>> = batch.iter().map(|&i| seqs[i].clone()).collect();
            let (loss, count, mut grads) = params.loss_and_grads(&batch_seqs);
            if !loss.is_finite() {
                return Err(BaselineError::Divergence(format!("DKT loss non-finite in epoch {epoch}")));
            }
            epoch_loss += loss;
            epoch_count += count;
            let scale = 1.0 / count.max(1) as f64;
            for s in grads.slices_mut() {
                s.iter_mut().for_each(|v| *v *= scale);
            }
            opt.step(params.slices_mut(), &grads.slices());
        }
        log::debug!("dkt epoch {epoch}: mean loss {:.5}", epoch_loss / epoch_count.max(1) as f64);
    }
    if !params.all_finite() {
        return Err(BaselineError::Divergence("DKT parameters became non-finite".into()));
    }
    Ok(params)
}

/// Probability that the next interaction on `kc` is correct.
pub fn dkt_predict(params: &DktParams, history: &[Interaction], kc: &str) -> Result<f64> {
    let k = params.kc_index(kc).ok_or_else(|| BaselineError::UnknownKc(kc.to_string()))?;
    let seq = params.encode(history)?;
    Ok(*params.prefix_probabilities(&seq, &vec![k; seq.len() + 1]).last().unwrap())
}

#[derive(Serialize, Deserialize)]
struct DktCheckpoint {
    format: String,
    version: u32,
    params: DktParams,
}

pub fn save_dkt(params: &DktParams, path: impl AsRef<Path>) -> std::io::Result<()> {
    let ckpt = DktCheckpoint {
        format: DKT_FORMAT.into(),
        version: DKT_VERSION,
        params: params.clone(),
    };
    std::fs::write(path, serde_json::to_vec(&ckpt)?)
}

pub fn load_dkt(path: impl AsRef<Path>) -> std::result::Result<DktParams, Box<dyn std::error::Error + Send + Sync>> {
    let ckpt: DktCheckpoint = serde_json::from_slice(&std::fs::read(path)?)?;
    if ckpt.format != DKT_FORMAT || ckpt.version != DKT_VERSION {
        return Err(format!("not a {DKT_FORMAT} v{DKT_VERSION} checkpoint").into());
    }
    let p = &ckpt.params;
    let (h, k) = (p.hidden, p.kcs.len());
    let ok = p.w_x.len() == 8 * h * k
        && p.w_h.len() == 4 * h * h
        && p.b.len() == 4 * h
        && p.w_y.len() == k * h
        && p.b_y.len() == k
        && p.all_finite();
    if !ok {
        return Err("DKT checkpoint has inconsistent shapes or non-finite weights".into());
    }
    Ok(ckpt.params)
}

fn tracer_err(e: BaselineError) -> TracerError {
    match e {
        BaselineError::UnknownKc(k) => TracerError::UnknownKc(k),
        other => TracerError::Model(other.to_string()),
    }
}

impl Tracer for DktParams {
    fn name(&self) -> &str {
        "dkt"
    }

    fn predict(&self, history: &[Interaction], target: &Target) -> std::result::Result<f64, TracerError> {
        dkt_predict(self, history, &target.kc_id).map_err(tracer_err)
    }

    fn predict_sequence(&self, history: &StudentHistory) -> std::result::Result<Vec<f64>, TracerError> {
        let seq = self.encode(&history.interactions).map_err(tracer_err)?;
        if seq.len() < 2 {
            return Ok(Vec::new());
        }
        let targets: Vec<usize> = seq.iter().map(|&(k, _)| k).collect();
        Ok(self.prefix_probabilities(&seq[..seq.len() - 1], &targets)[1..].to_vec())
    }

    fn can_score(&self, target: &Target) -> bool {
        self.kc_index(&target.kc_id).is_some()
    }
}
