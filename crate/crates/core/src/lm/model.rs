//! Forward pass, cross-entropy loss and hand-written backward pass.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::lora::LoraAdapter;
use super::pack::{left_truncate, Mask, PackedSequence};
use super::{LayerParams, LmError, LmParams, Proj, Result};
use crate::ktlp::{format_label, Vocab};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let (t, d) = x.dim();
    let mut xhat = Array2::zeros((t, d));
    let mut rstd = Array1::zeros(t);
    let mut y = Array2::zeros((t, d));
    for i in 0..t {
        let row = x.row(i);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat[[i, j]] = h;
            y[[i, j]] = h * g[j] + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    g: &Array1<f64>,
    cache: &LnCache,
    grads: Option<(&mut Array1<f64>, &mut Array1<f64>)>,
) -> Array2<f64> {
    let (t, d) = dy.dim();
    if let Some((dg, db)) = grads {
        for i in 0..t {
            for j in 0..d {
                dg[j] += dy[[i, j]] * cache.xhat[[i, j]];
                db[j] += dy[[i, j]];
            }
        }
    }
    let mut dx = Array2::zeros((t, d));
    let mut dxhat = vec![0.0; d];
    for i in 0..t {
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for j in 0..d {
            dxhat[j] = dy[[i, j]] * g[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * cache.xhat[[i, j]];
        }
        mean_d /= d as f64;
        mean_dx /= d as f64;
        let r = cache.rstd[i];
        for j in 0..d {
            dx[[i, j]] = r * (dxhat[j] - mean_d - cache.xhat[[i, j]] * mean_dx);
        }
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[derive(Clone, Copy)]
struct LoraRef<'a> {
    a: &'a Array2<f64>,
    b: &'a Array2<f64>,
    scale: f64,
}

fn lora_ref(adapter: Option<&LoraAdapter>, layer: usize, proj: Proj) -> Option<LoraRef<'_>> {
    let ad = adapter?;
    ad.get(layer, proj).map(|t| LoraRef {
        a: &t.a,
        b: &t.b,
        scale: ad.scale(),
    })
}

/// `y = x W^T + b (+ scale * (x A^T) B^T)`; returns the low-rank activations.
fn linear(
    x: &Array2<f64>,
    w: &Array2<f64>,
    bias: &Array1<f64>,
    lora: Option<LoraRef<'_>>,
) -> (Array2<f64>, Option<Array2<f64>>) {
    let mut y = x.dot(&w.t());
    y += bias;
    let u = lora.map(|l| {
        let u = x.dot(&l.a.t());
        y.scaled_add(l.scale, &u.dot(&l.b.t()));
        u
    });
    (y, u)
}

struct LinearGrads<'a> {
    base: Option<(&'a mut Array2<f64>, &'a mut Array1<f64>)>,
    lora: Option<(&'a mut Array2<f64>, &'a mut Array2<f64>)>,
}

fn linear_backward(
    dy: &Array2<f64>,
    x: &Array2<f64>,
    w: &Array2<f64>,
    lora: Option<(LoraRef<'_>, &Array2<f64>)>,
    grads: LinearGrads<'_>,
) -> Array2<f64> {
    if let Some((dw, db)) = grads.base {
        *dw += &dy.t().dot(x);
        *db += &dy.sum_axis(Axis(0));
    }
    let mut dx = dy.dot(w);
    if let Some((l, u)) = lora {
        let dyb = dy.dot(l.b);
        dx.scaled_add(l.scale, &dyb.dot(l.a));
        if let Some((da, dbm)) = grads.lora {
            da.scaled_add(l.scale, &dyb.t().dot(x));
            dbm.scaled_add(l.scale, &dy.t().dot(u));
        }
    }
    dx
}

struct Attention {
    ctx: Array2<f64>,
    /// `probs[h * total + offsets[i] + j]` for the j-th visible key of query i.
    probs: Vec<f64>,
    offsets: Vec<usize>,
    total: usize,
}

fn attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, mask: &Mask, n_heads: usize) -> Attention {
    let (t, d) = q.dim();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut offsets = Vec::with_capacity(t);
    let mut total = 0;
    for i in 0..t {
        offsets.push(total);
        total += mask.n_visible(i);
    }
    let (qs, ks, vs) = (q.as_slice().unwrap(), k.as_slice().unwrap(), v.as_slice().unwrap());
    let mut probs = vec![0.0; total * n_heads];
    let mut ctx = Array2::zeros((t, d));
    let cs = ctx.as_slice_mut().unwrap();
    for i in 0..t {
        let nv = mask.n_visible(i);
        for h in 0..n_heads {
            let col = h * dh;
            let qi = &qs[i * d + col..i * d + col + dh];
            let p = &mut probs[h * total + offsets[i]..h * total + offsets[i] + nv];
            let mut jj = 0;
            let mut m = f64::NEG_INFINITY;
            for &(a, b) in mask.keys(i) {
                for j in a..b {
                    let kj = &ks[j * d + col..j * d + col + dh];
                    let s = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                    p[jj] = s;
                    m = m.max(s);
                    jj += 1;
                }
            }
            let mut z = 0.0;
            for x in p.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            let out = &mut cs[i * d + col..i * d + col + dh];
            let mut jj = 0;
            for &(a, b) in mask.keys(i) {
                for j in a..b {
                    p[jj] /= z;
                    let w = p[jj];
                    let vj = &vs[j * d + col..j * d + col + dh];
                    for c in 0..dh {
                        out[c] += w * vj[c];
                    }
                    jj += 1;
                }
            }
        }
    }
    Attention {
        ctx,
        probs,
        offsets,
        total,
    }
}

fn attention_backward(
    dctx: &Array2<f64>,
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    att: &Attention,
    mask: &Mask,
    n_heads: usize,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (t, d) = q.dim();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (qs, ks, vs) = (q.as_slice().unwrap(), k.as_slice().unwrap(), v.as_slice().unwrap());
    let dcs = dctx.as_slice().unwrap();
    let mut dq = Array2::zeros((t, d));
    let mut dk = Array2::zeros((t, d));
    let mut dv = Array2::zeros((t, d));
    let (dqs, dks, dvs) = (
        dq.as_slice_mut().unwrap(),
        dk.as_slice_mut().unwrap(),
        dv.as_slice_mut().unwrap(),
    );
    let mut dp = Vec::new();
    for i in 0..t {
        let nv = mask.n_visible(i);
        for h in 0..n_heads {
            let col = h * dh;
            let p = &att.probs[h * att.total + att.offsets[i]..h * att.total + att.offsets[i] + nv];
            let g = &dcs[i * d + col..i * d + col + dh];
            dp.clear();
            let mut acc = 0.0;
            let mut jj = 0;
            for &(a, b) in mask.keys(i) {
                for j in a..b {
                    let vj = &vs[j * d + col..j * d + col + dh];
                    let x = g.iter().zip(vj).map(|(x, y)| x * y).sum::<f64>();
                    dp.push(x);
                    acc += p[jj] * x;
                    let dvj = &mut dvs[j * d + col..j * d + col + dh];
                    for c in 0..dh {
                        dvj[c] += p[jj] * g[c];
                    }
                    jj += 1;
                }
            }
            let qi = &qs[i * d + col..i * d + col + dh];
            let mut jj = 0;
            for &(a, b) in mask.keys(i) {
                for j in a..b {
                    let ds = p[jj] * (dp[jj] - acc) * scale;
                    if ds != 0.0 {
                        let kj = &ks[j * d + col..j * d + col + dh];
                        for c in 0..dh {
                            dqs[i * d + col + c] += ds * kj[c];
                        }
                        let dkj = &mut dks[j * d + col..j * d + col + dh];
                        for c in 0..dh {
                            dkj[c] += ds * qi[c];
                        }
                    }
                    jj += 1;
                }
            }
        }
    }
    (dq, dk, dv)
}

struct LayerCache {
    x_in: Array2<f64>,
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    uq: Option<Array2<f64>>,
    uk: Option<Array2<f64>>,
    uv: Option<Array2<f64>>,
    att: Attention,
    uo: Option<Array2<f64>>,
    ln2: LnCache,
    bn: Array2<f64>,
    hpre: Array2<f64>,
    hact: Array2<f64>,
    u1: Option<Array2<f64>>,
    u2: Option<Array2<f64>>,
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    lnf: LnCache,
    f: Array2<f64>,
}

fn validate_sequence(params: &LmParams, seq: &PackedSequence) -> Result<()> {
    let c = &params.config;
    for &id in &seq.tokens {
        if id as usize >= c.vocab_size {
            return Err(LmError::InvalidToken {
                id,
                vocab_size: c.vocab_size,
            });
        }
    }
    if let Some(&p) = seq.positions.iter().max() {
        if p >= c.context_len {
            return Err(LmError::SequenceTooLong {
                len: p + 1,
                context_len: c.context_len,
            });
        }
    }
    if seq.positions.len() != seq.tokens.len() || seq.mask.len() != seq.tokens.len() {
        return Err(LmError::Config("packed sequence parts have different lengths".into()));
    }
    Ok(())
}

fn layer_forward(
    lp: &LayerParams,
    li: usize,
    x: Array2<f64>,
    adapter: Option<&LoraAdapter>,
    mask: &Mask,
    n_heads: usize,
) -> (Array2<f64>, LayerCache) {
    let (a, ln1) = layer_norm(&x, &lp.ln1_g, &lp.ln1_b);
    let (q, uq) = linear(&a, &lp.wq, &lp.bq, lora_ref(adapter, li, Proj::Query));
    let (k, uk) = linear(&a, &lp.wk, &lp.bk, lora_ref(adapter, li, Proj::Key));
    let (v, uv) = linear(&a, &lp.wv, &lp.bv, lora_ref(adapter, li, Proj::Value));
    let att = attention(&q, &k, &v, mask, n_heads);
    let (o, uo) = linear(&att.ctx, &lp.wo, &lp.bo, lora_ref(adapter, li, Proj::Output));
    let x_mid = &x + &o;
    let (bn, ln2) = layer_norm(&x_mid, &lp.ln2_g, &lp.ln2_b);
    let (hpre, u1) = linear(&bn, &lp.w1, &lp.b1, lora_ref(adapter, li, Proj::MlpIn));
    let hact = hpre.mapv(gelu);
    let (m, u2) = linear(&hact, &lp.w2, &lp.b2, lora_ref(adapter, li, Proj::MlpOut));
    let out = &x_mid + &m;
    (
        out,
        LayerCache {
            x_in: x,
            ln1,
            a,
            q,
            k,
            v,
            uq,
            uk,
            uv,
            att,
            uo,
            ln2,
            bn,
            hpre,
            hact,
            u1,
            u2,
        },
    )
}

fn run_forward(params: &LmParams, adapter: Option<&LoraAdapter>, seq: &PackedSequence) -> Result<ForwardCache> {
    validate_sequence(params, seq)?;
    let d = params.config.embed_dim;
    let t = seq.len();
    let mut x = Array2::zeros((t, d));
    for i in 0..t {
        let mut row = x.row_mut(i);
        row += &params.tok_emb.row(seq.tokens[i] as usize);
        row += &params.pos_emb.row(seq.positions[i]);
    }
    let mut layers = Vec::with_capacity(params.layers.len());
    for (li, lp) in params.layers.iter().enumerate() {
        let (next, cache) = layer_forward(lp, li, x, adapter, &seq.mask, params.config.n_heads);
        layers.push(cache);
        x = next;
    }
    let (f, lnf) = layer_norm(&x, &params.lnf_g, &params.lnf_b);
    Ok(ForwardCache { layers, lnf, f })
}

/// Logits for every position of a plain causal sequence (`T x V`).
pub fn forward(params: &LmParams, tokens: &[u32]) -> Result<Array2<f64>> {
    if tokens.len() > params.config.context_len {
        return Err(LmError::SequenceTooLong {
            len: tokens.len(),
            context_len: params.config.context_len,
        });
    }
    let seq = PackedSequence::causal(tokens.to_vec());
    let rows: Vec<usize> = (0..tokens.len()).collect();
    forward_packed(params, None, &seq, &rows)
}

/// Logits for the selected rows of a packed sequence.
pub fn forward_packed(
    params: &LmParams,
    adapter: Option<&LoraAdapter>,
    seq: &PackedSequence,
    rows: &[usize],
) -> Result<Array2<f64>> {
    let cache = run_forward(params, adapter, seq)?;
    Ok(cache.f.select(Axis(0), rows).dot(&params.w_out.t()))
}

/// `(l_yes, l_no)` at each selected row, computing only those two logits.
pub fn yes_no_logits(
    params: &LmParams,
    adapter: Option<&LoraAdapter>,
    seq: &PackedSequence,
    rows: &[usize],
    yes_id: u32,
    no_id: u32,
) -> Result<Vec<(f64, f64)>> {
    let cache = run_forward(params, adapter, seq)?;
    let wy = params.w_out.row(yes_id as usize);
    let wn = params.w_out.row(no_id as usize);
    Ok(rows
        .iter()
        .map(|&r| {
            let f = cache.f.row(r);
            (f.dot(&wy), f.dot(&wn))
        })
        .collect())
}

/// Softmax over a logit row with max subtraction.
pub fn next_token_distribution(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = p.iter().sum();
    for x in &mut p {
        *x /= z;
    }
    p
}

/// Draws a token index from `dist` with a seeded generator.
pub fn sample_token(dist: &[f64], seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_nonzero
}

/// Two-way softmax over the answer-word logits, i.e. `sigmoid(l_yes - l_no)`.
pub fn yes_no_probability(l_yes: f64, l_no: f64) -> f64 {
    let m = l_yes.max(l_no);
    let ey = (l_yes - m).exp();
    let en = (l_no - m).exp();
    ey / (ey + en)
}

pub fn answer_ids(vocab: &Vocab) -> Result<(u32, u32)> {
    let get = |w: &str| {
        let ids = vocab.encode(w);
        match ids.as_slice() {
            [id] if *id != Vocab::UNK_ID => Ok(*id),
            _ => Err(LmError::MissingAnswerWord(w.to_string())),
        }
    };
    Ok((get(format_label(true))?, get(format_label(false))?))
}

/// Probability that the answer to `input_text` is "yes".
pub fn predict_correctness(
    params: &LmParams,
    adapter: Option<&LoraAdapter>,
    input_text: &str,
    vocab: &Vocab,
) -> Result<f64> {
    let (yes, no) = answer_ids(vocab)?;
    let mut ids = vec![Vocab::BOS_ID];
    ids.extend(vocab.encode(input_text));
    let ids = left_truncate(&ids, params.config.context_len);
    let last = ids.len() - 1;
    let seq = PackedSequence::causal(ids);
    let l = yes_no_logits(params, adapter, &seq, &[last], yes, no)?;
    Ok(yes_no_probability(l[0].0, l[0].1))
}

/// Gradients of the summed loss.
#[derive(Debug, Clone)]
pub struct Grads {
    pub base: Option<LmParams>,
    pub adapter: Option<LoraAdapter>,
}

/// Summed cross-entropy of `targets` (`(row, token)` pairs; the logits at
/// `row` predict `token`) and its gradients with respect to the base
/// parameters and/or the adapter.
pub fn loss_and_grads(
    params: &LmParams,
    adapter: Option<&LoraAdapter>,
    seq: &PackedSequence,
    targets: &[(usize, u32)],
    want_base: bool,
    want_adapter: bool,
) -> Result<(f64, Grads)> {
    let cache = run_forward(params, adapter, seq)?;
    let cfg = params.config;
    let (t, d) = (seq.len(), cfg.embed_dim);
    let rows: Vec<usize> = targets.iter().map(|&(r, _)| r).collect();
    let frows = cache.f.select(Axis(0), &rows);
    let logits = frows.dot(&params.w_out.t());
    let mut dlogits = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    for (n, &(_, tok)) in targets.iter().enumerate() {
        if tok as usize >= cfg.vocab_size {
            return Err(LmError::InvalidToken {
                id: tok,
                vocab_size: cfg.vocab_size,
            });
        }
        let row = logits.row(n);
        let p = next_token_distribution(row.as_slice().unwrap());
        loss -= p[tok as usize].ln();
        let mut dr = dlogits.row_mut(n);
        for (j, pj) in p.iter().enumerate() {
            dr[j] = *pj;
        }
        dr[tok as usize] -= 1.0;
    }

    let mut gb = want_base.then(|| LmParams::zeros(cfg));
    let mut ga = match (want_adapter, adapter) {
        (true, Some(a)) => Some(a.zeros_like()),
        _ => None,
    };

    if let Some(g) = gb.as_mut() {
        g.w_out += &dlogits.t().dot(&frows);
    }
    let dfrows = dlogits.dot(&params.w_out);
    let mut df = Array2::zeros((t, d));
    for (n, &r) in rows.iter().enumerate() {
        let mut row = df.row_mut(r);
        row += &dfrows.row(n);
    }
    let mut dx = match gb.as_mut() {
        Some(g) => layer_norm_backward(&df, &params.lnf_g, &cache.lnf, Some((&mut g.lnf_g, &mut g.lnf_b))),
        None => layer_norm_backward(&df, &params.lnf_g, &cache.lnf, None),
    };

    for li in (0..params.layers.len()).rev() {
        let lp = &params.layers[li];
        let c = &cache.layers[li];
        let mut gl = gb.as_mut().map(|g| &mut g.layers[li]);
        macro_rules! lin_back {
            ($dy:expr, $x:expr, $w:ident, $b:ident, $proj:expr, $u:expr) => {{
                let lr = lora_ref(adapter, li, $proj);
                let lg = ga.as_mut().and_then(|g| g.get_mut(li, $proj)).map(|t| (&mut t.a, &mut t.b));
                let base = gl.as_mut().map(|g| (&mut g.$w, &mut g.$b));
                linear_backward(
                    $dy,
                    $x,
                    &lp.$w,
                    lr.map(|l| (l, $u.as_ref().expect("low-rank activations cached"))),
                    LinearGrads { base, lora: lg },
                )
            }};
        }

        // MLP sublayer
        let dhact = lin_back!(&dx, &c.hact, w2, b2, Proj::MlpOut, c.u2);
        let mut dhpre = dhact;
        dhpre.zip_mut_with(&c.hpre, |g, &h| *g *= gelu_grad(h));
        let dbn = lin_back!(&dhpre, &c.bn, w1, b1, Proj::MlpIn, c.u1);
        let dmid_ln = match gl.as_mut() {
            Some(g) => layer_norm_backward(&dbn, &lp.ln2_g, &c.ln2, Some((&mut g.ln2_g, &mut g.ln2_b))),
            None => layer_norm_backward(&dbn, &lp.ln2_g, &c.ln2, None),
        };
        let dmid = dx + &dmid_ln;

        // attention sublayer
        let dctx = lin_back!(&dmid, &c.att.ctx, wo, bo, Proj::Output, c.uo);
        let (dq, dk, dv) = attention_backward(&dctx, &c.q, &c.k, &c.v, &c.att, &seq.mask, cfg.n_heads);
        let mut da = lin_back!(&dq, &c.a, wq, bq, Proj::Query, c.uq);
        da += &lin_back!(&dk, &c.a, wk, bk, Proj::Key, c.uk);
        da += &lin_back!(&dv, &c.a, wv, bv, Proj::Value, c.uv);
        let din_ln = match gl.as_mut() {
            Some(g) => layer_norm_backward(&da, &lp.ln1_g, &c.ln1, Some((&mut g.ln1_g, &mut g.ln1_b))),
            None => layer_norm_backward(&da, &lp.ln1_g, &c.ln1, None),
        };
        debug_assert_eq!(c.x_in.dim(), din_ln.dim());
        dx = dmid + &din_ln;
    }

    if let Some(g) = gb.as_mut() {
        for i in 0..t {
            let src = dx.row(i);
            let mut r = g.tok_emb.row_mut(seq.tokens[i] as usize);
            r += &src;
            let mut r = g.pos_emb.row_mut(seq.positions[i]);
            r += &src;
        }
    }
    Ok((
        loss,
        Grads {
            base: gb,
            adapter: ga,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::LmConfig;

    fn tiny() -> LmParams {
        LmParams::init(
            LmConfig {
                n_layers: 2,
                n_heads: 2,
                embed_dim: 8,
                mlp_dim: 16,
                context_len: 16,
                vocab_size: 11,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn single_token_shape() {
        let p = tiny();
        let l = forward(&p, &[4]).unwrap();
        assert_eq!(l.dim(), (1, 11));
        assert!(l.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = tiny();
        assert!(matches!(forward(&p, &[11]), Err(LmError::InvalidToken { .. })));
        assert!(matches!(forward(&p, &[1; 17]), Err(LmError::SequenceTooLong { .. })));
    }

    #[test]
    fn softmax_cases() {
        let p = next_token_distribution(&[0.3; 4]);
        assert!(p.iter().all(|x| (x - 0.25).abs() < 1e-15));
        let p = next_token_distribution(&[1f64.ln(), 2f64.ln(), 3f64.ln()]);
        for (got, want) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        let shifted = next_token_distribution(&[1f64.ln() + 50.0, 2f64.ln() + 50.0, 3f64.ln() + 50.0]);
        for (a, b) in p.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-12);
        }
        let big = next_token_distribution(&[1000.0, 0.0]);
        assert!((big.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sampling() {
        assert_eq!(sample_token(&[0.0, 1.0, 0.0], 17), 1);
        assert_eq!(sample_token(&[0.2, 0.3, 0.5], 5), sample_token(&[0.2, 0.3, 0.5], 5));
        let n = 10_000;
        let ones = (0..n).filter(|s| sample_token(&[0.5, 0.5], *s as u64) == 1).count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((ones - n as f64 / 2.0).abs() < 3.0 * sigma, "{ones}");
    }

    #[test]
    fn yes_no_cases() {
        assert_eq!(yes_no_probability(1.5, 1.5), 0.5);
        let p = yes_no_probability(2.0, 0.0);
        assert!((p - 0.880_797_077_977_882_4).abs() < 1e-12);
        assert!((yes_no_probability(40.0, 0.0) - 1.0).abs() < 1e-12);
        assert_eq!(yes_no_probability(1000.0, -1000.0), 1.0);
        assert_eq!(yes_no_probability(-1000.0, 1000.0), 0.0);
    }

    #[test]
    fn packed_matches_separate_runs() {
        use crate::lm::pack::PrefixTrie;
        let p = tiny();
        let seqs: Vec<Vec<u32>> = vec![vec![2, 5, 6, 7, 8], vec![2, 5, 6, 9], vec![2, 5, 6, 7, 10, 4]];
        let mut trie = PrefixTrie::new();
        let nodes: Vec<Vec<usize>> = seqs.iter().map(|s| trie.insert(s)).collect();
        let packed = trie.finish();
        for (s, n) in seqs.iter().zip(&nodes) {
            let alone = forward(&p, s).unwrap();
            let together = forward_packed(&p, None, &packed, n).unwrap();
            for (a, b) in alone.iter().zip(together.iter()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}
