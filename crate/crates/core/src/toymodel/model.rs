//! Forward pass and analytic backward pass of the toy transformer.
//!
//! Each block is post-norm:
//!
//! ```text
//! H~   = LayerNorm(H + MHA(H))
//! H'   = LayerNorm(H + FF(H~))
//! ```
//!
//! with causal multi-head attention and a tanh-approximated GELU in the
//! feed-forward layer. Token and position embeddings feed the first block;
//! a linear head maps the last block's output to vocabulary logits.

use nalgebra::DMatrix;

use super::params::{BlockParams, Checkpoint, Params, ToyConfig};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Adds a `1 x n` row to every row of `m`.
fn add_row(m: &mut DMatrix<f64>, row: &DMatrix<f64>) {
    for mut r in m.row_iter_mut() {
        r += row.row(0);
    }
}

fn column_sums(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(1, m.ncols(), |_, j| m.column(j).sum())
}

struct NormCache {
    normalized: DMatrix<f64>,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &DMatrix<f64>, gain: &DMatrix<f64>, bias: &DMatrix<f64>) -> (DMatrix<f64>, NormCache) {
    let (t, d) = x.shape();
    let mut normalized = DMatrix::zeros(t, d);
    let mut inv_std = Vec::with_capacity(t);
    for i in 0..t {
        let row = x.row(i);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        for j in 0..d {
            normalized[(i, j)] = (x[(i, j)] - mean) * s;
        }
        inv_std.push(s);
    }
    let mut y = normalized.clone();
    for i in 0..t {
        for j in 0..d {
            y[(i, j)] = y[(i, j)] * gain[(0, j)] + bias[(0, j)];
        }
    }
    (y, NormCache { normalized, inv_std })
}

/// Returns `(dx, dgain, dbias)`.
fn layer_norm_backward(
    dy: &DMatrix<f64>,
    cache: &NormCache,
    gain: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (t, d) = dy.shape();
    let xhat = &cache.normalized;
    let dgain = DMatrix::from_fn(1, d, |_, j| (0..t).map(|i| dy[(i, j)] * xhat[(i, j)]).sum());
    let dbias = column_sums(dy);
    let mut dx = DMatrix::zeros(t, d);
    for i in 0..t {
        let dxhat: Vec<f64> = (0..d).map(|j| dy[(i, j)] * gain[(0, j)]).collect();
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = (0..d).map(|j| dxhat[j] * xhat[(i, j)]).sum::<f64>() / d as f64;
        for j in 0..d {
            dx[(i, j)] = cache.inv_std[i] * (dxhat[j] - mean_dxhat - xhat[(i, j)] * mean_dxhat_xhat);
        }
    }
    (dx, dgain, dbias)
}

struct BlockCache {
    input: DMatrix<f64>,
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    v: DMatrix<f64>,
    probs: Vec<DMatrix<f64>>,
    attn: DMatrix<f64>,
    ln1: NormCache,
    mid: DMatrix<f64>,
    ff_pre: DMatrix<f64>,
    ff_act: DMatrix<f64>,
    ln2: NormCache,
}

fn block_forward(h: &DMatrix<f64>, p: &BlockParams, config: &ToyConfig) -> (DMatrix<f64>, BlockCache) {
    let t = h.nrows();
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let q = h * &p.w_q;
    let k = h * &p.w_k;
    let v = h * &p.w_v;
    let mut attn = DMatrix::zeros(t, config.hidden_size);
    let mut probs = Vec::with_capacity(config.num_heads);
    for head in 0..config.num_heads {
        let c0 = head * dh;
        let qh = q.columns(c0, dh);
        let kh = k.columns(c0, dh);
        let vh = v.columns(c0, dh);
        let mut scores = qh * kh.transpose() * scale;
        for i in 0..t {
            let max = (0..=i).map(|j| scores[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..t {
                let e = if j <= i { (scores[(i, j)] - max).exp() } else { 0.0 };
                scores[(i, j)] = e;
                z += e;
            }
            for j in 0..=i {
                scores[(i, j)] /= z;
            }
        }
        attn.columns_mut(c0, dh).copy_from(&(&scores * vh));
        probs.push(scores);
    }

    let r1 = h + &attn * &p.w_o;
    let (mid, ln1) = layer_norm(&r1, &p.ln1_gain, &p.ln1_bias);

    let mut ff_pre = &mid * &p.w_ff1;
    add_row(&mut ff_pre, &p.b_ff1);
    let ff_act = ff_pre.map(gelu);
    let mut ff_out = &ff_act * &p.w_ff2;
    add_row(&mut ff_out, &p.b_ff2);

    let r2 = h + ff_out;
    let (out, ln2) = layer_norm(&r2, &p.ln2_gain, &p.ln2_bias);

    (
        out,
        BlockCache {
            input: h.clone(),
            q,
            k,
            v,
            probs,
            attn,
            ln1,
            mid,
            ff_pre,
            ff_act,
            ln2,
        },
    )
}

/// Accumulates parameter gradients into `g` and returns `dL/dH`.
fn block_backward(
    dout: &DMatrix<f64>,
    cache: &BlockCache,
    p: &BlockParams,
    g: &mut BlockParams,
    config: &ToyConfig,
) -> DMatrix<f64> {
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let (dr2, dgain2, dbias2) = layer_norm_backward(dout, &cache.ln2, &p.ln2_gain);
    g.ln2_gain += dgain2;
    g.ln2_bias += dbias2;
    let mut dh_total = dr2.clone();

    g.w_ff2 += cache.ff_act.transpose() * &dr2;
    g.b_ff2 += column_sums(&dr2);
    let dact = &dr2 * p.w_ff2.transpose();
    let dpre = dact.zip_map(&cache.ff_pre, |da, x| da * gelu_grad(x));
    g.w_ff1 += cache.mid.transpose() * &dpre;
    g.b_ff1 += column_sums(&dpre);
    let dmid = &dpre * p.w_ff1.transpose();

    let (dr1, dgain1, dbias1) = layer_norm_backward(&dmid, &cache.ln1, &p.ln1_gain);
    g.ln1_gain += dgain1;
    g.ln1_bias += dbias1;
    dh_total += &dr1;

    g.w_o += cache.attn.transpose() * &dr1;
    let dattn = &dr1 * p.w_o.transpose();

    let (t, d) = cache.input.shape();
    let mut dq = DMatrix::zeros(t, d);
    let mut dk = DMatrix::zeros(t, d);
    let mut dv = DMatrix::zeros(t, d);
    for head in 0..config.num_heads {
        let c0 = head * dh;
        let probs = &cache.probs[head];
        let dattn_h = dattn.columns(c0, dh);
        let dprobs = dattn_h * cache.v.columns(c0, dh).transpose();
        dv.columns_mut(c0, dh).copy_from(&(probs.transpose() * dattn_h));
        let mut dscores = DMatrix::zeros(t, t);
        for i in 0..t {
            let dot: f64 = (0..=i).map(|j| dprobs[(i, j)] * probs[(i, j)]).sum();
            for j in 0..=i {
                dscores[(i, j)] = probs[(i, j)] * (dprobs[(i, j)] - dot) * scale;
            }
        }
        dq.columns_mut(c0, dh).copy_from(&(&dscores * cache.k.columns(c0, dh)));
        dk.columns_mut(c0, dh).copy_from(&(dscores.transpose() * cache.q.columns(c0, dh)));
    }
    let input_t = cache.input.transpose();
    g.w_q += &input_t * &dq;
    g.w_k += &input_t * &dk;
    g.w_v += &input_t * &dv;
    dh_total += dq * p.w_q.transpose() + dk * p.w_k.transpose() + dv * p.w_v.transpose();
    dh_total
}

/// Everything the backward pass needs from one forward pass.
pub(crate) struct Trace {
    tokens: Vec<usize>,
    blocks: Vec<BlockCache>,
    /// Output of every block, `T x d`.
    pub hidden: Vec<DMatrix<f64>>,
    /// `T x V`.
    pub logits: DMatrix<f64>,
}

/// Runs the model on one token sequence. Token ids must already be
/// validated against the vocabulary and `seq_len`.
pub(crate) fn forward(ckpt: &Checkpoint, tokens: &[usize]) -> Trace {
    let p = &ckpt.params;
    let t = tokens.len();
    let mut h = DMatrix::from_fn(t, ckpt.config.hidden_size, |i, j| {
        p.token_embedding[(tokens[i], j)] + p.position_embedding[(i, j)]
    });
    let mut blocks = Vec::with_capacity(p.blocks.len());
    let mut hidden = Vec::with_capacity(p.blocks.len());
    for bp in &p.blocks {
        let (out, cache) = block_forward(&h, bp, &ckpt.config);
        blocks.push(cache);
        hidden.push(out.clone());
        h = out;
    }
    let mut logits = &h * &p.head_weight;
    add_row(&mut logits, &p.head_bias);
    Trace {
        tokens: tokens.to_vec(),
        blocks,
        hidden,
        logits,
    }
}

/// Backpropagates `dlogits` (`T x V`) through `trace`, accumulating into
/// `grads`.
pub(crate) fn backward(ckpt: &Checkpoint, trace: &Trace, dlogits: &DMatrix<f64>, grads: &mut Params) {
    let p = &ckpt.params;
    let last = trace.hidden.last().expect("at least one block");
    grads.head_weight += last.transpose() * dlogits;
    grads.head_bias += column_sums(dlogits);
    let mut dh = dlogits * p.head_weight.transpose();
    for l in (0..p.blocks.len()).rev() {
        dh = block_backward(&dh, &trace.blocks[l], &p.blocks[l], &mut grads.blocks[l], &ckpt.config);
    }
    for (i, &tok) in trace.tokens.iter().enumerate() {
        let row = dh.row(i);
        let mut te = grads.token_embedding.row_mut(tok);
        te += row;
        let mut pe = grads.position_embedding.row_mut(i);
        pe += row;
    }
}

/// Row-wise log-softmax of one logits row.
pub(crate) fn log_softmax_row(logits: &DMatrix<f64>, row: usize) -> Vec<f64> {
    let r = logits.row(row);
    let max = r.max();
    let lse = max + r.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    r.iter().map(|v| v - lse).collect()
}
