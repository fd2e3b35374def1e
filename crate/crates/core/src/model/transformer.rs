//! Forward pass with activation caches, manual backward pass, loss and greedy
//! decoding. One example is processed at a time; batch gradients are summed in
//! example order so results do not depend on scheduling.

use super::linalg::{add_into, matmul, matmul_backward, rms_norm, rms_norm_backward, Scalar};
use super::{AttnIdx, ModelConfig, ModelError, ModelParams};
use crate::tokenizer::{EOS_ID, PAD_ID};

/// Bucket for `rel = key_pos - query_pos`. Half the range is exact, the rest
/// is log-spaced up to `max_distance`. Bidirectional buckets split the range
/// between past and future keys.
pub fn relative_bucket(rel: i64, bidirectional: bool, num_buckets: usize, max_distance: usize) -> usize {
    let mut nb = num_buckets as i64;
    let mut ret = 0i64;
    let mut n = -rel;
    if bidirectional {
        nb /= 2;
        if n < 0 {
            ret += nb;
        }
        n = n.abs();
    } else {
        n = n.max(0);
    }
    let max_exact = nb / 2;
    if n < max_exact {
        return (ret + n) as usize;
    }
    let scaled = (n as f64 / max_exact as f64).ln() / (max_distance as f64 / max_exact as f64).ln() * (nb - max_exact) as f64;
    let large = (max_exact + scaled as i64).min(nb - 1);
    (ret + large) as usize
}

/// Batch of logits, row-major `batch × len × vocab`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<T> {
    pub batch: usize,
    pub len: usize,
    pub vocab: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Logits<T> {
    pub fn row(&self, b: usize, t: usize) -> &[T] {
        let start = (b * self.len + t) * self.vocab;
        &self.data[start..start + self.vocab]
    }
}

struct AttnCache<T> {
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    o: Vec<T>,
}

/// Static structure of one attention call: sizes, which key each query may
/// see, and optional relative-bias buckets.
struct AttnShape<'a> {
    tq: usize,
    tk: usize,
    allowed: &'a [bool],
    bias: Option<(usize, &'a [usize])>,
}

fn attend<T: Scalar>(p: &[T], w: &AttnIdx, cfg: &ModelConfig, xq: &[T], xkv: &[T], s: &AttnShape) -> (Vec<T>, AttnCache<T>) {
    let (d, h, dk) = (cfg.d_model, cfg.num_heads, cfg.d_kv());
    let (tq, tk) = (s.tq, s.tk);
    let dd = d * d;
    let q = matmul(xq, &p[w.q..w.q + dd], tq, d, d);
    let k = matmul(xkv, &p[w.k..w.k + dd], tk, d, d);
    let v = matmul(xkv, &p[w.v..w.v + dd], tk, d, d);
    let mut probs = vec![T::zero(); h * tq * tk];
    let mut o = vec![T::zero(); tq * d];
    let di = d as isize;
    for head in 0..h {
        let ph = &mut probs[head * tq * tk..(head + 1) * tq * tk];
        T::gemm(tq, dk, tk, T::one(), &q[head * dk..], (di, 1), &k[head * dk..], (1, di), T::zero(), ph, (tk as isize, 1));
        for i in 0..tq {
            let row = &mut ph[i * tk..(i + 1) * tk];
            let allowed = &s.allowed[i * tk..(i + 1) * tk];
            if let Some((table, buckets)) = s.bias {
                for j in 0..tk {
                    row[j] += p[table + buckets[i * tk + j] * h + head];
                }
            }
            softmax_masked(row, allowed);
        }
        T::gemm(tq, tk, dk, T::one(), ph, (tk as isize, 1), &v[head * dk..], (di, 1), T::zero(), &mut o[head * dk..], (di, 1));
    }
    let out = matmul(&o, &p[w.o..w.o + dd], tq, d, d);
    (out, AttnCache { q, k, v, probs, o })
}

/// Softmax over allowed entries; disallowed entries become exactly 0. A row
/// with nothing allowed is all zeros.
fn softmax_masked<T: Scalar>(row: &mut [T], allowed: &[bool]) {
    let mut max = T::neg_infinity();
    for (x, &a) in row.iter().zip(allowed) {
        if a && *x > max {
            max = *x;
        }
    }
    let mut sum = T::zero();
    for (x, &a) in row.iter_mut().zip(allowed) {
        *x = if a { (*x - max).exp() } else { T::zero() };
        sum += *x;
    }
    if sum > T::zero() {
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
}

/// Returns gradients w.r.t. the query-side and key/value-side inputs.
#[allow(clippy::too_many_arguments)]
fn attend_backward<T: Scalar>(
    p: &[T],
    g: &mut [T],
    w: &AttnIdx,
    cfg: &ModelConfig,
    xq: &[T],
    xkv: &[T],
    s: &AttnShape,
    c: &AttnCache<T>,
    dout: &[T],
) -> (Vec<T>, Vec<T>) {
    let (d, h, dk) = (cfg.d_model, cfg.num_heads, cfg.d_kv());
    let (tq, tk) = (s.tq, s.tk);
    let dd = d * d;
    let di = d as isize;
    let mut d_o = vec![T::zero(); tq * d];
    matmul_backward(&c.o, &p[w.o..w.o + dd], dout, tq, d, d, &mut d_o, &mut g[w.o..w.o + dd]);
    let mut dq = vec![T::zero(); tq * d];
    let mut dkm = vec![T::zero(); tk * d];
    let mut dv = vec![T::zero(); tk * d];
    let mut ds = vec![T::zero(); tq * tk];
    for head in 0..h {
        let ph = &c.probs[head * tq * tk..(head + 1) * tq * tk];
        T::gemm(tq, dk, tk, T::one(), &d_o[head * dk..], (di, 1), &c.v[head * dk..], (1, di), T::zero(), &mut ds, (tk as isize, 1));
        T::gemm(tk, tq, dk, T::one(), ph, (1, tk as isize), &d_o[head * dk..], (di, 1), T::one(), &mut dv[head * dk..], (di, 1));
        for i in 0..tq {
            let pr = &ph[i * tk..(i + 1) * tk];
            let dr = &mut ds[i * tk..(i + 1) * tk];
            let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
            for j in 0..tk {
                dr[j] = pr[j] * (dr[j] - dot);
            }
            if let Some((table, buckets)) = s.bias {
                for j in 0..tk {
                    g[table + buckets[i * tk + j] * h + head] += dr[j];
                }
            }
        }
        T::gemm(tq, tk, dk, T::one(), &ds, (tk as isize, 1), &c.k[head * dk..], (di, 1), T::one(), &mut dq[head * dk..], (di, 1));
        T::gemm(tk, tq, dk, T::one(), &ds, (1, tk as isize), &c.q[head * dk..], (di, 1), T::one(), &mut dkm[head * dk..], (di, 1));
    }
    let mut dxq = vec![T::zero(); tq * d];
    matmul_backward(xq, &p[w.q..w.q + dd], &dq, tq, d, d, &mut dxq, &mut g[w.q..w.q + dd]);
    let mut dxkv = vec![T::zero(); tk * d];
    matmul_backward(xkv, &p[w.k..w.k + dd], &dkm, tk, d, d, &mut dxkv, &mut g[w.k..w.k + dd]);
    matmul_backward(xkv, &p[w.v..w.v + dd], &dv, tk, d, d, &mut dxkv, &mut g[w.v..w.v + dd]);
    (dxq, dxkv)
}

/// ReLU feed-forward. Returns the post-activation hidden layer and the output.
fn ffn<T: Scalar>(p: &[T], wi: usize, wo: usize, x: &[T], rows: usize, d: usize, f: usize) -> (Vec<T>, Vec<T>) {
    let mut hid = matmul(x, &p[wi..wi + d * f], rows, d, f);
    for v in hid.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    let out = matmul(&hid, &p[wo..wo + f * d], rows, f, d);
    (hid, out)
}

#[allow(clippy::too_many_arguments)]
fn ffn_backward<T: Scalar>(p: &[T], g: &mut [T], wi: usize, wo: usize, x: &[T], hid: &[T], dout: &[T], rows: usize, d: usize, f: usize) -> Vec<T> {
    let mut dh = vec![T::zero(); rows * f];
    matmul_backward(hid, &p[wo..wo + f * d], dout, rows, f, d, &mut dh, &mut g[wo..wo + f * d]);
    for (dv, &hv) in dh.iter_mut().zip(hid) {
        if hv <= T::zero() {
            *dv = T::zero();
        }
    }
    let mut dx = vec![T::zero(); rows * d];
    matmul_backward(x, &p[wi..wi + d * f], &dh, rows, d, f, &mut dx, &mut g[wi..wi + d * f]);
    dx
}

fn embed<T: Scalar>(p: &[T], table: usize, ids: &[u32], d: usize) -> Vec<T> {
    let mut x = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        let start = table + id as usize * d;
        x.extend_from_slice(&p[start..start + d]);
    }
    x
}

fn residual<T: Scalar>(x: &[T], delta: &[T]) -> Vec<T> {
    let mut out = x.to_vec();
    add_into(&mut out, delta);
    out
}

struct EncLayerCache<T> {
    x_in: Vec<T>,
    n1: Vec<T>,
    r1: Vec<T>,
    attn: AttnCache<T>,
    x_mid: Vec<T>,
    n2: Vec<T>,
    r2: Vec<T>,
    hid: Vec<T>,
}

/// Encoder activations for one sequence. `out` is the final normalized
/// hidden state (`len × d_model`).
pub struct EncoderState<T> {
    ids: Vec<u32>,
    key_mask: Vec<bool>,
    allowed: Vec<bool>,
    buckets: Vec<usize>,
    layers: Vec<EncLayerCache<T>>,
    final_in: Vec<T>,
    final_inv: Vec<T>,
    pub out: Vec<T>,
}

/// Runs the encoder over one sequence. Pad keys are masked everywhere.
pub fn encode<T: Scalar>(m: &ModelParams<T>, ids: &[u32]) -> EncoderState<T> {
    let (cfg, lay, p) = (&m.config, &m.layout, &m.data[..]);
    let (t, d) = (ids.len(), cfg.d_model);
    let key_mask: Vec<bool> = ids.iter().map(|&i| i != PAD_ID).collect();
    let allowed: Vec<bool> = (0..t * t).map(|ij| key_mask[ij % t]).collect();
    let buckets: Vec<usize> = (0..t * t)
        .map(|ij| relative_bucket((ij % t) as i64 - (ij / t) as i64, true, cfg.num_rel_buckets, cfg.max_rel_distance))
        .collect();
    let shape = AttnShape { tq: t, tk: t, allowed: &allowed, bias: Some((lay.enc_bias, &buckets)) };
    let mut x = embed(p, lay.embedding, ids, d);
    let mut layers = Vec::with_capacity(lay.enc_layers.len());
    for li in &lay.enc_layers {
        let (n1, r1) = rms_norm(&x, &p[li.attn_norm..li.attn_norm + d], d);
        let (a, attn) = attend(p, &li.attn, cfg, &n1, &n1, &shape);
        let x_mid = residual(&x, &a);
        let (n2, r2) = rms_norm(&x_mid, &p[li.ffn_norm..li.ffn_norm + d], d);
        let (hid, f) = ffn(p, li.wi, li.wo, &n2, t, d, cfg.d_ff);
        let x_out = residual(&x_mid, &f);
        layers.push(EncLayerCache { x_in: x, n1, r1, attn, x_mid, n2, r2, hid });
        x = x_out;
    }
    let (out, final_inv) = rms_norm(&x, &p[lay.enc_final..lay.enc_final + d], d);
    EncoderState { ids: ids.to_vec(), key_mask, allowed, buckets, layers, final_in: x, final_inv, out }
}

fn encode_backward<T: Scalar>(m: &ModelParams<T>, st: &EncoderState<T>, d_out: &[T], g: &mut [T]) {
    let (cfg, lay, p) = (&m.config, &m.layout, &m.data[..]);
    let (t, d) = (st.ids.len(), cfg.d_model);
    let shape = AttnShape { tq: t, tk: t, allowed: &st.allowed, bias: Some((lay.enc_bias, &st.buckets)) };
    let mut dx = vec![T::zero(); t * d];
    let fin = lay.enc_final;
    rms_norm_backward(&st.final_in, &p[fin..fin + d], &st.final_inv, d_out, d, &mut dx, &mut g[fin..fin + d]);
    for (li, c) in lay.enc_layers.iter().zip(&st.layers).rev() {
        let dn2 = ffn_backward(p, g, li.wi, li.wo, &c.n2, &c.hid, &dx, t, d, cfg.d_ff);
        let mut dmid = dx;
        rms_norm_backward(&c.x_mid, &p[li.ffn_norm..li.ffn_norm + d], &c.r2, &dn2, d, &mut dmid, &mut g[li.ffn_norm..li.ffn_norm + d]);
        let (mut dn1, dkv) = attend_backward(p, g, &li.attn, cfg, &c.n1, &c.n1, &shape, &c.attn, &dmid);
        add_into(&mut dn1, &dkv);
        let mut din = dmid;
        rms_norm_backward(&c.x_in, &p[li.attn_norm..li.attn_norm + d], &c.r1, &dn1, d, &mut din, &mut g[li.attn_norm..li.attn_norm + d]);
        dx = din;
    }
    scatter_embedding(g, lay.embedding, &st.ids, &dx, d);
}

fn scatter_embedding<T: Scalar>(g: &mut [T], table: usize, ids: &[u32], dx: &[T], d: usize) {
    for (t, &id) in ids.iter().enumerate() {
        let start = table + id as usize * d;
        add_into(&mut g[start..start + d], &dx[t * d..(t + 1) * d]);
    }
}

struct DecLayerCache<T> {
    x_in: Vec<T>,
    n1: Vec<T>,
    r1: Vec<T>,
    self_attn: AttnCache<T>,
    x1: Vec<T>,
    n2: Vec<T>,
    r2: Vec<T>,
    cross: AttnCache<T>,
    x2: Vec<T>,
    n3: Vec<T>,
    r3: Vec<T>,
    hid: Vec<T>,
}

/// Decoder activations for one sequence. `out` is the final normalized
/// hidden state before the tied output projection.
pub struct DecoderState<T> {
    ids: Vec<u32>,
    self_allowed: Vec<bool>,
    buckets: Vec<usize>,
    cross_allowed: Vec<bool>,
    layers: Vec<DecLayerCache<T>>,
    final_in: Vec<T>,
    final_inv: Vec<T>,
    pub out: Vec<T>,
}

/// Runs the decoder stack over decoder-input ids against an encoded source.
/// Self-attention is causal; decoder-side pads are not masked because causal
/// masking already keeps them out of earlier positions.
pub fn decode_hidden<T: Scalar>(m: &ModelParams<T>, enc: &EncoderState<T>, ids: &[u32]) -> DecoderState<T> {
    let (cfg, lay, p) = (&m.config, &m.layout, &m.data[..]);
    let (t, s, d) = (ids.len(), enc.ids.len(), cfg.d_model);
    let self_allowed: Vec<bool> = (0..t * t).map(|ij| ij % t <= ij / t).collect();
    let buckets: Vec<usize> = (0..t * t)
        .map(|ij| relative_bucket((ij % t) as i64 - (ij / t) as i64, false, cfg.num_rel_buckets, cfg.max_rel_distance))
        .collect();
    let cross_allowed: Vec<bool> = (0..t * s).map(|ij| enc.key_mask[ij % s]).collect();
    let self_shape = AttnShape { tq: t, tk: t, allowed: &self_allowed, bias: Some((lay.dec_bias, &buckets)) };
    let cross_shape = AttnShape { tq: t, tk: s, allowed: &cross_allowed, bias: None };
    let mut x = embed(p, lay.embedding, ids, d);
    let mut layers = Vec::with_capacity(lay.dec_layers.len());
    for li in &lay.dec_layers {
        let (n1, r1) = rms_norm(&x, &p[li.self_norm..li.self_norm + d], d);
        let (a, self_attn) = attend(p, &li.self_attn, cfg, &n1, &n1, &self_shape);
        let x1 = residual(&x, &a);
        let (n2, r2) = rms_norm(&x1, &p[li.cross_norm..li.cross_norm + d], d);
        let (cx, cross) = attend(p, &li.cross_attn, cfg, &n2, &enc.out, &cross_shape);
        let x2 = residual(&x1, &cx);
        let (n3, r3) = rms_norm(&x2, &p[li.ffn_norm..li.ffn_norm + d], d);
        let (hid, f) = ffn(p, li.wi, li.wo, &n3, t, d, cfg.d_ff);
        let x_out = residual(&x2, &f);
        layers.push(DecLayerCache { x_in: x, n1, r1, self_attn, x1, n2, r2, cross, x2, n3, r3, hid });
        x = x_out;
    }
    let (out, final_inv) = rms_norm(&x, &p[lay.dec_final..lay.dec_final + d], d);
    DecoderState { ids: ids.to_vec(), self_allowed, buckets, cross_allowed, layers, final_in: x, final_inv, out }
}

/// Returns the gradient w.r.t. the encoder output.
fn decode_backward<T: Scalar>(m: &ModelParams<T>, enc: &EncoderState<T>, st: &DecoderState<T>, d_out: &[T], g: &mut [T]) -> Vec<T> {
    let (cfg, lay, p) = (&m.config, &m.layout, &m.data[..]);
    let (t, s, d) = (st.ids.len(), enc.ids.len(), cfg.d_model);
    let self_shape = AttnShape { tq: t, tk: t, allowed: &st.self_allowed, bias: Some((lay.dec_bias, &st.buckets)) };
    let cross_shape = AttnShape { tq: t, tk: s, allowed: &st.cross_allowed, bias: None };
    let mut d_enc = vec![T::zero(); s * d];
    let mut dx = vec![T::zero(); t * d];
    let fin = lay.dec_final;
    rms_norm_backward(&st.final_in, &p[fin..fin + d], &st.final_inv, d_out, d, &mut dx, &mut g[fin..fin + d]);
    for (li, c) in lay.dec_layers.iter().zip(&st.layers).rev() {
        let dn3 = ffn_backward(p, g, li.wi, li.wo, &c.n3, &c.hid, &dx, t, d, cfg.d_ff);
        let mut dx2 = dx;
        rms_norm_backward(&c.x2, &p[li.ffn_norm..li.ffn_norm + d], &c.r3, &dn3, d, &mut dx2, &mut g[li.ffn_norm..li.ffn_norm + d]);
        let (dn2, de) = attend_backward(p, g, &li.cross_attn, cfg, &c.n2, &enc.out, &cross_shape, &c.cross, &dx2);
        add_into(&mut d_enc, &de);
        let mut dx1 = dx2;
        rms_norm_backward(&c.x1, &p[li.cross_norm..li.cross_norm + d], &c.r2, &dn2, d, &mut dx1, &mut g[li.cross_norm..li.cross_norm + d]);
        let (mut dn1, dkv) = attend_backward(p, g, &li.self_attn, cfg, &c.n1, &c.n1, &self_shape, &c.self_attn, &dx1);
        add_into(&mut dn1, &dkv);
        let mut din = dx1;
        rms_norm_backward(&c.x_in, &p[li.self_norm..li.self_norm + d], &c.r1, &dn1, d, &mut din, &mut g[li.self_norm..li.self_norm + d]);
        dx = din;
    }
    scatter_embedding(g, lay.embedding, &st.ids, &dx, d);
    d_enc
}

/// Tied output projection `(h · d^-1/2) Eᵀ` for `rows` consecutive rows of
/// `hidden` starting at `first`.
fn project<T: Scalar>(m: &ModelParams<T>, hidden: &[T], first: usize, rows: usize) -> Vec<T> {
    let (d, v) = (m.config.d_model, m.config.vocab_size);
    let e = &m.data[m.layout.embedding..m.layout.embedding + v * d];
    let scale = T::from_f64((d as f64).powf(-0.5));
    let mut out = vec![T::zero(); rows * v];
    T::gemm(rows, d, v, scale, &hidden[first * d..], (d as isize, 1), e, (1, d as isize), T::zero(), &mut out, (v as isize, 1));
    out
}

fn project_backward<T: Scalar>(m: &ModelParams<T>, hidden: &[T], dlogits: &[T], rows: usize, g: &mut [T]) -> Vec<T> {
    let (d, v) = (m.config.d_model, m.config.vocab_size);
    let range = m.layout.embedding..m.layout.embedding + v * d;
    let scale = T::from_f64((d as f64).powf(-0.5));
    let mut dh = vec![T::zero(); rows * d];
    T::gemm(rows, v, d, scale, dlogits, (v as isize, 1), &m.data[range.clone()], (d as isize, 1), T::zero(), &mut dh, (d as isize, 1));
    T::gemm(v, rows, d, scale, dlogits, (1, v as isize), hidden, (d as isize, 1), T::one(), &mut g[range], (d as isize, 1));
    dh
}

fn check_batch<T: Scalar>(m: &ModelParams<T>, enc: &[Vec<u32>], dec: &[Vec<u32>]) -> Result<(usize, usize), ModelError> {
    if enc.len() != dec.len() {
        return Err(ModelError::ShapeMismatch(format!("{} encoder rows vs {} decoder rows", enc.len(), dec.len())));
    }
    let rect = |rows: &[Vec<u32>], what: &str| -> Result<usize, ModelError> {
        let len = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != len) {
            return Err(ModelError::ShapeMismatch(format!("{what} rows differ in length")));
        }
        if !rows.is_empty() && len == 0 {
            return Err(ModelError::ShapeMismatch(format!("{what} rows are empty")));
        }
        Ok(len)
    };
    rect(enc, "encoder")?;
    let dec_len = rect(dec, "decoder")?;
    let vocab_size = m.config.vocab_size;
    if let Some(&id) = enc.iter().chain(dec).flatten().find(|&&id| id as usize >= vocab_size) {
        return Err(ModelError::IdOutOfRange { id, vocab_size });
    }
    Ok((enc.len(), dec_len))
}

/// Logits for a batch of equal-length encoder rows and equal-length decoder
/// input rows.
pub fn forward<T: Scalar>(m: &ModelParams<T>, enc: &[Vec<u32>], dec: &[Vec<u32>]) -> Result<Logits<T>, ModelError> {
    let (batch, len) = check_batch(m, enc, dec)?;
    let vocab = m.config.vocab_size;
    let mut data = Vec::with_capacity(batch * len * vocab);
    for (e, di) in enc.iter().zip(dec) {
        let es = encode(m, e);
        let ds = decode_hidden(m, &es, di);
        data.extend(project(m, &ds.out, 0, len));
    }
    Ok(Logits { batch, len, vocab, data })
}

fn check_targets(batch: usize, len: usize, targets: &[Vec<u32>]) -> Result<(), ModelError> {
    if targets.len() != batch || targets.iter().any(|t| t.len() != len) {
        return Err(ModelError::ShapeMismatch(format!("targets must be {batch} rows of {len}")));
    }
    Ok(())
}

/// Log-sum-exp of a row, stabilized by its maximum.
fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln()
}

/// Mean token cross-entropy over non-pad targets; 0 when every target is pad.
pub fn loss<T: Scalar>(logits: &Logits<T>, targets: &[Vec<u32>]) -> Result<T, ModelError> {
    check_targets(logits.batch, logits.len, targets)?;
    let mut total = T::zero();
    let mut count = 0usize;
    for (b, row) in targets.iter().enumerate() {
        for (t, &y) in row.iter().enumerate() {
            if y == PAD_ID {
                continue;
            }
            if y as usize >= logits.vocab {
                return Err(ModelError::IdOutOfRange { id: y, vocab_size: logits.vocab });
            }
            let l = logits.row(b, t);
            total += log_sum_exp(l) - l[y as usize];
            count += 1;
        }
    }
    Ok(if count == 0 { T::zero() } else { total / T::from_f64(count as f64) })
}

#[derive(Debug, Clone)]
pub struct LossAndGrad<T> {
    pub loss: T,
    /// Gradient in the flat parameter layout.
    pub grad: Vec<T>,
    pub tokens: usize,
}

/// Teacher-forced loss and its gradient for a batch.
pub fn loss_and_grad<T: Scalar>(m: &ModelParams<T>, enc: &[Vec<u32>], dec: &[Vec<u32>], targets: &[Vec<u32>]) -> Result<LossAndGrad<T>, ModelError> {
    let (batch, len) = check_batch(m, enc, dec)?;
    check_targets(batch, len, targets)?;
    let vocab = m.config.vocab_size;
    if let Some(&id) = targets.iter().flatten().find(|&&id| id as usize >= vocab) {
        return Err(ModelError::IdOutOfRange { id, vocab_size: vocab });
    }
    let tokens = targets.iter().flatten().filter(|&&y| y != PAD_ID).count();
    let mut grad = vec![T::zero(); m.data.len()];
    if tokens == 0 {
        return Ok(LossAndGrad { loss: T::zero(), grad, tokens });
    }
    let inv_n = T::one() / T::from_f64(tokens as f64);
    let mut total = T::zero();
    for ((e, di), tgt) in enc.iter().zip(dec).zip(targets) {
        // Trailing encoder pads are masked keys and trailing pad targets
        // carry no loss; causality makes dropping both exact.
        let Some(dec_len) = tgt.iter().rposition(|&y| y != PAD_ID).map(|i| i + 1) else {
            continue;
        };
        let enc_len = e.iter().rposition(|&x| x != PAD_ID).map_or(1, |i| i + 1);
        let es = encode(m, &e[..enc_len]);
        let ds = decode_hidden(m, &es, &di[..dec_len]);
        let mut dl = project(m, &ds.out, 0, dec_len);
        for (t, &y) in tgt[..dec_len].iter().enumerate() {
            let row = &mut dl[t * vocab..(t + 1) * vocab];
            if y == PAD_ID {
                row.fill(T::zero());
                continue;
            }
            let lse = log_sum_exp(row);
            total += lse - row[y as usize];
            for x in row.iter_mut() {
                *x = (*x - lse).exp() * inv_n;
            }
            row[y as usize] -= inv_n;
        }
        let d_hidden = project_backward(m, &ds.out, &dl, dec_len, &mut grad);
        let d_enc = decode_backward(m, &es, &ds, &d_hidden, &mut grad);
        encode_backward(m, &es, &d_enc, &mut grad);
    }
    Ok(LossAndGrad { loss: total * inv_n, grad, tokens })
}

/// Summed cross-entropy and non-pad target count, without gradients.
pub fn batch_loss<T: Scalar>(m: &ModelParams<T>, enc: &[Vec<u32>], dec: &[Vec<u32>], targets: &[Vec<u32>]) -> Result<(T, usize), ModelError> {
    let (batch, len) = check_batch(m, enc, dec)?;
    check_targets(batch, len, targets)?;
    let vocab = m.config.vocab_size;
    if let Some(&id) = targets.iter().flatten().find(|&&id| id as usize >= vocab) {
        return Err(ModelError::IdOutOfRange { id, vocab_size: vocab });
    }
    let (mut total, mut tokens) = (T::zero(), 0);
    for ((e, di), tgt) in enc.iter().zip(dec).zip(targets) {
        let Some(dec_len) = tgt.iter().rposition(|&y| y != PAD_ID).map(|i| i + 1) else {
            continue;
        };
        let enc_len = e.iter().rposition(|&x| x != PAD_ID).map_or(1, |i| i + 1);
        let es = encode(m, &e[..enc_len]);
        let ds = decode_hidden(m, &es, &di[..dec_len]);
        let logits = project(m, &ds.out, 0, dec_len);
        for (t, &y) in tgt[..dec_len].iter().enumerate() {
            if y != PAD_ID {
                let row = &logits[t * vocab..(t + 1) * vocab];
                total += log_sum_exp(row) - row[y as usize];
                tokens += 1;
            }
        }
    }
    Ok((total, tokens))
}

/// Greedy decoding from a start (pad) token. Stops after emitting eos or
/// `max_len` tokens; the eos is kept in the output.
pub fn greedy_decode<T: Scalar>(m: &ModelParams<T>, enc_ids: &[u32], max_len: usize) -> Vec<u32> {
    let es = encode(m, enc_ids);
    let mut prefix = vec![PAD_ID];
    let mut out = Vec::new();
    while out.len() < max_len {
        let ds = decode_hidden(m, &es, &prefix);
        let logits = project(m, &ds.out, prefix.len() - 1, 1);
        let mut best = 0usize;
        for (i, &x) in logits.iter().enumerate() {
            if x > logits[best] {
                best = i;
            }
        }
        let id = best as u32;
        out.push(id);
        if id == EOS_ID {
            break;
        }
        prefix.push(id);
    }
    out
}
