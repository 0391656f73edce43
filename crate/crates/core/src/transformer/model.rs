//! Forward pass and hand-written backward pass.
//!
//! Only the final position feeds the readout, so the last layer computes
//! queries, attention output and MLP at that position alone (keys and values
//! still span the whole sequence). Earlier layers run on every position.

use crate::error::{Error, Result};
use crate::linalg::{gemm, Mat, View};
use crate::task::Example;

use super::params::{LayerParams, ModelParams};

const LN_EPS: f64 = 1e-5;
const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub tokens: Vec<usize>,
    pub targets: Vec<usize>,
    pub seq_len: usize,
}

impl Batch {
    pub fn from_examples(examples: &[Example]) -> Self {
        Batch {
            tokens: examples.iter().flat_map(|e| e.tokens).collect(),
            targets: examples.iter().map(|e| e.target).collect(),
            seq_len: 3,
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn check(&self, params: &ModelParams) -> Result<()> {
        let a = &params.arch;
        if self.seq_len != a.seq_len || self.tokens.len() != self.len() * self.seq_len {
            return Err(Error::InvalidConfig(format!(
                "batch of {} sequences with {} tokens does not match seq_len {}",
                self.len(),
                self.tokens.len(),
                a.seq_len
            )));
        }
        if let Some(&t) = self.tokens.iter().chain(&self.targets).find(|&&t| t >= a.vocab) {
            return Err(Error::InvalidConfig(format!(
                "token id {t} outside vocabulary of size {}",
                a.vocab
            )));
        }
        Ok(())
    }
}

fn add_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn col_sum_into(x: &[f64], cols: usize, out: &mut [f64]) {
    for row in x.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// `out = x·w + b` for `x` with `rows` rows.
fn linear(x: &[f64], rows: usize, w: &Mat, b: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; rows * w.cols];
    gemm(1.0, View::new(x, rows, w.rows), View::of(w), 0.0, &mut out, w.cols);
    add_bias(&mut out, &b.data);
    out
}

/// Backward through `y = x·w + b`: accumulates dW, db, returns dx.
fn linear_back(x: &[f64], rows: usize, w: &Mat, dy: &[f64], dw: &mut Mat, db: &mut Mat) -> Vec<f64> {
    gemm(
        1.0,
        View::new(x, rows, w.rows).t(),
        View::new(dy, rows, w.cols),
        1.0,
        &mut dw.data,
        w.cols,
    );
    col_sum_into(dy, w.cols, &mut db.data);
    let mut dx = vec![0.0; rows * w.rows];
    gemm(1.0, View::new(dy, rows, w.cols), View::of(w).t(), 0.0, &mut dx, w.rows);
    dx
}

struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &[f64], d: usize, gain: &Mat, bias: &Mat) -> (Vec<f64>, LnCache) {
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let h = (xr[c] - mean) * rs;
            xhat[r * d + c] = h;
            y[r * d + c] = h * gain.data[c] + bias.data[c];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_back(dy: &[f64], d: usize, gain: &Mat, cache: &LnCache, dgain: &mut Mat, dbias: &mut Mat) -> Vec<f64> {
    let rows = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in 0..d {
            dgain.data[c] += dyr[c] * xh[c];
            dbias.data[c] += dyr[c];
            dxhat[c] = dyr[c] * gain.data[c];
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * xh[c];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let rs = cache.rstd[r];
        for c in 0..d {
            dx[r * d + c] = rs * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * INV_SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

struct LayerCache {
    ln1: LnCache,
    y1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Softmax weights, `[b][q][head][t]`.
    probs: Vec<f64>,
    z: Vec<f64>,
    ln2: LnCache,
    y2: Vec<f64>,
    pre_act: Vec<f64>,
    act: Vec<f64>,
    /// Number of query positions (sequence length, or 1 in the last layer).
    n_query: usize,
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    lnf: LnCache,
    yf: Vec<f64>,
    logits: Vec<f64>,
}

fn finite_or(xs: &[f64], layer: usize, site: &'static str) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation { layer, site })
    }
}

fn query_rows(x: &[f64], b: usize, s: usize, nq: usize, d: usize) -> Vec<f64> {
    if nq == s {
        return x.to_vec();
    }
    let mut out = Vec::with_capacity(b * nq * d);
    for bi in 0..b {
        let start = (bi * s + s - nq) * d;
        out.extend_from_slice(&x[start..start + nq * d]);
    }
    out
}

fn scatter_query_rows(dst: &mut [f64], src: &[f64], b: usize, s: usize, nq: usize, d: usize) {
    for bi in 0..b {
        for qi in 0..nq {
            let from = (bi * nq + qi) * d;
            let to = (bi * s + s - nq + qi) * d;
            for c in 0..d {
                dst[to + c] += src[from + c];
            }
        }
    }
}

fn layer_forward(
    p: &LayerParams,
    x: Vec<f64>,
    b: usize,
    s: usize,
    nq: usize,
    arch_h: usize,
    li: usize,
) -> Result<(Vec<f64>, LayerCache)> {
    let d = p.wq.rows;
    let h = arch_h;
    let dh = d / h;
    let scale = 1.0 / (dh as f64).sqrt();

    let (y1, ln1) = layer_norm(&x, d, &p.ln1_gain, &p.ln1_bias);
    let k = linear(&y1, b * s, &p.wk, &p.bk);
    let v = linear(&y1, b * s, &p.wv, &p.bv);
    let yq = query_rows(&y1, b, s, nq, d);
    let q = linear(&yq, b * nq, &p.wq, &p.bq);

    let mut probs = vec![0.0; b * nq * h * s];
    let mut z = vec![0.0; b * nq * d];
    let mut scores = vec![0.0; s];
    for bi in 0..b {
        for qi in 0..nq {
            let qrow = &q[(bi * nq + qi) * d..(bi * nq + qi + 1) * d];
            for hd in 0..h {
                let qh = &qrow[hd * dh..(hd + 1) * dh];
                let mut max = f64::NEG_INFINITY;
                for (t, sc) in scores.iter_mut().enumerate() {
                    let kh = &k[(bi * s + t) * d + hd * dh..(bi * s + t) * d + (hd + 1) * dh];
                    *sc = scale * qh.iter().zip(kh).map(|(a, c)| a * c).sum::<f64>();
                    max = max.max(*sc);
                }
                let mut denom = 0.0;
                for sc in scores.iter_mut() {
                    *sc = (*sc - max).exp();
                    denom += *sc;
                }
                let base = ((bi * nq + qi) * h + hd) * s;
                let zrow = &mut z[(bi * nq + qi) * d + hd * dh..(bi * nq + qi) * d + (hd + 1) * dh];
                for t in 0..s {
                    let pr = scores[t] / denom;
                    probs[base + t] = pr;
                    let vh = &v[(bi * s + t) * d + hd * dh..(bi * s + t) * d + (hd + 1) * dh];
                    for (zz, vv) in zrow.iter_mut().zip(vh) {
                        *zz += pr * vv;
                    }
                }
            }
        }
    }
    finite_or(&z, li, "attention")?;

    let mut xa = query_rows(&x, b, s, nq, d);
    let o = linear(&z, b * nq, &p.wo, &p.bo);
    for (a, c) in xa.iter_mut().zip(&o) {
        *a += c;
    }
    let (y2, ln2) = layer_norm(&xa, d, &p.ln2_gain, &p.ln2_bias);
    let pre_act = linear(&y2, b * nq, &p.w_in, &p.b_in);
    let act: Vec<f64> = pre_act.iter().map(|&u| gelu(u)).collect();
    let m = linear(&act, b * nq, &p.w_out, &p.b_out);
    for (a, c) in xa.iter_mut().zip(&m) {
        *a += c;
    }
    finite_or(&xa, li, "residual stream")?;

    Ok((
        xa,
        LayerCache {
            ln1,
            y1,
            q,
            k,
            v,
            probs,
            z,
            ln2,
            y2,
            pre_act,
            act,
            n_query: nq,
        },
    ))
}

fn layer_backward(
    p: &LayerParams,
    g: &mut LayerParams,
    c: &LayerCache,
    dout: Vec<f64>,
    b: usize,
    s: usize,
    h: usize,
) -> Vec<f64> {
    let d = p.wq.rows;
    let dh = d / h;
    let nq = c.n_query;
    let scale = 1.0 / (dh as f64).sqrt();
    let rows_q = b * nq;

    // MLP branch.
    let mut dact = linear_back(&c.act, rows_q, &p.w_out, &dout, &mut g.w_out, &mut g.b_out);
    for (da, &u) in dact.iter_mut().zip(&c.pre_act) {
        *da *= gelu_grad(u);
    }
    let dy2 = linear_back(&c.y2, rows_q, &p.w_in, &dact, &mut g.w_in, &mut g.b_in);
    let mut dxa = layer_norm_back(&dy2, d, &p.ln2_gain, &c.ln2, &mut g.ln2_gain, &mut g.ln2_bias);
    for (a, o) in dxa.iter_mut().zip(&dout) {
        *a += o;
    }

    // Attention branch.
    let dz = linear_back(&c.z, rows_q, &p.wo, &dxa, &mut g.wo, &mut g.bo);
    let mut dq = vec![0.0; rows_q * d];
    let mut dk = vec![0.0; b * s * d];
    let mut dv = vec![0.0; b * s * d];
    let mut dp = vec![0.0; s];
    for bi in 0..b {
        for qi in 0..nq {
            let row = bi * nq + qi;
            for hd in 0..h {
                let span = hd * dh..(hd + 1) * dh;
                let dzh = &dz[row * d..(row + 1) * d][span.clone()];
                let base = (row * h + hd) * s;
                let pr = &c.probs[base..base + s];
                let mut dot_pdp = 0.0;
                for t in 0..s {
                    let vrow = (bi * s + t) * d;
                    let vh = &c.v[vrow..vrow + d][span.clone()];
                    dp[t] = dzh.iter().zip(vh).map(|(a, v)| a * v).sum();
                    dot_pdp += pr[t] * dp[t];
                    let dvh = &mut dv[vrow..vrow + d][span.clone()];
                    for (dvv, dzz) in dvh.iter_mut().zip(dzh) {
                        *dvv += pr[t] * dzz;
                    }
                }
                let qh: Vec<f64> = c.q[row * d..(row + 1) * d][span.clone()].to_vec();
                for t in 0..s {
                    let ds = scale * pr[t] * (dp[t] - dot_pdp);
                    if ds == 0.0 {
                        continue;
                    }
                    let krow = (bi * s + t) * d;
                    {
                        let kh = &c.k[krow..krow + d][span.clone()];
                        let dqh = &mut dq[row * d..(row + 1) * d][span.clone()];
                        for (dqq, kk) in dqh.iter_mut().zip(kh) {
                            *dqq += ds * kk;
                        }
                    }
                    let dkh = &mut dk[krow..krow + d][span.clone()];
                    for (dkk, qq) in dkh.iter_mut().zip(&qh) {
                        *dkk += ds * qq;
                    }
                }
            }
        }
    }

    let yq = query_rows(&c.y1, b, s, nq, d);
    let dyq = linear_back(&yq, rows_q, &p.wq, &dq, &mut g.wq, &mut g.bq);
    let mut dy1 = linear_back(&c.y1, b * s, &p.wk, &dk, &mut g.wk, &mut g.bk);
    let dy1v = linear_back(&c.y1, b * s, &p.wv, &dv, &mut g.wv, &mut g.bv);
    for (a, v) in dy1.iter_mut().zip(&dy1v) {
        *a += v;
    }
    scatter_query_rows(&mut dy1, &dyq, b, s, nq, d);
    let mut dx = layer_norm_back(&dy1, d, &p.ln1_gain, &c.ln1, &mut g.ln1_gain, &mut g.ln1_bias);
    scatter_query_rows(&mut dx, &dxa, b, s, nq, d);
    dx
}

fn forward_cached(params: &ModelParams, batch: &Batch) -> Result<ForwardCache> {
    batch.check(params)?;
    let a = &params.arch;
    let (b, s, d) = (batch.len(), a.seq_len, a.d_model);
    let mut x = vec![0.0; b * s * d];
    for (r, &tok) in batch.tokens.iter().enumerate() {
        let pos = r % s;
        let dst = &mut x[r * d..(r + 1) * d];
        for ((o, e), pe) in dst.iter_mut().zip(params.tok_emb.row(tok)).zip(params.pos_emb.row(pos)) {
            *o = e + pe;
        }
    }
    let mut caches = Vec::with_capacity(a.n_layers);
    for (li, layer) in params.layers.iter().enumerate() {
        let nq = if li + 1 == a.n_layers { 1 } else { s };
        let (next, cache) = layer_forward(layer, x, b, s, nq, a.n_heads, li)?;
        caches.push(cache);
        x = next;
    }
    let (yf, lnf) = layer_norm(&x, d, &params.lnf_gain, &params.lnf_bias);
    let logits = linear(&yf, b, &params.head, &params.head_bias);
    finite_or(&logits, a.n_layers, "logits")?;
    Ok(ForwardCache {
        layers: caches,
        lnf,
        yf,
        logits,
    })
}

/// Logits at the final position, `B × V`.
pub fn forward(params: &ModelParams, batch: &Batch) -> Result<Mat> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let cache = forward_cached(params, batch)?;
    Ok(Mat::from_vec(batch.len(), params.arch.vocab, cache.logits))
}

/// Mean cross-entropy at the final position and its exact gradient.
pub fn loss_and_grad(params: &ModelParams, batch: &Batch) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let cache = forward_cached(params, batch)?;
    let a = &params.arch;
    let (b, s, d, v) = (batch.len(), a.seq_len, a.d_model, a.vocab);

    let mut loss = 0.0;
    let mut dlogits = vec![0.0; b * v];
    for r in 0..b {
        let row = &cache.logits[r * v..(r + 1) * v];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let lse = max + denom.ln();
        let y = batch.targets[r];
        loss += lse - row[y];
        for c in 0..v {
            dlogits[r * v + c] = ((row[c] - lse).exp() - if c == y { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    loss /= b as f64;

    let mut g = params.zeros_like();
    let dyf = linear_back(&cache.yf, b, &params.head, &dlogits, &mut g.head, &mut g.head_bias);
    let mut dx = layer_norm_back(&dyf, d, &params.lnf_gain, &cache.lnf, &mut g.lnf_gain, &mut g.lnf_bias);
    for li in (0..a.n_layers).rev() {
        dx = layer_backward(
            &params.layers[li],
            &mut g.layers[li],
            &cache.layers[li],
            dx,
            b,
            s,
            a.n_heads,
        );
    }
    for (r, &tok) in batch.tokens.iter().enumerate() {
        let pos = r % s;
        let src = &dx[r * d..(r + 1) * d];
        for (o, x) in g.tok_emb.row_mut(tok).iter_mut().zip(src) {
            *o += x;
        }
        for (o, x) in g.pos_emb.row_mut(pos).iter_mut().zip(src) {
            *o += x;
        }
    }
    Ok((loss, g))
}

/// Mean cross-entropy without gradients.
pub fn loss(params: &ModelParams, batch: &Batch) -> Result<f64> {
    let logits = forward(params, batch)?;
    let mut total = 0.0;
    for (r, &y) in batch.targets.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(total / batch.len() as f64)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_CHUNK: usize = 1024;

/// Fraction of examples whose argmax logit equals the target.
pub fn accuracy(params: &ModelParams, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("example list"));
    }
    let mut correct = 0usize;
    for chunk in examples.chunks(EVAL_CHUNK) {
        let batch = Batch::from_examples(chunk);
        let logits = forward(params, &batch)?;
        correct += chunk
            .iter()
            .enumerate()
            .filter(|(r, e)| argmax(logits.row(*r)) == e.target)
            .count();
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Mean loss over an example list, evaluated in chunks.
pub fn mean_loss(params: &ModelParams, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("example list"));
    }
    let mut total = 0.0;
    for chunk in examples.chunks(EVAL_CHUNK) {
        total += loss(params, &Batch::from_examples(chunk))? * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

/// Compare analytic gradients with central differences on up to
/// `coords_per_tensor` sampled coordinates of every tensor.
pub fn gradient_check<R: rand::Rng + ?Sized>(
    params: &ModelParams,
    batch: &Batch,
    coords_per_tensor: usize,
    h: f64,
    rng: &mut R,
) -> Result<crate::gradcheck::CheckReport> {
    use crate::gradcheck::{relative_error, sample_coordinates, CheckReport};
    let (_, grads) = loss_and_grad(params, batch)?;
    let mut report = CheckReport::default();
    let mut probe = params.clone();
    let names = params.names();
    for (ti, (name, g)) in grads.tensors().into_iter().enumerate() {
        debug_assert_eq!(name, names[ti]);
        for c in sample_coordinates(g.data.len(), coords_per_tensor, rng) {
            let orig = probe.tensors()[ti].1.data[c];
            let mut eval = |x: f64| -> Result<f64> {
                probe.tensors_mut()[ti].1.data[c] = x;
                loss(&probe, batch)
            };
            let plus = eval(orig + h)?;
            let minus = eval(orig - h)?;
            probe.tensors_mut()[ti].1.data[c] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            report.record(&name, c, relative_error(g.data[c], numeric));
        }
    }
    Ok(report)
}

/// Mean loss and accuracy in one pass.
pub fn evaluate(params: &ModelParams, examples: &[Example]) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::Empty("example list"));
    }
    let mut total = 0.0;
    let mut correct = 0usize;
    for chunk in examples.chunks(EVAL_CHUNK) {
        let logits = forward(params, &Batch::from_examples(chunk))?;
        for (r, e) in chunk.iter().enumerate() {
            let row = logits.row(r);
            let best = argmax(row);
            let lse = row[best] + row.iter().map(|z| (z - row[best]).exp()).sum::<f64>().ln();
            total += lse - row[e.target];
            correct += usize::from(best == e.target);
        }
    }
    let n = examples.len() as f64;
    Ok((total / n, correct as f64 / n))
}
