//! Linear-attention stylized model
//! `f(k, a_i, a_j) = M_ij e_k + (u_jᵀ W₂ u_i) W₁ e_k`
//! with frozen key embeddings `e_k` and anchor embeddings `u_i`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, gemm, symmetric_eigenvalues, Mat, View};
use crate::rng::{stream, Stream};
use crate::task::{generate_anchor_task, TaskSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Embedding {
    /// Independent Gaussian directions normalized to unit length.
    UnitNormRandom,
    /// Orthonormal keys (K ≤ d) and unit-norm random anchors; `G_e = I`.
    OrthonormalKeys,
    /// Caller-supplied `K × d` keys and `M × d` anchors.
    Custom { keys: Mat, anchors: Mat },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StylizedConfig {
    pub d: usize,
    pub task: TaskSpec,
    pub embedding: Embedding,
    /// Initialization scale: trained entries start as N(0, γ²/d).
    pub gamma: f64,
}

impl StylizedConfig {
    /// d = 64, K = 16 keys, M = 8 anchors, 70% of pairs, unit-norm random
    /// embeddings.
    pub fn reference(gamma: f64, seed: u64) -> Self {
        StylizedConfig {
            d: 64,
            task: TaskSpec::reference(seed),
            embedding: Embedding::UnitNormRandom,
            gamma,
        }
    }
}

/// Everything the flow needs that does not change during training.
#[derive(Clone, Debug, PartialEq)]
pub struct StylizedProblem {
    pub d: usize,
    pub n_keys: usize,
    pub n_anchors: usize,
    pub gamma: f64,
    pub train_pairs: Vec<(usize, usize)>,
    pub ood_pairs: Vec<(usize, usize)>,
    pub permutations: Vec<Vec<usize>>,
    /// `K × d`, row k is `e_k`.
    pub keys: Mat,
    /// `M × d`, row i is `u_i`.
    pub anchors: Mat,
    /// `K × K` Gram `[e_k · e_l]`.
    pub gram_e: Mat,
    /// `M × M` Gram `[u_i · u_j]`.
    pub gram_u: Mat,
    pub sigma_e: f64,
    pub sigma_e_max: f64,
    pub sigma_u: f64,
}

fn unit_rows<R: Rng + ?Sized>(rows: usize, d: usize, rng: &mut R) -> Mat {
    let mut m = Mat::randn(rows, d, 1.0, rng);
    for r in 0..rows {
        let n = dot(m.row(r), m.row(r)).sqrt();
        m.row_mut(r).iter_mut().for_each(|x| *x /= n);
    }
    m
}

fn gram(rows: &Mat) -> Mat {
    rows.matmul(&rows.transpose())
}

/// Relative threshold below which a Gram eigenvalue counts as zero.
const GRAM_TOL: f64 = 1e-10;

impl StylizedProblem {
    pub fn new(cfg: &StylizedConfig) -> Result<Self> {
        let task = generate_anchor_task(&cfg.task)?;
        let (d, k, m) = (cfg.d, cfg.task.keys, cfg.task.anchors);
        if d == 0 {
            return Err(Error::InvalidConfig("d must be ≥ 1".into()));
        }
        if !(cfg.gamma >= 0.0 && cfg.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "γ = {} must be finite and ≥ 0",
                cfg.gamma
            )));
        }
        let mut rng = stream(cfg.task.seed, Stream::Embeddings);
        let (keys, anchors) = match &cfg.embedding {
            Embedding::UnitNormRandom => (unit_rows(k, d, &mut rng), unit_rows(m, d, &mut rng)),
            Embedding::OrthonormalKeys => {
                if k > d {
                    return Err(Error::DegenerateGram(format!(
                        "{k} orthonormal keys need d ≥ {k}, got {d}"
                    )));
                }
                let q = Mat::randn(d, d, 1.0, &mut rng).to_nalgebra().qr().q();
                let mut keys = Mat::zeros(k, d);
                for r in 0..k {
                    for c in 0..d {
                        keys[(r, c)] = q[(c, r)];
                    }
                }
                (keys, unit_rows(m, d, &mut rng))
            }
            Embedding::Custom { keys, anchors } => {
                if (keys.rows, keys.cols) != (k, d) || (anchors.rows, anchors.cols) != (m, d) {
                    return Err(Error::InvalidConfig(format!(
                        "custom embeddings must be {k}×{d} keys and {m}×{d} anchors"
                    )));
                }
                (keys.clone(), anchors.clone())
            }
        };
        let gram_e = gram(&keys);
        let gram_u = gram(&anchors);
        let eig_e = symmetric_eigenvalues(&gram_e);
        let eig_u = symmetric_eigenvalues(&gram_u);
        let sigma_e = eig_e[0];
        let sigma_e_max = *eig_e.last().expect("K ≥ 2");
        let sigma_u = eig_u[0];
        if !(sigma_e > GRAM_TOL * sigma_e_max.max(1.0)) {
            return Err(Error::DegenerateGram(format!(
                "key Gram is not positive definite (λ_min = {sigma_e:.3e}; K = {k}, d = {d})"
            )));
        }
        let u_max = *eig_u.last().expect("M ≥ 2");
        if !(sigma_u > GRAM_TOL * u_max.max(1.0)) {
            return Err(Error::DegenerateGram(format!(
                "anchor Gram is not positive definite (λ_min = {sigma_u:.3e}; M = {m}, d = {d})"
            )));
        }
        Ok(StylizedProblem {
            d,
            n_keys: k,
            n_anchors: m,
            gamma: cfg.gamma,
            train_pairs: task.train_pairs,
            ood_pairs: task.ood_pairs,
            permutations: task.permutations,
            keys,
            anchors,
            gram_e,
            gram_u,
            sigma_e,
            sigma_e_max,
            sigma_u,
        })
    }

    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        i * self.n_anchors + j
    }

    /// `π_j(π_i(k))`.
    pub fn target_key(&self, k: usize, i: usize, j: usize) -> usize {
        self.permutations[j][self.permutations[i][k]]
    }

    /// `K × d` targets for a pair: row k is `e_{π_j(π_i(k))}`.
    pub fn targets(&self, i: usize, j: usize) -> Mat {
        let mut y = Mat::zeros(self.n_keys, self.d);
        for k in 0..self.n_keys {
            y.row_mut(k).copy_from_slice(self.keys.row(self.target_key(k, i, j)));
        }
        y
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StylizedParams {
    /// One `d × d` lookup per ordered anchor pair, indexed `i·M + j`.
    pub m: Vec<Mat>,
    pub w1: Mat,
    pub w2: Mat,
}

impl StylizedParams {
    pub fn zeros(p: &StylizedProblem) -> Self {
        StylizedParams {
            m: vec![Mat::zeros(p.d, p.d); p.n_anchors * p.n_anchors],
            w1: Mat::zeros(p.d, p.d),
            w2: Mat::zeros(p.d, p.d),
        }
    }

    /// Entries N(0, γ²/d) from the seed's stylized-init stream.
    pub fn init(p: &StylizedProblem, gamma: f64, seed: u64) -> Self {
        let mut rng = stream(seed, Stream::StylizedInit);
        let s = gamma / (p.d as f64).sqrt();
        let w2 = Mat::randn(p.d, p.d, s, &mut rng);
        let w1 = Mat::randn(p.d, p.d, s, &mut rng);
        let m = (0..p.n_anchors * p.n_anchors)
            .map(|_| Mat::randn(p.d, p.d, s, &mut rng))
            .collect();
        StylizedParams { m, w1, w2 }
    }

    pub fn axpy(&mut self, a: f64, other: &StylizedParams) {
        for (x, y) in self.m.iter_mut().zip(&other.m) {
            x.data.iter_mut().zip(&y.data).for_each(|(u, v)| *u += a * v);
        }
        self.w1
            .data
            .iter_mut()
            .zip(&other.w1.data)
            .for_each(|(u, v)| *u += a * v);
        self.w2
            .data
            .iter_mut()
            .zip(&other.w2.data)
            .for_each(|(u, v)| *u += a * v);
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite() && self.w2.is_finite() && self.m.iter().all(Mat::is_finite)
    }

    /// Flat views of every trained scalar: all `M_ij`, then `W₁`, then `W₂`.
    pub fn flat_mut(&mut self) -> Vec<&mut f64> {
        let mut out: Vec<&mut f64> = Vec::new();
        for m in &mut self.m {
            out.extend(m.data.iter_mut());
        }
        out.extend(self.w1.data.iter_mut());
        out.extend(self.w2.data.iter_mut());
        out
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.m.iter().flat_map(|m| m.data.iter().copied()).collect();
        out.extend(&self.w1.data);
        out.extend(&self.w2.data);
        out
    }
}

/// `c_ij = u_jᵀ W₂ u_i`.
pub fn coupling(p: &StylizedProblem, params: &StylizedParams, i: usize, j: usize) -> f64 {
    let w2ui = params.w2.matmul(&Mat::from_vec(p.d, 1, p.anchors.row(i).to_vec()));
    dot(p.anchors.row(j), &w2ui.data)
}

fn matvec(m: &Mat, x: &[f64]) -> Vec<f64> {
    (0..m.rows).map(|r| dot(m.row(r), x)).collect()
}

/// Both paths evaluated separately: `(M_ij e_k, c_ij W₁ e_k)`.
pub fn forward_paths(
    p: &StylizedProblem,
    params: &StylizedParams,
    k: usize,
    i: usize,
    j: usize,
) -> (Vec<f64>, Vec<f64>) {
    let e = p.keys.row(k);
    let mem = matvec(&params.m[p.pair_index(i, j)], e);
    let c = coupling(p, params, i, j);
    let reason = matvec(&params.w1, e).into_iter().map(|x| c * x).collect();
    (mem, reason)
}

pub fn stylized_forward(p: &StylizedProblem, params: &StylizedParams, k: usize, i: usize, j: usize) -> Vec<f64> {
    let (a, b) = forward_paths(p, params, k, i, j);
    a.iter().zip(&b).map(|(x, y)| x + y).collect()
}

/// `(m, r)`: mean `‖M_ij‖_F` over train pairs and `‖W₁‖_F·‖W₂‖_F`.
pub fn order_params(p: &StylizedProblem, params: &StylizedParams) -> (f64, f64) {
    let m = p
        .train_pairs
        .iter()
        .map(|&(i, j)| params.m[p.pair_index(i, j)].frobenius())
        .sum::<f64>()
        / p.train_pairs.len() as f64;
    (m, params.w1.frobenius() * params.w2.frobenius())
}

/// Loss `½ Σ_{(i,j)∈train} Σ_k ‖f(k,i,j) − y‖² + (λ/2)‖θ‖²` and its gradient.
///
/// The data term is summed over examples, so the memorization block of the
/// Hessian is exactly `G_e ⊗ I_d` per pair.
pub fn stylized_loss_grad(p: &StylizedProblem, params: &StylizedParams, lambda: f64) -> Result<(f64, StylizedParams)> {
    if p.train_pairs.is_empty() {
        return Err(Error::Empty("train pairs"));
    }
    let (d, k) = (p.d, p.n_keys);
    let mut g = StylizedParams::zeros(p);
    // E·W₁ᵀ: row k is (W₁ e_k)ᵀ.
    let mut ew1 = vec![0.0; k * d];
    gemm(1.0, View::of(&p.keys), View::of(&params.w1).t(), 0.0, &mut ew1, d);
    let mut loss = 0.0;
    let mut resid = vec![0.0; k * d];
    let mut gm = vec![0.0; d * d];
    for &(i, j) in &p.train_pairs {
        let idx = p.pair_index(i, j);
        let c = coupling(p, params, i, j);
        // R = E·Mᵀ + c·E·W₁ᵀ − Y
        gemm(1.0, View::of(&p.keys), View::of(&params.m[idx]).t(), 0.0, &mut resid, d);
        for kk in 0..k {
            let y = p.keys.row(p.target_key(kk, i, j));
            let row = &mut resid[kk * d..(kk + 1) * d];
            for c_ in 0..d {
                row[c_] += c * ew1[kk * d + c_] - y[c_];
            }
        }
        loss += 0.5 * resid.iter().map(|x| x * x).sum::<f64>();
        // Rᵀ·E is the data gradient of M_ij; W₁ receives c·Rᵀ·E.
        gemm(1.0, View::new(&resid, k, d).t(), View::of(&p.keys), 0.0, &mut gm, d);
        g.m[idx].data.copy_from_slice(&gm);
        g.w1.data.iter_mut().zip(&gm).for_each(|(a, b)| *a += c * b);
        let gc = dot(&resid, &ew1);
        let (ui, uj) = (p.anchors.row(i), p.anchors.row(j));
        for (a, &u) in uj.iter().enumerate().take(d) {
            let s = gc * u;
            g.w2.row_mut(a).iter_mut().zip(ui).for_each(|(x, &v)| *x += s * v);
        }
    }
    if lambda != 0.0 {
        let mut reg = 0.0;
        for (gm, m) in g.m.iter_mut().zip(&params.m) {
            reg += m.frobenius_sq();
            gm.data.iter_mut().zip(&m.data).for_each(|(a, b)| *a += lambda * b);
        }
        for (gw, w) in [(&mut g.w1, &params.w1), (&mut g.w2, &params.w2)] {
            reg += w.frobenius_sq();
            gw.data.iter_mut().zip(&w.data).for_each(|(a, b)| *a += lambda * b);
        }
        loss += 0.5 * lambda * reg;
    }
    Ok((loss, g))
}

pub fn stylized_loss(p: &StylizedProblem, params: &StylizedParams, lambda: f64) -> Result<f64> {
    Ok(stylized_loss_grad(p, params, lambda)?.0)
}

/// Compare analytic gradients with central differences on up to
/// `coords_per_block` sampled coordinates of each block (all lookups, `W₁`, `W₂`).
///
/// The output is linear in every single parameter, so the loss is exactly
/// quadratic along a coordinate and central differences carry no truncation
/// error; a large step such as `h = 1e-3` only reduces roundoff.
pub fn stylized_gradient_check<R: rand::Rng + ?Sized>(
    p: &StylizedProblem,
    params: &StylizedParams,
    lambda: f64,
    coords_per_block: usize,
    h: f64,
    rng: &mut R,
) -> Result<crate::gradcheck::CheckReport> {
    use crate::gradcheck::{relative_error, sample_coordinates, CheckReport};
    let (_, g) = stylized_loss_grad(p, params, lambda)?;
    let analytic = g.flat();
    let n_m: usize = params.m.iter().map(|m| m.data.len()).sum();
    let n_w = params.w1.data.len();
    let blocks = [("M", 0, n_m), ("W1", n_m, n_w), ("W2", n_m + n_w, params.w2.data.len())];
    let mut report = CheckReport::default();
    let mut probe = params.clone();
    let flat = params.flat();
    for (name, offset, len) in blocks {
        for c in sample_coordinates(len, coords_per_block, rng) {
            let i = offset + c;
            let x = flat[i];
            *probe.flat_mut()[i] = x + h;
            let plus = stylized_loss(p, &probe, lambda)?;
            *probe.flat_mut()[i] = x - h;
            let minus = stylized_loss(p, &probe, lambda)?;
            *probe.flat_mut()[i] = x;
            report.record(name, c, relative_error(analytic[i], (plus - minus) / (2.0 * h)));
        }
    }
    Ok(report)
}
