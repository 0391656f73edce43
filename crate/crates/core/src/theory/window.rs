//! Closed-form rates, the critical-window prediction, the coupling moment
//! and the finite-horizon basin estimate.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, kron, symmetric_eigenvalues, Mat};
use crate::rng::{stream, Stream};

use super::flow::{flow_init, integrate_flow_from, FlowOptions, FlowSchedule, Groups};
use super::model::{stylized_loss_grad, StylizedParams, StylizedProblem};

/// `c_r = (1/(d·|P_tr|)) Σ_{(i,j)∈P_tr} ‖u_i‖²‖u_j‖²`, so `E[S(W₂)] = c_r γ²`.
pub fn coupling_constant(p: &StylizedProblem) -> f64 {
    let sq: Vec<f64> = (0..p.n_anchors)
        .map(|i| dot(p.anchors.row(i), p.anchors.row(i)))
        .collect();
    let s: f64 = p.train_pairs.iter().map(|&(i, j)| sq[i] * sq[j]).sum();
    s / (p.d as f64 * p.train_pairs.len() as f64)
}

/// Monte Carlo estimate of `E[S(W₂)]` with `S = (1/|P_tr|) Σ c_ij²` and
/// `W₂ ~ N(0, γ²/d)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
    /// Closed form `c_r γ²`.
    pub expected: f64,
}

impl MomentEstimate {
    /// `|mean − expected|` in standard errors.
    pub fn z_score(&self) -> f64 {
        (self.mean - self.expected).abs() / self.std_err.max(f64::MIN_POSITIVE)
    }
}

pub fn coupling_moment_mc(p: &StylizedProblem, gamma: f64, samples: usize, seed: u64) -> Result<MomentEstimate> {
    if samples < 2 {
        return Err(Error::InvalidConfig("coupling Monte Carlo needs ≥ 2 samples".into()));
    }
    let d = p.d;
    let s = gamma / (d as f64).sqrt();
    let mut rng = stream(seed, Stream::CouplingMc);
    let mut w2 = vec![0.0; d * d];
    // W₂·u_i for every anchor, refreshed per draw.
    let mut wu = vec![0.0; p.n_anchors * d];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        for x in &mut w2 {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = s * z;
        }
        for i in 0..p.n_anchors {
            let u = p.anchors.row(i);
            for a in 0..d {
                wu[i * d + a] = dot(&w2[a * d..(a + 1) * d], u);
            }
        }
        let v = p
            .train_pairs
            .iter()
            .map(|&(i, j)| dot(p.anchors.row(j), &wu[i * d..(i + 1) * d]).powi(2))
            .sum::<f64>()
            / p.train_pairs.len() as f64;
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(MomentEstimate {
        mean,
        std_err: (var / n).sqrt(),
        samples,
        expected: coupling_constant(p) * gamma * gamma,
    })
}

/// Memorization and reasoning half-times `(ln 2/σ_e, ln 2/(c_r γ² σ_e))`.
pub fn half_times_from(sigma_e: f64, c_r: f64, gamma: f64) -> (f64, f64) {
    let ln2 = std::f64::consts::LN_2;
    (ln2 / sigma_e, ln2 / (c_r * gamma * gamma * sigma_e))
}

pub fn half_times(p: &StylizedProblem, gamma: f64) -> (f64, f64) {
    half_times_from(p.sigma_e, coupling_constant(p), gamma)
}

/// Slowest linear rates `(μ_m, μ_r)` of the summed-loss flow:
/// `λ_min(G_e)` and `|P_tr|·c_r γ² λ_min(G_e)` in expectation over `W₂`.
pub fn flow_rates(p: &StylizedProblem, gamma: f64) -> (f64, f64) {
    let n = p.train_pairs.len() as f64;
    (p.sigma_e, n * coupling_constant(p) * gamma * gamma * p.sigma_e)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub gamma: f64,
    pub eta: f64,
    pub delta: f64,
    pub sigma_e: f64,
    pub sigma_u: f64,
    pub c_r: f64,
    /// `log(1/δ) / (η σ_e)` in optimizer steps.
    pub t1: f64,
    /// `log(1/δ) / (η c_r γ² σ_e)` in optimizer steps, after clamping.
    pub t2: f64,
    /// Unclamped `t2`.
    pub t2_raw: f64,
    /// Set when `t2` exceeded the training horizon and was clamped to it.
    pub t2_clamped: bool,
}

/// Critical window `[t1, t2]` in optimizer steps.
pub fn predict_window_from(
    sigma_e: f64,
    sigma_u: f64,
    c_r: f64,
    gamma: f64,
    eta: f64,
    delta: f64,
    horizon: Option<f64>,
) -> Result<WindowPrediction> {
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::InvalidConfig(format!("δ = {delta} outside (0, 0.5]")));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidConfig(format!("η = {eta} must be > 0")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidConfig(format!("γ = {gamma} must be > 0")));
    }
    if !(sigma_e > 0.0 && c_r > 0.0) {
        return Err(Error::DegenerateGram(format!(
            "σ_e = {sigma_e}, c_r = {c_r} must be > 0"
        )));
    }
    let l = (1.0 / delta).ln();
    let t1 = l / (eta * sigma_e);
    let t2_raw = l / (eta * c_r * gamma * gamma * sigma_e);
    let (t2, t2_clamped) = match horizon {
        Some(h) if t2_raw > h => (h, true),
        _ => (t2_raw, false),
    };
    Ok(WindowPrediction {
        gamma,
        eta,
        delta,
        sigma_e,
        sigma_u,
        c_r,
        t1,
        t2,
        t2_raw,
        t2_clamped,
    })
}

pub fn predict_window(
    p: &StylizedProblem,
    gamma: f64,
    eta: f64,
    delta: f64,
    horizon: Option<f64>,
) -> Result<WindowPrediction> {
    predict_window_from(p.sigma_e, p.sigma_u, coupling_constant(p), gamma, eta, delta, horizon)
}

/// Largest `d` for which Hessians are formed explicitly.
pub const HESSIAN_MAX_D: usize = 16;

fn guard(p: &StylizedProblem) -> Result<()> {
    if p.d > HESSIAN_MAX_D {
        return Err(Error::DimensionGuard(format!(
            "explicit Hessian needs d ≤ {HESSIAN_MAX_D}, got {}",
            p.d
        )));
    }
    Ok(())
}

/// Eigenvalues (ascending) of the per-pair memorization Hessian `G_e ⊗ I_d`
/// in the `K·d` coordinates of the pair's predictions.
pub fn memorization_hessian(p: &StylizedProblem) -> Result<Vec<f64>> {
    guard(p)?;
    Ok(symmetric_eigenvalues(&kron(&p.gram_e, &Mat::identity(p.d))))
}

/// Hessian of the loss in the `d²` entries of one pair's lookup, built
/// column by column from the analytic gradient (exact: the loss is
/// quadratic in `M_ij`). Its non-zero spectrum is `eig(G_e)` repeated `d`
/// times.
pub fn memorization_parameter_hessian(p: &StylizedProblem, pair: usize) -> Result<Mat> {
    guard(p)?;
    let &(i, j) = p
        .train_pairs
        .get(pair)
        .ok_or_else(|| Error::InvalidConfig(format!("pair index {pair} out of range")))?;
    let idx = p.pair_index(i, j);
    let base = StylizedParams::zeros(p);
    let g0 = stylized_loss_grad(p, &base, 0.0)?.1;
    let n = p.d * p.d;
    let mut h = Mat::zeros(n, n);
    for c in 0..n {
        let mut q = base.clone();
        q.m[idx].data[c] = 1.0;
        let g = stylized_loss_grad(p, &q, 0.0)?.1;
        for r in 0..n {
            h[(r, c)] = g.m[idx].data[r] - g0.m[idx].data[r];
        }
    }
    Ok(h)
}

/// Finite-horizon basin estimate.
///
/// Each run integrates the reasoning channel (`W₁` trains from zero, the
/// lookups and `W₂` stay at their N(0, γ²/d) draw) with λ applied over the
/// flow's own predicted window. A run succeeds when `r(T)` reaches
/// `(1 − ε)` of the plateau of the same initialization integrated for
/// `ref_factor · T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasinConfig {
    pub gammas: Vec<f64>,
    pub t_end: f64,
    pub n_seeds: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub lambda: f64,
    pub delta: f64,
    pub dt: f64,
    pub ref_factor: f64,
}

impl BasinConfig {
    pub fn new(gammas: Vec<f64>, t_end: f64, n_seeds: usize) -> Self {
        BasinConfig {
            gammas,
            t_end,
            n_seeds,
            seed: 0,
            epsilon: 0.1,
            lambda: 0.01,
            delta: 0.5,
            dt: 0.05,
            ref_factor: 8.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasinPoint {
    pub gamma: f64,
    pub successes: usize,
    pub n: usize,
    pub fraction: f64,
    /// Flow-time window `[t1, t2)` where λ was applied (clamped to T).
    pub window: (f64, f64),
    /// Reasoning half-time of the flow, `ln 2 / μ_r`.
    pub r_half_time: f64,
}

/// Window in flow time from the flow's own rates: `[log(1/δ)/μ_m, log(1/δ)/μ_r)`.
/// Empty (zero width at `t1`) when reasoning is the faster channel.
pub fn flow_window(p: &StylizedProblem, gamma: f64, delta: f64, t_end: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::InvalidConfig(format!("δ = {delta} outside (0, 0.5]")));
    }
    let (mu_m, mu_r) = flow_rates(p, gamma);
    let l = (1.0 / delta).ln();
    let t1 = (l / mu_m).min(t_end);
    Ok((t1, (l / mu_r).min(t_end).max(t1)))
}

pub fn basin_mc(p: &StylizedProblem, cfg: &BasinConfig) -> Result<Vec<BasinPoint>> {
    if cfg.n_seeds < 10 {
        return Err(Error::InvalidConfig(format!(
            "basin Monte Carlo needs ≥ 10 seeds, got {}",
            cfg.n_seeds
        )));
    }
    if !(cfg.epsilon > 0.0 && cfg.epsilon < 1.0) {
        return Err(Error::InvalidConfig(format!("ε = {} outside (0, 1)", cfg.epsilon)));
    }
    if !(cfg.ref_factor > 1.0) {
        return Err(Error::InvalidConfig("ref_factor must exceed 1".into()));
    }
    let opts = FlowOptions {
        trainable: Groups::REASONING,
        zero_init: Groups {
            m: false,
            w1: true,
            w2: false,
        },
        record_every: cfg.t_end.max(1e-9),
        ..FlowOptions::default()
    };
    let mut out = Vec::with_capacity(cfg.gammas.len());
    for &gamma in &cfg.gammas {
        if !(gamma > 0.0) {
            return Err(Error::InvalidConfig(format!("γ = {gamma} must be > 0")));
        }
        let (start, end) = flow_window(p, gamma, cfg.delta, cfg.t_end)?;
        let schedule = FlowSchedule::Windowed {
            lambda: cfg.lambda,
            start,
            end,
        };
        let mut successes = 0;
        for s in 0..cfg.n_seeds {
            let init = flow_init(p, gamma, cfg.seed + s as u64, opts.zero_init);
            let (run, _) = integrate_flow_from(p, &init, &schedule, cfg.dt, cfg.t_end, &opts)?;
            let ref_opts = FlowOptions {
                record_every: cfg.t_end * cfg.ref_factor,
                ..opts
            };
            let (reference, _) =
                integrate_flow_from(p, &init, &schedule, cfg.dt, cfg.t_end * cfg.ref_factor, &ref_opts)?;
            let plateau = reference.final_r();
            if !run.truncated && run.final_r() >= (1.0 - cfg.epsilon) * plateau {
                successes += 1;
            }
        }
        out.push(BasinPoint {
            gamma,
            successes,
            n: cfg.n_seeds,
            fraction: successes as f64 / cfg.n_seeds as f64,
            window: (start, end),
            r_half_time: std::f64::consts::LN_2 / flow_rates(p, gamma).1,
        });
    }
    Ok(out)
}
