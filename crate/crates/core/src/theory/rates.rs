//! Empirical rate measurements and window-effect comparisons on the flow.

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::flow::{fit_rate, flow_init, integrate_flow_from, FitWindow, FlowOptions, FlowSchedule, Groups};
use super::model::{coupling, StylizedParams, StylizedProblem};
use super::window::flow_rates;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateMeasurement {
    pub gamma: f64,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Closed-form rate of the summed-loss flow.
    pub predicted: f64,
}

impl RateMeasurement {
    pub fn rel_error(&self) -> f64 {
        (self.mean - self.predicted).abs() / self.predicted
    }
}

/// Samples per fitted trajectory.
const SAMPLES: f64 = 400.0;
/// Horizon in units of the slowest time constant.
const TAIL: f64 = 14.0;

fn measure(
    p: &StylizedProblem,
    gamma: f64,
    seeds: &[u64],
    opts: FlowOptions,
    rate_of: impl Fn(&StylizedParams) -> f64,
    pick_r: bool,
    window: FitWindow,
) -> Result<Vec<f64>> {
    seeds
        .iter()
        .map(|&s| {
            let init = flow_init(p, gamma, s, opts.zero_init);
            let t_end = TAIL / rate_of(&init);
            let o = FlowOptions {
                record_every: t_end / SAMPLES,
                ..opts
            };
            let (traj, _) = integrate_flow_from(p, &init, &FlowSchedule::None, 1.0, t_end, &o)?;
            fit_rate(&traj.times, if pick_r { &traj.r } else { &traj.m }, window)
        })
        .collect()
}

/// `μ̂_m`: approach rate of `m(t)` when only the lookups train (the
/// composition channel starts and stays at zero). Predicted `λ_min(G_e)`.
pub fn measure_memorization_rate(
    p: &StylizedProblem,
    gamma: f64,
    seeds: &[u64],
    window: FitWindow,
) -> Result<RateMeasurement> {
    let opts = FlowOptions {
        trainable: Groups::MEMORIZATION,
        zero_init: Groups {
            m: false,
            w1: true,
            w2: true,
        },
        ..FlowOptions::default()
    };
    let per_seed = measure(p, gamma, seeds, opts, |_| p.sigma_e, false, window)?;
    Ok(summarize(gamma, per_seed, flow_rates(p, gamma).0))
}

/// `μ̂_r`: approach rate of `r(t)` in the linearized reasoning flow (`W₁`
/// trains from zero; lookups and `W₂` stay at their draw). Predicted
/// `|P_tr|·c_r γ² λ_min(G_e)`; each seed's own rate is `Σ c_ij² · λ_min(G_e)`.
pub fn measure_reasoning_rate(
    p: &StylizedProblem,
    gamma: f64,
    seeds: &[u64],
    window: FitWindow,
) -> Result<RateMeasurement> {
    let opts = FlowOptions {
        trainable: Groups::REASONING,
        zero_init: Groups {
            m: false,
            w1: true,
            w2: false,
        },
        ..FlowOptions::default()
    };
    let seed_rate = |init: &StylizedParams| {
        let s: f64 = p
            .train_pairs
            .iter()
            .map(|&(i, j)| coupling(p, init, i, j).powi(2))
            .sum();
        s * p.sigma_e
    };
    let per_seed = measure(p, gamma, seeds, opts, seed_rate, true, window)?;
    Ok(summarize(gamma, per_seed, flow_rates(p, gamma).1))
}

fn summarize(gamma: f64, per_seed: Vec<f64>, predicted: f64) -> RateMeasurement {
    let mean = per_seed.iter().sum::<f64>() / per_seed.len().max(1) as f64;
    RateMeasurement {
        gamma,
        per_seed,
        mean,
        predicted,
    }
}

/// Final order parameters with and without a weight-decay schedule from the
/// same initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowEffect {
    pub m_final: f64,
    pub r_final: f64,
    pub m_baseline: f64,
    pub r_baseline: f64,
    /// `|m_final − m_baseline| / m_baseline`.
    pub rel_m_change: f64,
}

pub fn window_effect(
    p: &StylizedProblem,
    init: &StylizedParams,
    schedule: &FlowSchedule,
    dt: f64,
    t_end: f64,
    opts: &FlowOptions,
) -> Result<WindowEffect> {
    let (with, _) = integrate_flow_from(p, init, schedule, dt, t_end, opts)?;
    let (base, _) = integrate_flow_from(p, init, &FlowSchedule::None, dt, t_end, opts)?;
    let (m_final, m_baseline) = (with.final_m(), base.final_m());
    Ok(WindowEffect {
        m_final,
        r_final: with.final_r(),
        m_baseline,
        r_baseline: base.final_r(),
        rel_m_change: (m_final - m_baseline).abs() / m_baseline,
    })
}
