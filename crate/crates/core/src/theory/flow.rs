//! Explicit-Euler gradient flow of the stylized model and rate fitting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::{order_params, stylized_loss_grad, StylizedParams, StylizedProblem};

/// Weight-decay coefficient as a function of continuous flow time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FlowSchedule {
    None,
    Constant {
        lambda: f64,
    },
    /// λ on `[start, end)`, zero elsewhere.
    Windowed {
        lambda: f64,
        start: f64,
        end: f64,
    },
}

impl FlowSchedule {
    pub fn lambda_at(&self, t: f64) -> f64 {
        match *self {
            FlowSchedule::None => 0.0,
            FlowSchedule::Constant { lambda } => lambda,
            FlowSchedule::Windowed { lambda, start, end } => {
                if t >= start && t < end {
                    lambda
                } else {
                    0.0
                }
            }
        }
    }

    pub fn max_lambda(&self) -> f64 {
        match *self {
            FlowSchedule::None => 0.0,
            FlowSchedule::Constant { lambda } | FlowSchedule::Windowed { lambda, .. } => lambda,
        }
    }

    /// Parse `none`, `constant,λ` or `windowed,λ,t1,t2` (flow time).
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse(format!("flow schedule `{spec}` needs a number in field {i}")))
        };
        let s = match (parts[0], parts.len()) {
            ("none", 1) => FlowSchedule::None,
            ("constant", 2) => FlowSchedule::Constant { lambda: num(1)? },
            ("windowed", 4) => FlowSchedule::Windowed {
                lambda: num(1)?,
                start: num(2)?,
                end: num(3)?,
            },
            _ => return Err(Error::Parse(format!("unrecognized flow schedule `{spec}`"))),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.max_lambda();
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Error::InvalidConfig(format!("flow λ = {l} must be finite and ≥ 0")));
        }
        if let FlowSchedule::Windowed { start, end, .. } = *self {
            if !(start >= 0.0 && end >= start) {
                return Err(Error::InvalidConfig(format!(
                    "flow window [{start}, {end}) is not ordered"
                )));
            }
        }
        Ok(())
    }
}

/// Which parameter groups are selected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Groups {
    pub m: bool,
    pub w1: bool,
    pub w2: bool,
}

impl Groups {
    pub const ALL: Groups = Groups {
        m: true,
        w1: true,
        w2: true,
    };
    pub const NONE: Groups = Groups {
        m: false,
        w1: false,
        w2: false,
    };
    /// Only `W₁` moves: the linearized reasoning channel.
    pub const REASONING: Groups = Groups {
        m: false,
        w1: true,
        w2: false,
    };
    /// Only the lookups move: the memorization channel.
    pub const MEMORIZATION: Groups = Groups {
        m: true,
        w1: false,
        w2: false,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    /// Groups that follow the gradient; the rest stay at their initial value.
    pub trainable: Groups,
    /// Groups that start at exactly zero instead of N(0, γ²/d).
    pub zero_init: Groups,
    /// Flow-time spacing of recorded samples.
    pub record_every: f64,
    /// Restarts with a halved step allowed after a non-finite state.
    pub max_halvings: u32,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            trainable: Groups::ALL,
            zero_init: Groups::NONE,
            record_every: 0.5,
            max_halvings: 8,
        }
    }
}

/// Order parameters `m(t)`, `r(t)` sampled along the flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderParamTrajectory {
    pub times: Vec<f64>,
    pub m: Vec<f64>,
    pub r: Vec<f64>,
    pub loss: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Step actually used, after the stability cap and any halvings.
    pub dt: f64,
    /// Set when `m` or `r` exceeded [`BLOWUP`] and integration stopped.
    pub truncated: bool,
}

impl OrderParamTrajectory {
    pub fn final_m(&self) -> f64 {
        *self.m.last().expect("trajectory has the t = 0 sample")
    }

    pub fn final_r(&self) -> f64 {
        *self.r.last().expect("trajectory has the t = 0 sample")
    }

    /// First recorded time with `values ≥ level`.
    pub fn first_crossing(values: &[f64], times: &[f64], level: f64) -> Option<f64> {
        values.iter().zip(times).find(|(v, _)| **v >= level).map(|(_, t)| *t)
    }
}

/// Order parameters beyond this count as a blow-up.
pub const BLOWUP: f64 = 1e6;

/// Initial parameters for a flow: N(0, γ²/d) with selected groups zeroed.
pub fn flow_init(p: &StylizedProblem, gamma: f64, seed: u64, zero: Groups) -> StylizedParams {
    let mut params = StylizedParams::init(p, gamma, seed);
    if zero.m {
        params.m.iter_mut().for_each(|m| m.data.fill(0.0));
    }
    if zero.w1 {
        params.w1.data.fill(0.0);
    }
    if zero.w2 {
        params.w2.data.fill(0.0);
    }
    params
}

fn mask_frozen(g: &mut StylizedParams, trainable: Groups) {
    if !trainable.m {
        g.m.iter_mut().for_each(|m| m.data.fill(0.0));
    }
    if !trainable.w1 {
        g.w1.data.fill(0.0);
    }
    if !trainable.w2 {
        g.w2.data.fill(0.0);
    }
}

/// Stable step for the flow: `min(dt, 0.1 / (σ_max(G_e) + λ_max))`.
pub fn stable_dt(p: &StylizedProblem, schedule: &FlowSchedule, dt: f64) -> f64 {
    dt.min(0.1 / (p.sigma_e_max + schedule.max_lambda()))
}

enum Attempt {
    Done(Box<(OrderParamTrajectory, StylizedParams)>),
    NonFinite,
}

fn attempt(
    p: &StylizedProblem,
    init: &StylizedParams,
    schedule: &FlowSchedule,
    dt: f64,
    t_end: f64,
    opts: &FlowOptions,
) -> Result<Attempt> {
    let n_steps = (t_end / dt).ceil().max(0.0) as usize;
    let h = if n_steps == 0 { 0.0 } else { t_end / n_steps as f64 };
    let stride = ((opts.record_every / h.max(f64::MIN_POSITIVE)).round() as usize).max(1);
    let mut params = init.clone();
    let mut traj = OrderParamTrajectory {
        times: Vec::new(),
        m: Vec::new(),
        r: Vec::new(),
        loss: Vec::new(),
        lambda: Vec::new(),
        dt: h,
        truncated: false,
    };
    for n in 0..=n_steps {
        let t = n as f64 * h;
        let lambda = if n < n_steps { schedule.lambda_at(t) } else { 0.0 };
        let (loss, mut g) = stylized_loss_grad(p, &params, lambda)?;
        let (m, r) = order_params(p, &params);
        if !(loss.is_finite() && m.is_finite() && r.is_finite()) {
            return Ok(Attempt::NonFinite);
        }
        let blowup = m > BLOWUP || r > BLOWUP;
        if n % stride == 0 || n == n_steps || blowup {
            traj.times.push(t);
            traj.m.push(m);
            traj.r.push(r);
            traj.loss.push(loss);
            traj.lambda.push(lambda);
        }
        if blowup {
            traj.truncated = true;
            break;
        }
        if n == n_steps {
            break;
        }
        mask_frozen(&mut g, opts.trainable);
        params.axpy(-h, &g);
    }
    Ok(Attempt::Done(Box::new((traj, params))))
}

/// Integrate `dθ/dt = −∇L_λ(t)(θ)` from `init` over `[0, t_end]`.
///
/// The step is capped for stability and halved (restarting from `init`) when
/// the state turns non-finite; a blow-up past [`BLOWUP`] truncates the
/// trajectory with `truncated = true`.
pub fn integrate_flow_from(
    p: &StylizedProblem,
    init: &StylizedParams,
    schedule: &FlowSchedule,
    dt: f64,
    t_end: f64,
    opts: &FlowOptions,
) -> Result<(OrderParamTrajectory, StylizedParams)> {
    schedule.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidConfig(format!("flow step {dt} must be > 0")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "flow horizon {t_end} must be finite and ≥ 0"
        )));
    }
    if !(opts.record_every > 0.0) {
        return Err(Error::InvalidConfig("record_every must be > 0".into()));
    }
    let mut h = stable_dt(p, schedule, dt);
    for _ in 0..=opts.max_halvings {
        match attempt(p, init, schedule, h, t_end, opts)? {
            Attempt::Done(done) => return Ok(*done),
            Attempt::NonFinite => h /= 2.0,
        }
    }
    Err(Error::NonFiniteUpdate(format!(
        "stylized flow stayed non-finite after {} halvings",
        opts.max_halvings
    )))
}

/// Flow from a fresh N(0, γ²/d) initialization drawn from `seed`.
pub fn integrate_flow(
    p: &StylizedProblem,
    gamma: f64,
    schedule: &FlowSchedule,
    dt: f64,
    t_end: f64,
    seed: u64,
    opts: &FlowOptions,
) -> Result<OrderParamTrajectory> {
    let init = flow_init(p, gamma, seed, opts.zero_init);
    Ok(integrate_flow_from(p, &init, schedule, dt, t_end, opts)?.0)
}

/// Slice of the approach to the plateau used by [`fit_rate`], as fractions
/// of the total change `x(end) − x(0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub lo: f64,
    pub hi: f64,
}

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow { lo: 0.5, hi: 0.999 }
    }
}

/// Exponential approach rate `μ̂` of `x(t)` toward its final value.
///
/// Fits `log|x(end) − x(t)| = a − μ̂·t` by least squares on samples whose
/// approach fraction lies in the window. Fails on fewer than three samples,
/// a flat trajectory, or a non-monotone slice.
pub fn fit_rate(times: &[f64], values: &[f64], window: FitWindow) -> Result<f64> {
    if times.len() != values.len() {
        return Err(Error::FitFailed("times and values differ in length".into()));
    }
    if times.len() < 3 {
        return Err(Error::FitFailed(format!("{} samples, need at least 3", times.len())));
    }
    if !(0.0 <= window.lo && window.lo < window.hi && window.hi < 1.0) {
        return Err(Error::FitFailed(format!(
            "window [{}, {}] must satisfy 0 ≤ lo < hi < 1",
            window.lo, window.hi
        )));
    }
    let (x0, x_end) = (values[0], *values.last().expect("non-empty"));
    let total = x_end - x0;
    if !(total.abs() > 0.0) || !total.is_finite() {
        return Err(Error::FitFailed("no net change to fit".into()));
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, x)| {
            let f = (**x - x0) / total;
            f >= window.lo && f <= window.hi
        })
        .map(|(t, x)| (*t, *x))
        .collect();
    if pts.len() < 3 {
        return Err(Error::FitFailed(format!(
            "{} samples inside the fit window, need 3",
            pts.len()
        )));
    }
    let sign = total.signum();
    if pts.windows(2).any(|w| sign * (w[1].1 - w[0].1) < 0.0) {
        return Err(Error::FitFailed(
            "trajectory is not monotone inside the fit window".into(),
        ));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| (x_end - p.1).abs().ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::FitFailed("fit samples share one time".into()));
    }
    let rate = -sxy / sxx;
    if !rate.is_finite() {
        return Err(Error::FitFailed("non-finite slope".into()));
    }
    Ok(rate)
}
