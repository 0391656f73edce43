use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    None,
    Constant,
    Windowed,
}

/// λ(t) over `total` optimization steps: zero, constant, or constant inside
/// the half-open window `[start, end)` and zero elsewhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WdSchedule {
    pub kind: ScheduleKind,
    pub lambda: f64,
    pub start: usize,
    pub end: usize,
    pub total: usize,
}

impl WdSchedule {
    pub fn none(total: usize) -> Self {
        WdSchedule {
            kind: ScheduleKind::None,
            lambda: 0.0,
            start: 0,
            end: 0,
            total,
        }
    }

    pub fn constant(lambda: f64, total: usize) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(WdSchedule {
            kind: ScheduleKind::Constant,
            lambda,
            start: 0,
            end: total,
            total,
        })
    }

    pub fn windowed(lambda: f64, start: usize, end: usize, total: usize) -> Result<Self> {
        check_lambda(lambda)?;
        if !(start < end && end <= total) {
            return Err(Error::InvalidConfig(format!(
                "window [{start}, {end}) must satisfy 0 ≤ t1 < t2 ≤ T = {total}"
            )));
        }
        Ok(WdSchedule {
            kind: ScheduleKind::Windowed,
            lambda,
            start,
            end,
            total,
        })
    }

    /// Parse `kind,λ,t1,t2` (`none`, `constant,1e-3`, `windowed,4e-3,5000,10000`).
    pub fn parse(spec: &str, total: usize) -> Result<Self> {
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| Error::Parse(format!("schedule `{spec}` missing field {i}")))?
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number in schedule `{spec}`")))
        };
        match parts[0] {
            "none" => Ok(WdSchedule::none(total)),
            "constant" => WdSchedule::constant(num(1)?, total),
            "windowed" => {
                let (t1, t2) = (num(2)?, num(3)?);
                if t1 < 0.0 || t2 < 0.0 || t1.fract() != 0.0 || t2.fract() != 0.0 {
                    return Err(Error::Parse(format!("window bounds in `{spec}` must be step indices")));
                }
                WdSchedule::windowed(num(1)?, t1 as usize, t2 as usize, total)
            }
            other => Err(Error::Parse(format!("unknown schedule kind `{other}`"))),
        }
    }

    /// Same schedule over a new horizon, window endpoints scaled linearly.
    pub fn rescaled(&self, total: usize) -> Result<Self> {
        let scale = |t: usize| -> usize {
            ((t as u128 * total as u128 + self.total as u128 / 2) / self.total.max(1) as u128) as usize
        };
        match self.kind {
            ScheduleKind::None => Ok(WdSchedule::none(total)),
            ScheduleKind::Constant => WdSchedule::constant(self.lambda, total),
            ScheduleKind::Windowed => WdSchedule::windowed(self.lambda, scale(self.start), scale(self.end), total),
        }
    }

    pub fn active(&self, t: usize) -> bool {
        match self.kind {
            ScheduleKind::None => false,
            ScheduleKind::Constant => true,
            ScheduleKind::Windowed => self.start <= t && t < self.end,
        }
    }

    pub fn lambda_at(&self, t: usize) -> Result<f64> {
        if t >= self.total {
            return Err(Error::StepOutOfRange { t, total: self.total });
        }
        Ok(if self.active(t) { self.lambda } else { 0.0 })
    }

    pub fn active_steps(&self) -> usize {
        match self.kind {
            ScheduleKind::None => 0,
            ScheduleKind::Constant => self.total,
            ScheduleKind::Windowed => self.end - self.start,
        }
    }

    /// Closed-form budget `λ · (number of active steps)`.
    pub fn budget(&self) -> f64 {
        self.lambda * self.active_steps() as f64
    }

    /// `Σ_t lambda_at(t)`, accumulated without rounding error.
    pub fn realized_budget(&self) -> f64 {
        exact_sum((0..self.total).map(|t| if self.active(t) { self.lambda } else { 0.0 }))
    }

    /// Short label such as `windowed[5000,10000)@0.004`.
    pub fn label(&self) -> String {
        match self.kind {
            ScheduleKind::None => "none".into(),
            ScheduleKind::Constant => format!("constant@{}", self.lambda),
            ScheduleKind::Windowed => format!("windowed[{},{})@{}", self.start, self.end, self.lambda),
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("λ = {lambda} must be finite and ≥ 0")))
    }
}

/// Correctly rounded floating-point sum (Shewchuk's partials).
pub fn exact_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in xs {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    // Round-half-even correction across the top partials.
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Where a window sits inside the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Early,
    Middle,
    Late,
}

impl Placement {
    pub fn start(self, width: usize, total: usize) -> usize {
        match self {
            Placement::Early => 0,
            Placement::Middle => (total - width) / 2,
            Placement::Late => total - width,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Placement::Early => "early",
            Placement::Middle => "middle",
            Placement::Late => "late",
        }
    }
}

/// Windowed schedules of equal budget: for each `(placement, width)` the
/// strength is `budget / width`, and the product must reproduce the budget
/// exactly in floating point.
pub fn build_budget_matched(placements: &[(Placement, usize)], budget: f64, total: usize) -> Result<Vec<WdSchedule>> {
    if !(budget >= 0.0 && budget.is_finite()) {
        return Err(Error::InvalidConfig(format!("budget {budget} must be finite and ≥ 0")));
    }
    placements
        .iter()
        .map(|&(placement, width)| {
            if width == 0 || width > total {
                return Err(Error::InvalidConfig(format!("width {width} outside [1, {total}]")));
            }
            if budget == 0.0 {
                return Ok(WdSchedule::none(total));
            }
            let lambda = budget / width as f64;
            if lambda * width as f64 != budget {
                return Err(Error::NonRepresentableBudget { budget, width });
            }
            let start = placement.start(width, total);
            WdSchedule::windowed(lambda, start, start + width, total)
        })
        .collect()
}
