//! Constant versus time-localized weight decay on modular addition.
//!
//! The best constant λ is picked from the grid by median grok step
//! (no grok counts as +∞; ties go to the smaller λ), then the windowed
//! schedule `[w0·T, w1·T)` is run at that λ. Runs stop at the first
//! checkpoint that groks, since only the crossing step is reported.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{generate_modular_task, ModularTaskSpec};
use crate::training::{train, OptConfig, RunLabels, TrainConfig, WdSchedule};
use crate::transformer::Arch;

use super::summary::{grok_step, median, GROK_THRESHOLD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrokConfig {
    pub modulus: usize,
    pub train_fraction: f64,
    pub lambdas: Vec<f64>,
    pub total_steps: usize,
    pub seeds: Vec<u64>,
    pub d_model: usize,
    pub gamma: f64,
    /// Window as fractions of T.
    pub window: (f64, f64),
    pub checkpoint_every: usize,
    pub threshold: f64,
}

impl GrokConfig {
    /// p = 67, 40% train, d = 128.
    pub fn reference() -> Self {
        GrokConfig {
            modulus: 67,
            train_fraction: 0.4,
            lambdas: vec![0.01, 0.1, 0.3, 1.0, 3.0],
            total_steps: 10_000,
            seeds: vec![0, 1, 2],
            d_model: 128,
            gamma: 0.8,
            window: (0.1, 0.6),
            checkpoint_every: 100,
            threshold: GROK_THRESHOLD,
        }
    }

    /// p = 23, d = 64, one seed.
    pub fn desk() -> Self {
        GrokConfig {
            modulus: 23,
            d_model: 64,
            seeds: vec![0],
            ..GrokConfig::reference()
        }
    }

    fn schedule_windowed(&self, lambda: f64) -> Result<WdSchedule> {
        let t = self.total_steps as f64;
        let (a, b) = (
            (self.window.0 * t).round() as usize,
            (self.window.1 * t).round() as usize,
        );
        let b = b.min(self.total_steps);
        if a >= b {
            // Degenerate horizon: no step falls inside the window.
            return Ok(WdSchedule::none(self.total_steps));
        }
        WdSchedule::windowed(lambda, a, b, self.total_steps)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrokRun {
    pub schedule: String,
    pub lambda: f64,
    pub seed: u64,
    /// `None` means "no grok" within T.
    pub grok_step: Option<usize>,
    pub final_test_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrokTable {
    pub lambda_star: f64,
    /// Constant-λ runs for every grid value.
    pub constant: Vec<GrokRun>,
    /// Windowed runs at λ*.
    pub windowed: Vec<GrokRun>,
}

fn med_step(runs: &[GrokRun]) -> f64 {
    let steps: Vec<f64> = runs
        .iter()
        .map(|r| r.grok_step.map_or(f64::INFINITY, |s| s as f64))
        .collect();
    median(&steps)
}

impl GrokTable {
    pub fn constant_at_star(&self) -> Vec<&GrokRun> {
        self.constant.iter().filter(|r| r.lambda == self.lambda_star).collect()
    }

    /// Median grok step (∞ when most seeds never grok).
    pub fn median_constant(&self) -> f64 {
        med_step(&self.constant_at_star().into_iter().cloned().collect::<Vec<_>>())
    }

    pub fn median_windowed(&self) -> f64 {
        med_step(&self.windowed)
    }

    pub fn rows(&self) -> Vec<(String, f64, u64, String)> {
        self.constant
            .iter()
            .chain(&self.windowed)
            .map(|r| {
                (
                    r.schedule.clone(),
                    r.lambda,
                    r.seed,
                    r.grok_step.map_or("no grok".to_string(), |s| s.to_string()),
                )
            })
            .collect()
    }
}

fn run_one(cfg: &GrokConfig, schedule: WdSchedule, lambda: f64, name: &str, seed: u64) -> Result<GrokRun> {
    let data = generate_modular_task(&ModularTaskSpec {
        modulus: cfg.modulus,
        train_fraction: cfg.train_fraction,
        seed,
    })?;
    let arch = Arch {
        d_model: cfg.d_model,
        ..Arch::reference(data.vocab, cfg.gamma)
    };
    let mut tc = TrainConfig::new(arch, OptConfig::adamw(cfg.total_steps), schedule, seed);
    tc.checkpoint_every = cfg.checkpoint_every;
    tc.stop_at_eval_acc = Some(cfg.threshold);
    let log = train(&data, &tc, &RunLabels::default())?;
    Ok(GrokRun {
        schedule: name.into(),
        lambda,
        seed,
        grok_step: if log.diverged() {
            None
        } else {
            grok_step(&log, cfg.threshold)
        },
        final_test_acc: log.last().and_then(|r| r.ood_acc),
    })
}

pub fn grokking_compare(cfg: &GrokConfig) -> Result<GrokTable> {
    if cfg.lambdas.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::InvalidConfig(
            "grokking comparison needs λ values and seeds".into(),
        ));
    }
    if !(0.0 <= cfg.window.0 && cfg.window.0 <= cfg.window.1 && cfg.window.1 <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "window fractions {:?} outside [0, 1]",
            cfg.window
        )));
    }
    let mut constant = Vec::new();
    for &l in &cfg.lambdas {
        for &s in &cfg.seeds {
            constant.push(run_one(
                cfg,
                WdSchedule::constant(l, cfg.total_steps)?,
                l,
                "constant",
                s,
            )?);
        }
    }
    let mut lambda_star = cfg.lambdas[0];
    let mut best = f64::INFINITY;
    for &l in &cfg.lambdas {
        let runs: Vec<GrokRun> = constant.iter().filter(|r| r.lambda == l).cloned().collect();
        let m = med_step(&runs);
        if m < best {
            best = m;
            lambda_star = l;
        }
    }
    let windowed = cfg
        .seeds
        .iter()
        .map(|&s| run_one(cfg, cfg.schedule_windowed(lambda_star)?, lambda_star, "windowed", s))
        .collect::<Result<Vec<_>>>()?;
    Ok(GrokTable {
        lambda_star,
        constant,
        windowed,
    })
}
