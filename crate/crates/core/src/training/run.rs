use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, DEFAULT_BRIDGE_K};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::task::Dataset;
use crate::transformer::{evaluate, init_params, loss_and_grad, Arch, Batch, DecayMask, ModelParams};

use super::log::{CheckpointRecord, RunHeader, RunSummary, TrajectoryLog, Verdict, LOG_SCHEMA};
use super::optim::{step, OptConfig, OptState};
use super::schedule::WdSchedule;

/// Minibatch losses above this count as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e6;
pub const DEFAULT_CHECKPOINT_EVERY: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub opt: OptConfig,
    pub schedule: WdSchedule,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub bridge_k: usize,
    /// Stop once held-out accuracy reaches this value at a checkpoint.
    /// Used by the grokking comparison, where only the first crossing matters.
    #[serde(default)]
    pub stop_at_eval_acc: Option<f64>,
}

impl TrainConfig {
    pub fn new(arch: Arch, opt: OptConfig, schedule: WdSchedule, seed: u64) -> Self {
        TrainConfig {
            arch,
            opt,
            schedule,
            seed,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
            bridge_k: DEFAULT_BRIDGE_K,
            stop_at_eval_acc: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.opt.validate()?;
        if self.schedule.total != self.opt.total_steps {
            return Err(Error::InvalidConfig(format!(
                "schedule horizon {} differs from total_steps {}",
                self.schedule.total, self.opt.total_steps
            )));
        }
        if self.bridge_k == 0 || self.bridge_k > self.arch.d_model {
            return Err(Error::InvalidConfig(format!(
                "bridge k = {} outside [1, d]",
                self.bridge_k
            )));
        }
        Ok(())
    }

    /// Step 0, every `checkpoint_every` steps, ⌊0.2·T⌋ and T.
    pub fn checkpoint_steps(&self) -> BTreeSet<usize> {
        let total = self.opt.total_steps;
        let mut s: BTreeSet<usize> = [0, total / 5, total].into_iter().collect();
        if self.checkpoint_every > 0 {
            s.extend((0..=total).step_by(self.checkpoint_every));
        }
        s
    }
}

/// Data description for the log header.
#[derive(Clone, Debug, Default)]
pub struct RunLabels {
    pub task: String,
    pub labels: BTreeMap<String, String>,
}

fn record(params: &ModelParams, data: &Dataset, step: usize, lambda: f64, k: usize) -> Result<CheckpointRecord> {
    let (train_loss, train_acc) = evaluate(params, &data.train)?;
    let ood_acc = if data.eval.is_empty() {
        None
    } else {
        Some(evaluate(params, &data.eval)?.1)
    };
    let diag = diagnostics::diagnose(params, k)?;
    Ok(CheckpointRecord {
        step,
        train_loss,
        train_acc,
        ood_acc,
        condensation: diag.condensation,
        layer_pr: diag.layer_pr,
        bridge: diag.bridge,
        weight_norm: diag.weight_norm,
        lambda,
    })
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFiniteActivation { .. } | Error::NonFiniteUpdate(_))
}

/// Run the time-localized training loop and return the log and final weights.
pub fn train_with_params(
    data: &Dataset,
    cfg: &TrainConfig,
    labels: &RunLabels,
) -> Result<(TrajectoryLog, ModelParams)> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if data.vocab != cfg.arch.vocab {
        return Err(Error::InvalidConfig(format!(
            "dataset vocabulary {} differs from arch vocab {}",
            data.vocab, cfg.arch.vocab
        )));
    }
    let total = cfg.opt.total_steps;
    let header = RunHeader {
        schema: LOG_SCHEMA.to_string(),
        task: labels.task.clone(),
        n_train: data.train.len(),
        n_eval: data.eval.len(),
        arch: cfg.arch.clone(),
        opt: cfg.opt.clone(),
        schedule: cfg.schedule.clone(),
        seed: cfg.seed,
        checkpoint_every: cfg.checkpoint_every,
        bridge_k: cfg.bridge_k,
        labels: labels.labels.clone(),
    };
    let lambda_at = |t: usize| if t < total { cfg.schedule.lambda_at(t) } else { Ok(0.0) };

    let mut params = init_params(&cfg.arch, cfg.seed)?;
    let mask = DecayMask::standard(&params);
    let mut state = OptState::new(&params);
    let mut rng = stream(cfg.seed, Stream::Minibatch);
    let checkpoints = cfg.checkpoint_steps();
    let mut records = vec![record(&params, data, 0, lambda_at(0)?, cfg.bridge_k)?];

    let diverged = |records: Vec<CheckpointRecord>, t: usize, reason: String| TrajectoryLog {
        header: header.clone(),
        summary: RunSummary {
            verdict: Verdict::Diverged,
            steps_completed: t,
            final_train_acc: records.last().map(|r| r.train_acc),
            final_ood_acc: records.last().and_then(|r| r.ood_acc),
            diverged_at: Some(t),
            reason: Some(reason),
        },
        records,
    };
    let stop_hit = |r: &CheckpointRecord| matches!((cfg.stop_at_eval_acc, r.ood_acc), (Some(th), Some(a)) if a >= th);

    let mut examples = Vec::with_capacity(cfg.opt.batch_size);
    let mut stopped = total > 0 && stop_hit(&records[0]);
    let mut steps_done = 0;
    if !stopped {
        for t in 0..total {
            let lambda = lambda_at(t)?;
            examples.clear();
            for _ in 0..cfg.opt.batch_size {
                examples.push(data.train[rng.random_range(0..data.train.len())]);
            }
            let batch = Batch::from_examples(&examples);
            let (loss, grads) = match loss_and_grad(&params, &batch) {
                Ok(v) => v,
                Err(e) if is_divergence(&e) => return Ok((diverged(records, t, e.to_string()), params)),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                return Ok((
                    diverged(records, t, format!("minibatch loss {loss} at step {t}")),
                    params,
                ));
            }
            match step(&mut params, &mut state, &grads, lambda, &mask, &cfg.opt) {
                Ok(()) => {}
                Err(e) if is_divergence(&e) => return Ok((diverged(records, t, e.to_string()), params)),
                Err(e) => return Err(e),
            }
            steps_done = t + 1;
            if checkpoints.contains(&steps_done) {
                match record(&params, data, steps_done, lambda_at(steps_done)?, cfg.bridge_k) {
                    Ok(r) if r.train_loss.is_finite() => {
                        let hit = stop_hit(&r);
                        records.push(r);
                        if hit && steps_done < total {
                            stopped = true;
                            break;
                        }
                    }
                    Ok(r) => {
                        let reason = format!("train loss {} at step {steps_done}", r.train_loss);
                        return Ok((diverged(records, steps_done, reason), params));
                    }
                    Err(e) if is_divergence(&e) => return Ok((diverged(records, steps_done, e.to_string()), params)),
                    Err(e) => return Err(e),
                }
            }
        }
    }
    let last = records.last().expect("initial record");
    let summary = RunSummary {
        verdict: if stopped { Verdict::Stopped } else { Verdict::Completed },
        steps_completed: steps_done,
        final_train_acc: Some(last.train_acc),
        final_ood_acc: last.ood_acc,
        diverged_at: None,
        reason: None,
    };
    Ok((
        TrajectoryLog {
            header,
            records,
            summary,
        },
        params,
    ))
}

pub fn train(data: &Dataset, cfg: &TrainConfig, labels: &RunLabels) -> Result<TrajectoryLog> {
    Ok(train_with_params(data, cfg, labels)?.0)
}
