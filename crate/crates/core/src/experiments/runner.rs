//! Sweep execution: one directory per run, a fixed worker pool, and a
//! summary written after every run has finished.
//!
//! ```text
//! OUT/spec.toml                    resolved spec
//! OUT/runs/<cell>__seed<k>/run.json   what the run is
//! OUT/runs/<cell>__seed<k>/log.jsonl  trajectory (absent if the run failed)
//! OUT/runs/<cell>__seed<k>/error.txt  failure message (crash or error)
//! OUT/runs/<cell>__seed<k>/final.json final weights when save_checkpoints
//! OUT/summary.csv, OUT/summary.json
//! ```

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::{train_with_params, RunLabels, TrainConfig, TrajectoryLog, WdSchedule};

use super::spec::{optimizer_name, Cell, SweepSpec};
use super::summary::{summarize, SummaryTable};

pub const RUN_SCHEMA: &str = "critwin-run/1";

/// Identity of one run, written before it starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema: String,
    pub experiment: String,
    pub cell: String,
    pub seed: u64,
    pub optimizer: String,
    pub gamma: f64,
    pub n_layers: usize,
    pub schedule_name: String,
    pub schedule: WdSchedule,
}

pub fn run_dir_name(cell: &str, seed: u64) -> String {
    let safe: String = cell
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}__seed{seed}")
}

/// Train one cell × seed and return its log (and final weights).
pub fn run_cell(spec: &SweepSpec, cell: &Cell, seed: u64) -> Result<(TrajectoryLog, crate::transformer::ModelParams)> {
    let data = spec.task.dataset(seed)?;
    let mut cfg = TrainConfig::new(
        spec.arch(cell.gamma, cell.n_layers),
        spec.opt(cell.optimizer),
        cell.schedule.clone(),
        seed,
    );
    cfg.checkpoint_every = spec.checkpoint_every;
    cfg.bridge_k = spec.bridge_k;
    cfg.stop_at_eval_acc = spec.stop_at_eval_acc;
    let labels = RunLabels {
        task: spec.task.describe(seed),
        labels: BTreeMap::from([
            ("experiment".to_string(), spec.experiment.name().to_string()),
            ("cell".to_string(), cell.name.clone()),
            ("schedule_name".to_string(), cell.schedule_name.clone()),
        ]),
    };
    train_with_params(&data, &cfg, &labels)
}

fn meta(spec: &SweepSpec, cell: &Cell, seed: u64) -> RunMeta {
    RunMeta {
        schema: RUN_SCHEMA.into(),
        experiment: spec.experiment.name().into(),
        cell: cell.name.clone(),
        seed,
        optimizer: optimizer_name(cell.optimizer).into(),
        gamma: cell.gamma,
        n_layers: cell.n_layers,
        schedule_name: cell.schedule_name.clone(),
        schedule: cell.schedule.clone(),
    }
}

/// A finished log from an earlier invocation with the same settings.
fn reusable(dir: &Path, spec: &SweepSpec, cell: &Cell, seed: u64) -> bool {
    let Ok(log) = TrajectoryLog::read(&dir.join("log.jsonl")) else {
        return false;
    };
    let Ok(text) = std::fs::read_to_string(dir.join("run.json")) else {
        return false;
    };
    let Ok(old) = serde_json::from_str::<RunMeta>(&text) else {
        return false;
    };
    old == meta(spec, cell, seed)
        && log.header.seed == seed
        && log.header.schedule == cell.schedule
        && log.header.arch == spec.arch(cell.gamma, cell.n_layers)
        && log.header.opt == spec.opt(cell.optimizer)
        && log.header.checkpoint_every == spec.checkpoint_every
}

fn execute(spec: &SweepSpec, cell: &Cell, seed: u64, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    if reusable(dir, spec, cell, seed) {
        return Ok(());
    }
    for stale in ["log.jsonl", "error.txt", "final.json"] {
        let _ = std::fs::remove_file(dir.join(stale));
    }
    std::fs::write(
        dir.join("run.json"),
        serde_json::to_string_pretty(&meta(spec, cell, seed))?,
    )?;
    let outcome = catch_unwind(AssertUnwindSafe(|| run_cell(spec, cell, seed)));
    let failure = match outcome {
        Ok(Ok((log, params))) => {
            log.write(&dir.join("log.jsonl"))?;
            if spec.save_checkpoints {
                params.save(&dir.join("final.json"), log.summary.steps_completed)?;
            }
            None
        }
        Ok(Err(e)) => Some(e.to_string()),
        Err(panic) => Some(
            panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "run panicked".into()),
        ),
    };
    if let Some(msg) = failure {
        std::fs::write(dir.join("error.txt"), msg)?;
    }
    Ok(())
}

/// Progress callback: `(finished runs, total runs, run directory)`.
pub type Progress<'a> = &'a (dyn Fn(usize, usize, &Path) + Sync);

/// Run every cell × seed with `workers` threads, then summarize.
///
/// Failures and divergences are recorded in each run's directory and never
/// stop the sweep.
pub fn run_sweep(spec: &SweepSpec, out: &Path, workers: usize, progress: Option<Progress>) -> Result<SummaryTable> {
    spec.validate()?;
    if workers == 0 {
        return Err(Error::InvalidConfig("workers must be ≥ 1".into()));
    }
    let cells = spec.cells()?;
    std::fs::create_dir_all(out.join("runs"))?;
    std::fs::write(out.join("spec.toml"), spec.to_toml()?)?;
    let jobs: Vec<(&Cell, u64, PathBuf)> = cells
        .iter()
        .flat_map(|c| spec.seeds.iter().map(move |&s| (c, s)))
        .map(|(c, s)| (c, s, out.join("runs").join(run_dir_name(&c.name, s))))
        .collect();
    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let io_errors = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(jobs.len()).max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((cell, seed, dir)) = jobs.get(i) else { break };
                if let Err(e) = execute(spec, cell, *seed, dir) {
                    io_errors
                        .lock()
                        .expect("poisoned")
                        .push(format!("{}: {e}", dir.display()));
                }
                let n = done.fetch_add(1, Ordering::SeqCst) + 1;
                if let Some(p) = progress {
                    p(n, jobs.len(), dir);
                }
            });
        }
    });
    let io_errors = io_errors.into_inner().expect("poisoned");
    if !io_errors.is_empty() {
        return Err(Error::Io(std::io::Error::other(format!(
            "could not record runs: {}",
            io_errors.join("; ")
        ))));
    }
    let table = summarize(out)?;
    table.write_csv(&out.join("summary.csv"))?;
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&table)?)?;
    Ok(table)
}
