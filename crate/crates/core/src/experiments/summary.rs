//! Per-cell aggregation of a sweep directory and its CSV export.
//!
//! CSV columns (fixed; the first column carries the schema tag on every row):
//! `schema_version, experiment, cell, optimizer, gamma, n_layers, schedule,
//! kind, lambda, start, end, total_steps, budget, n_runs, n_complete,
//! n_diverged, n_failed, ood_mean, ood_std, ood_median, train_mean,
//! train_std, train_median, c02_mean, c02_std, b02_mean, weight_norm_mean,
//! grok_n, grok_median, per_seed_ood`.
//! Standard deviations are population deviations over seeds; empty fields
//! mean "no data". `per_seed_ood` is `seed:value` pairs joined by `;`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::{TrajectoryLog, Verdict, WdSchedule};

use super::runner::{RunMeta, RUN_SCHEMA};

pub const SUMMARY_SCHEMA: &str = "critwin-summary/1";
/// Held-out accuracy that counts as grokked.
pub const GROK_THRESHOLD: f64 = 0.95;

pub const CSV_COLUMNS: [&str; 30] = [
    "schema_version",
    "experiment",
    "cell",
    "optimizer",
    "gamma",
    "n_layers",
    "schedule",
    "kind",
    "lambda",
    "start",
    "end",
    "total_steps",
    "budget",
    "n_runs",
    "n_complete",
    "n_diverged",
    "n_failed",
    "ood_mean",
    "ood_std",
    "ood_median",
    "train_mean",
    "train_std",
    "train_median",
    "c02_mean",
    "c02_std",
    "b02_mean",
    "weight_norm_mean",
    "grok_n",
    "grok_median",
    "per_seed_ood",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Stopped,
    Diverged,
    Failed,
}

/// Final-step metrics of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub meta: RunMeta,
    pub status: RunStatus,
    pub final_ood: Option<f64>,
    pub final_train: Option<f64>,
    /// Condensation index at step ⌊0.2·T⌋.
    pub c02: Option<f64>,
    /// Bridge alignment at step ⌊0.2·T⌋.
    pub b02: Option<f64>,
    pub weight_norm: Option<f64>,
    /// First checkpoint with held-out accuracy ≥ [`GROK_THRESHOLD`].
    pub grok_step: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub median: f64,
}

impl Stats {
    pub fn of(xs: &[f64]) -> Option<Stats> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        Some(Stats {
            mean,
            std,
            median: median(xs),
        })
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Average ranks (1-based), ties sharing their mean rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks).
/// `None` for fewer than two points or a constant input.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        None
    } else {
        Some(cov / (vx * vy).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub experiment: String,
    pub cell: String,
    pub optimizer: String,
    pub gamma: f64,
    pub n_layers: usize,
    pub schedule_name: String,
    pub schedule: WdSchedule,
    pub n_runs: usize,
    /// Completed or stopped runs; the ones aggregated below.
    pub n_complete: usize,
    pub n_diverged: usize,
    pub n_failed: usize,
    pub ood: Option<Stats>,
    pub train: Option<Stats>,
    pub c02: Option<Stats>,
    pub b02: Option<Stats>,
    pub weight_norm: Option<Stats>,
    pub grok_n: usize,
    pub grok_median: Option<f64>,
    /// `(seed, final OOD)` of aggregated runs, by seed.
    pub per_seed_ood: Vec<(u64, f64)>,
}

impl CellSummary {
    /// Some run of this cell failed, diverged, or is missing.
    pub fn incomplete(&self) -> bool {
        self.n_complete < self.n_runs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub schema: String,
    pub cells: Vec<CellSummary>,
    pub runs: Vec<RunOutcome>,
    /// Spearman ρ between C(0.2T) and final OOD over all aggregated runs.
    pub spearman_c02_ood: Option<f64>,
    /// Spearman ρ between bridge alignment at 0.2T and final OOD.
    pub spearman_b02_ood: Option<f64>,
}

pub fn grok_step(log: &TrajectoryLog, threshold: f64) -> Option<usize> {
    log.records
        .iter()
        .find(|r| r.ood_acc.is_some_and(|a| a >= threshold))
        .map(|r| r.step)
}

/// Outcome of one run directory, or `None` when it has no `run.json`.
pub fn read_run(dir: &Path) -> Result<Option<RunOutcome>> {
    let meta_path = dir.join("run.json");
    if !meta_path.exists() {
        return Ok(None);
    }
    let meta: RunMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)?;
    if meta.schema != RUN_SCHEMA {
        return Err(Error::Schema {
            path: meta_path,
            expected: RUN_SCHEMA.into(),
            found: meta.schema,
        });
    }
    let log_path = dir.join("log.jsonl");
    let mut out = RunOutcome {
        meta,
        status: RunStatus::Failed,
        final_ood: None,
        final_train: None,
        c02: None,
        b02: None,
        weight_norm: None,
        grok_step: None,
        error: None,
    };
    if !log_path.exists() {
        out.error = Some(std::fs::read_to_string(dir.join("error.txt")).unwrap_or_else(|_| "no log written".into()));
        return Ok(Some(out));
    }
    let log = TrajectoryLog::read(&log_path)?;
    out.status = match log.summary.verdict {
        Verdict::Completed => RunStatus::Completed,
        Verdict::Stopped => RunStatus::Stopped,
        Verdict::Diverged => RunStatus::Diverged,
    };
    out.grok_step = grok_step(&log, GROK_THRESHOLD);
    let at02 = log.at(log.header.opt.total_steps / 5);
    out.c02 = at02.map(|r| r.condensation);
    out.b02 = at02.and_then(|r| r.bridge.as_ref().map(|b| b.value));
    if out.status != RunStatus::Diverged {
        let last = log.last().expect("logs start with a step-0 record");
        out.final_ood = last.ood_acc;
        out.final_train = Some(last.train_acc);
        out.weight_norm = Some(last.weight_norm);
    } else {
        out.error = log.summary.reason.clone();
    }
    Ok(Some(out))
}

/// Aggregate every run under `dir/runs` (or `dir` itself when it has no
/// `runs` subdirectory). Order of files on disk does not matter.
pub fn summarize(dir: &Path) -> Result<SummaryTable> {
    let root = if dir.join("runs").is_dir() {
        dir.join("runs")
    } else {
        dir.to_path_buf()
    };
    let mut runs = Vec::new();
    for entry in std::fs::read_dir(&root)? {
        let path = entry?.path();
        if path.is_dir() {
            if let Some(r) = read_run(&path)? {
                runs.push(r);
            }
        }
    }
    summarize_runs(runs)
}

pub fn summarize_runs(mut runs: Vec<RunOutcome>) -> Result<SummaryTable> {
    if !runs
        .iter()
        .any(|r| matches!(r.status, RunStatus::Completed | RunStatus::Stopped))
    {
        return Err(Error::Empty("complete run logs"));
    }
    runs.sort_by(|a, b| (&a.meta.cell, a.meta.seed).cmp(&(&b.meta.cell, b.meta.seed)));
    let mut by_cell: BTreeMap<&str, Vec<&RunOutcome>> = BTreeMap::new();
    for r in &runs {
        by_cell.entry(r.meta.cell.as_str()).or_default().push(r);
    }
    let mut cells = Vec::new();
    for (name, rs) in &by_cell {
        let ok: Vec<&&RunOutcome> = rs
            .iter()
            .filter(|r| matches!(r.status, RunStatus::Completed | RunStatus::Stopped))
            .collect();
        let vals = |f: &dyn Fn(&RunOutcome) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
        let grok: Vec<f64> = rs.iter().filter_map(|r| r.grok_step.map(|s| s as f64)).collect();
        let m = &rs[0].meta;
        cells.push(CellSummary {
            experiment: m.experiment.clone(),
            cell: name.to_string(),
            optimizer: m.optimizer.clone(),
            gamma: m.gamma,
            n_layers: m.n_layers,
            schedule_name: m.schedule_name.clone(),
            schedule: m.schedule.clone(),
            n_runs: rs.len(),
            n_complete: ok.len(),
            n_diverged: rs.iter().filter(|r| r.status == RunStatus::Diverged).count(),
            n_failed: rs.iter().filter(|r| r.status == RunStatus::Failed).count(),
            ood: Stats::of(&vals(&|r| r.final_ood)),
            train: Stats::of(&vals(&|r| r.final_train)),
            c02: Stats::of(&vals(&|r| r.c02)),
            b02: Stats::of(&vals(&|r| r.b02)),
            weight_norm: Stats::of(&vals(&|r| r.weight_norm)),
            grok_n: grok.len(),
            grok_median: (!grok.is_empty()).then(|| median(&grok)),
            per_seed_ood: ok
                .iter()
                .filter_map(|r| r.final_ood.map(|v| (r.meta.seed, v)))
                .collect(),
        });
    }
    let pairs = |f: &dyn Fn(&RunOutcome) -> Option<f64>| -> (Vec<f64>, Vec<f64>) {
        runs.iter()
            .filter(|r| matches!(r.status, RunStatus::Completed | RunStatus::Stopped))
            .filter_map(|r| Some((f(r)?, r.final_ood?)))
            .unzip()
    };
    let (c, o) = pairs(&|r| r.c02);
    let (b, ob) = pairs(&|r| r.b02);
    Ok(SummaryTable {
        schema: SUMMARY_SCHEMA.into(),
        spearman_c02_ood: spearman(&c, &o),
        spearman_b02_ood: spearman(&b, &ob),
        cells,
        runs,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl SummaryTable {
    pub fn cell(&self, name: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.cell == name)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(CSV_COLUMNS).map_err(io)?;
        for c in &self.cells {
            let s = &c.schedule;
            let per_seed = c
                .per_seed_ood
                .iter()
                .map(|(seed, v)| format!("{seed}:{v}"))
                .collect::<Vec<_>>()
                .join(";");
            let kind = serde_json::to_value(s.kind)?.as_str().unwrap_or_default().to_string();
            let row: Vec<String> = vec![
                SUMMARY_SCHEMA.into(),
                c.experiment.clone(),
                c.cell.clone(),
                c.optimizer.clone(),
                c.gamma.to_string(),
                c.n_layers.to_string(),
                c.schedule_name.clone(),
                kind,
                s.lambda.to_string(),
                s.start.to_string(),
                s.end.to_string(),
                s.total.to_string(),
                s.realized_budget().to_string(),
                c.n_runs.to_string(),
                c.n_complete.to_string(),
                c.n_diverged.to_string(),
                c.n_failed.to_string(),
                opt(c.ood.map(|x| x.mean)),
                opt(c.ood.map(|x| x.std)),
                opt(c.ood.map(|x| x.median)),
                opt(c.train.map(|x| x.mean)),
                opt(c.train.map(|x| x.std)),
                opt(c.train.map(|x| x.median)),
                opt(c.c02.map(|x| x.mean)),
                opt(c.c02.map(|x| x.std)),
                opt(c.b02.map(|x| x.mean)),
                opt(c.weight_norm.map(|x| x.mean)),
                c.grok_n.to_string(),
                opt(c.grok_median),
                per_seed,
            ];
            w.write_record(&row).map_err(io)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    /// Check a CSV header against the fixed column schema.
    pub fn check_csv_header(text: &str, path: &Path) -> Result<()> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers().map_err(|e| Error::Parse(e.to_string()))?;
        let found: Vec<&str> = headers.iter().collect();
        if found != CSV_COLUMNS {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                expected: CSV_COLUMNS.join(","),
                found: found.join(","),
            });
        }
        if let Some(rec) = r.records().next() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            if rec.get(0) != Some(SUMMARY_SCHEMA) {
                return Err(Error::Schema {
                    path: path.to_path_buf(),
                    expected: SUMMARY_SCHEMA.into(),
                    found: rec.get(0).unwrap_or("<missing>").into(),
                });
            }
        }
        Ok(())
    }
}
