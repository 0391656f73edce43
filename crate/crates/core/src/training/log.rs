//! JSON Lines trajectory logs.
//!
//! Line 1 is a `header` record carrying the schema tag and every setting of
//! the run; each following line is a `checkpoint` record; the last line is a
//! `summary` record with the verdict. No timestamps, so identical runs give
//! identical bytes.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::Bridge;
use crate::error::{Error, Result};
use crate::transformer::Arch;

use super::optim::OptConfig;
use super::schedule::WdSchedule;

pub const LOG_SCHEMA: &str = "critwin-log/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub schema: String,
    /// Free-form description of the data (task kind, sizes, task seed).
    pub task: String,
    pub n_train: usize,
    pub n_eval: usize,
    pub arch: Arch,
    pub opt: OptConfig,
    pub schedule: WdSchedule,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub bridge_k: usize,
    /// Optional labels attached by sweeps (experiment id, cell name).
    #[serde(default)]
    pub labels: std::collections::BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub step: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// `None` when there is no held-out split.
    pub ood_acc: Option<f64>,
    pub condensation: f64,
    pub layer_pr: Vec<f64>,
    pub bridge: Option<Bridge>,
    pub weight_norm: f64,
    /// λ of the update that starts at this step (0 at t = T).
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Completed,
    /// Ended early because the configured held-out accuracy was reached.
    Stopped,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub verdict: Verdict,
    pub steps_completed: usize,
    pub final_train_acc: Option<f64>,
    pub final_ood_acc: Option<f64>,
    pub diverged_at: Option<usize>,
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    pub header: RunHeader,
    pub records: Vec<CheckpointRecord>,
    pub summary: RunSummary,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line {
    Header(RunHeader),
    Checkpoint(CheckpointRecord),
    Summary(RunSummary),
}

impl TrajectoryLog {
    pub fn diverged(&self) -> bool {
        self.summary.verdict == Verdict::Diverged
    }

    pub fn last(&self) -> Option<&CheckpointRecord> {
        self.records.last()
    }

    /// The record at exactly `step`, if one was taken.
    pub fn at(&self, step: usize) -> Option<&CheckpointRecord> {
        self.records.iter().find(|r| r.step == step)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let mut push = |line: &Line| -> Result<()> {
            out.push_str(&serde_json::to_string(line)?);
            out.push('\n');
            Ok(())
        };
        push(&Line::Header(self.header.clone()))?;
        for r in &self.records {
            push(&Line::Checkpoint(r.clone()))?;
        }
        push(&Line::Summary(self.summary.clone()))?;
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn parse(text: &str, path: &Path) -> Result<TrajectoryLog> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("{}: empty log", path.display())))?;
        let raw: serde_json::Value = serde_json::from_str(first)?;
        let found = raw
            .get("schema")
            .and_then(|s| s.as_str())
            .unwrap_or("<missing>")
            .to_string();
        if found != LOG_SCHEMA {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                expected: LOG_SCHEMA.into(),
                found,
            });
        }
        let header = match serde_json::from_value(raw)? {
            Line::Header(h) => h,
            _ => return Err(Error::Parse(format!("{}: first line is not a header", path.display()))),
        };
        let mut records = Vec::new();
        let mut summary = None;
        for l in lines {
            match serde_json::from_str(l)? {
                Line::Checkpoint(r) => records.push(r),
                Line::Summary(s) => summary = Some(s),
                Line::Header(_) => return Err(Error::Parse(format!("{}: duplicate header", path.display()))),
            }
        }
        let summary = summary.ok_or_else(|| Error::Parse(format!("{}: missing summary line", path.display())))?;
        Ok(TrajectoryLog {
            header,
            records,
            summary,
        })
    }

    pub fn read(path: &Path) -> Result<TrajectoryLog> {
        TrajectoryLog::parse(&std::fs::read_to_string(path)?, path)
    }
}
