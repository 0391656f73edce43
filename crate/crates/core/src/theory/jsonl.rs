//! JSON Lines output for flow trajectories and theory tables.
//!
//! Lines are tagged by `type` like the training log: a `header` line
//! (`schema: "critwin-theory/1"`, `kind`, settings), one `record` line per
//! row, and for trajectories a closing `summary` line. Trajectory records use
//! the training log's field names where they overlap (`train_loss`,
//! `lambda`); `t` is flow time.

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::Result;

use super::flow::OrderParamTrajectory;

pub const THEORY_SCHEMA: &str = "critwin-theory/1";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowRecord {
    pub t: f64,
    pub m: f64,
    pub r: f64,
    pub train_loss: f64,
    pub lambda: f64,
}

impl OrderParamTrajectory {
    pub fn records(&self) -> Vec<FlowRecord> {
        (0..self.times.len())
            .map(|i| FlowRecord {
                t: self.times[i],
                m: self.m[i],
                r: self.r[i],
                train_loss: self.loss[i],
                lambda: self.lambda[i],
            })
            .collect()
    }
}

/// Header line: `schema`, `kind`, then the fields of `meta` (an object).
pub fn header_line<T: Serialize>(kind: &str, meta: &T) -> Result<String> {
    let mut v = json!({ "type": "header", "schema": THEORY_SCHEMA, "kind": kind });
    if let Value::Object(extra) = serde_json::to_value(meta)? {
        v.as_object_mut().expect("object literal").extend(extra);
    }
    Ok(serde_json::to_string(&v)?)
}

/// Header followed by one line per row.
pub fn to_jsonl<M: Serialize, R: Serialize>(kind: &str, meta: &M, rows: &[R]) -> Result<String> {
    let mut out = header_line(kind, meta)?;
    out.push('\n');
    for r in rows {
        let mut v = serde_json::to_value(r)?;
        if let Value::Object(obj) = &mut v {
            obj.insert("type".into(), "record".into());
        }
        out.push_str(&serde_json::to_string(&v)?);
        out.push('\n');
    }
    Ok(out)
}

/// Trajectory as JSON Lines, with a closing `{"summary": ...}` line.
pub fn trajectory_jsonl<M: Serialize>(meta: &M, traj: &OrderParamTrajectory) -> Result<String> {
    let mut out = to_jsonl("trajectory", meta, &traj.records())?;
    let summary = json!({
        "type": "summary",
        "final_m": traj.final_m(),
        "final_r": traj.final_r(),
        "dt": traj.dt,
        "truncated": traj.truncated,
    });
    out.push_str(&serde_json::to_string(&summary)?);
    out.push('\n');
    Ok(out)
}
