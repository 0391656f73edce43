//! Declarative sweeps over the training harness, summaries, and the
//! grokking comparison.

mod grok;
mod runner;
mod spec;
mod summary;

pub use grok::{grokking_compare, GrokConfig, GrokRun, GrokTable};
pub use runner::{run_cell, run_dir_name, run_sweep, Progress, RunMeta, RUN_SCHEMA};
pub use spec::{optimizer_name, Cell, ExperimentId, Scale, ScheduleSpec, SweepSpec, TaskConfig};
pub use summary::{
    grok_step, median, read_run, spearman, summarize, summarize_runs, CellSummary, RunOutcome, RunStatus, Stats,
    SummaryTable, CSV_COLUMNS, GROK_THRESHOLD, SUMMARY_SCHEMA,
};
