//! Time-localized complexity control: λ(t) schedules, AdamW / SGD updates
//! with masked weight decay, and the checkpointed training loop.

mod log;
mod optim;
mod run;
mod schedule;
mod settings;

pub use log::{CheckpointRecord, RunHeader, RunSummary, TrajectoryLog, Verdict, LOG_SCHEMA};
pub use optim::{step, DecayMode, OptConfig, OptState, OptimizerKind};
pub use run::{train, train_with_params, RunLabels, TrainConfig, DEFAULT_CHECKPOINT_EVERY, DIVERGENCE_LOSS};
pub use schedule::{build_budget_matched, exact_sum, Placement, ScheduleKind, WdSchedule};
pub use settings::TrainSettings;

#[cfg(test)]
mod tests;
