//! The file-based workflow: write a task file and a TOML settings file,
//! train from them, save a checkpoint, and reload both artifacts.
//!
//! cargo run --release --example train_from_files

use critwin::diagnostics::diagnose;
use critwin::task::{generate_anchor_task, AnchorTask, TaskSpec};
use critwin::training::{train_with_params, RunLabels, TrainSettings, TrajectoryLog, WdSchedule};
use critwin::transformer::ModelParams;

fn main() -> critwin::Result<()> {
    let dir = std::env::temp_dir().join("critwin_files");
    std::fs::create_dir_all(&dir)?;
    generate_anchor_task(&TaskSpec::reference(0))?.save(&dir.join("task.txt"))?;
    let settings = TrainSettings {
        total_steps: 1_000,
        checkpoint_every: 250,
        ..TrainSettings::default()
    };
    std::fs::write(dir.join("train.toml"), settings.to_toml()?)?;

    let task = AnchorTask::load(&dir.join("task.txt"))?;
    let settings = TrainSettings::load(&dir.join("train.toml"))?;
    let data = task.dataset()?;
    let schedule = WdSchedule::parse("windowed,4e-3,200,600", settings.total_steps)?;
    let cfg = settings.config(data.vocab, schedule, 0)?;
    let (log, params) = train_with_params(&data, &cfg, &RunLabels::default())?;
    log.write(&dir.join("log.jsonl"))?;
    params.save(&dir.join("final.json"), log.summary.steps_completed)?;

    let reread = TrajectoryLog::read(&dir.join("log.jsonl"))?;
    assert_eq!(reread, log);
    let (loaded, step) = ModelParams::load(&dir.join("final.json"))?;
    println!("step {step}: {}", serde_json::to_string(&diagnose(&loaded, 8)?)?);
    println!("artifacts in {}", dir.display());
    Ok(())
}
