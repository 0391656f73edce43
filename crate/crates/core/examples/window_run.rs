//! Train the reference anchor model under one weight-decay schedule and
//! print the trajectory.
//!
//! cargo run --release --example window_run -- [schedule] [steps] [seed]
//! e.g. `windowed,4e-3,5000,10000 20000 0`

use critwin::task::{generate_anchor_task, TaskSpec};
use critwin::training::{train, OptConfig, RunLabels, TrainConfig, WdSchedule};
use critwin::transformer::Arch;

fn main() -> critwin::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let schedule = args.first().map(String::as_str).unwrap_or("windowed,4e-3,5000,10000");
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);

    let task = generate_anchor_task(&TaskSpec::reference(seed))?;
    let data = task.dataset()?;
    let mut cfg = TrainConfig::new(
        Arch::reference(data.vocab, 0.8),
        OptConfig::adamw(steps),
        WdSchedule::parse(schedule, steps)?,
        seed,
    );
    cfg.checkpoint_every = (steps / 20).max(1);
    let start = std::time::Instant::now();
    let log = train(&data, &cfg, &RunLabels::default())?;
    for r in &log.records {
        println!(
            "step {:>6}  loss {:.4}  train {:.3}  ood {:.3}  C {:.1}  B {:.3}  |θ|² {:.1}",
            r.step,
            r.train_loss,
            r.train_acc,
            r.ood_acc.unwrap_or(f64::NAN),
            r.condensation,
            r.bridge.as_ref().map_or(f64::NAN, |b| b.value),
            r.weight_norm
        );
    }
    println!("{:?} in {:.1}s", log.summary.verdict, start.elapsed().as_secs_f64());
    Ok(())
}
