//! Weight-space order parameters: participation ratio, condensation index,
//! and bridge alignment, before and after a short training run.
//!
//! cargo run --release --example diagnostics -- [steps]

use critwin::diagnostics::{classify_band, diagnose, participation_ratio, CondensationBand};
use critwin::linalg::Mat;
use critwin::task::{generate_anchor_task, TaskSpec};
use critwin::training::{train_with_params, OptConfig, RunLabels, TrainConfig, WdSchedule};
use critwin::transformer::{init_params, Arch};

fn main() -> critwin::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2_000);
    println!("PR(I_8) = {}", participation_ratio(&Mat::identity(8)));
    let mut rank1 = Mat::zeros(8, 8);
    rank1.data[0] = 3.0;
    println!("PR(rank 1) = {}", participation_ratio(&rank1));

    let data = generate_anchor_task(&TaskSpec::reference(0))?.dataset()?;
    let arch = Arch::reference(data.vocab, 0.8);
    let init = init_params(&arch, 0)?;
    println!("at init: {}", serde_json::to_string(&diagnose(&init, 8)?)?);

    let cfg = TrainConfig::new(arch, OptConfig::adamw(steps), WdSchedule::constant(1e-3, steps)?, 0);
    let (_, trained) = train_with_params(&data, &cfg, &RunLabels::default())?;
    let d = diagnose(&trained, 8)?;
    println!("after {steps} steps: {}", serde_json::to_string(&d)?);
    let band = CondensationBand::default();
    println!("condensation band verdict: {:?}", classify_band(d.condensation, band));
    Ok(())
}
