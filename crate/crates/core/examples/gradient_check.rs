//! Finite-difference check of the transformer and stylized-model gradients.
//!
//! cargo run --release --example gradient_check

use critwin::rng::{stream, Stream};
use critwin::task::{generate_anchor_task, PairSet, TaskSpec};
use critwin::theory::{stylized_gradient_check, StylizedConfig, StylizedParams, StylizedProblem};
use critwin::transformer::{gradient_check, init_params, Arch, Batch};

fn main() -> critwin::Result<()> {
    let task = generate_anchor_task(&TaskSpec::reference(0))?;
    let examples = task.materialize(PairSet::Train)?;
    let arch = Arch {
        d_model: 16,
        ..Arch::reference(task.vocab_size(), 1.0)
    };
    for seed in 0..3 {
        let params = init_params(&arch, seed)?;
        let batch = Batch::from_examples(&examples[..16]);
        let mut rng = stream(seed, Stream::CouplingMc);
        let r = gradient_check(&params, &batch, 200, 1e-5, &mut rng)?;
        println!(
            "transformer seed {seed}: {} coords, max rel err {:.2e} at {:?}",
            r.checked, r.max_rel_err, r.worst
        );
    }

    // K ≤ d keeps the key Gram positive definite.
    let p = StylizedProblem::new(&StylizedConfig {
        d: 8,
        task: TaskSpec {
            keys: 6,
            anchors: 4,
            ..TaskSpec::reference(0)
        },
        ..StylizedConfig::reference(0.5, 0)
    })?;
    for seed in 0..3 {
        let params = StylizedParams::init(&p, 0.5, seed);
        let mut rng = stream(seed, Stream::CouplingMc);
        let r = stylized_gradient_check(&p, &params, 0.1, 200, 1e-3, &mut rng)?;
        println!(
            "stylized seed {seed}: {} coords, max rel err {:.2e}",
            r.checked, r.max_rel_err
        );
    }
    Ok(())
}
