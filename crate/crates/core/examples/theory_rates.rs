//! Fitted convergence rates of the two channels against their closed forms:
//! memorization at λ_min(G_e), reasoning proportional to γ².
//!
//! cargo run --release --example theory_rates

use critwin::task::TaskSpec;
use critwin::theory::{
    measure_memorization_rate, measure_reasoning_rate, Embedding, FitWindow, StylizedConfig, StylizedProblem,
};

fn main() -> critwin::Result<()> {
    let p = StylizedProblem::new(&StylizedConfig {
        d: 12,
        task: TaskSpec {
            keys: 6,
            anchors: 4,
            train_pair_fraction: 0.75,
            seed: 0,
        },
        embedding: Embedding::UnitNormRandom,
        gamma: 0.5,
    })?;
    let fit = FitWindow::default();
    let m = measure_memorization_rate(&p, 0.5, &[0, 1], fit)?;
    println!("memorization: fitted {:.4}, λ_min(G_e) = {:.4}", m.mean, m.predicted);
    for gamma in [0.25, 0.5, 1.0] {
        let r = measure_reasoning_rate(&p, gamma, &[0, 1, 2, 3], fit)?;
        println!(
            "γ = {gamma}: μ̂_r = {:.5}, μ̂_r/γ² = {:.5}, closed form {:.5}",
            r.mean,
            r.mean / (gamma * gamma),
            r.predicted
        );
    }
    Ok(())
}
