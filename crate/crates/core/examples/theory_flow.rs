//! Gradient flow of the stylized two-path model with and without a decay
//! window, printing the order parameters m(t) (memorization) and r(t)
//! (reasoning) side by side.
//!
//! cargo run --release --example theory_flow -- [gamma]

use critwin::task::TaskSpec;
use critwin::theory::{
    flow_window, integrate_flow, Embedding, FlowOptions, FlowSchedule, StylizedConfig, StylizedProblem,
};

fn main() -> critwin::Result<()> {
    let gamma: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let p = StylizedProblem::new(&StylizedConfig {
        d: 16,
        task: TaskSpec {
            keys: 6,
            anchors: 4,
            train_pair_fraction: 0.75,
            seed: 0,
        },
        embedding: Embedding::UnitNormRandom,
        gamma,
    })?;
    let t_end = 60.0;
    let (start, end) = flow_window(&p, gamma, 0.5, t_end)?;
    let windowed = FlowSchedule::Windowed {
        lambda: 0.05,
        start,
        end,
    };
    let opts = FlowOptions {
        record_every: 5.0,
        ..FlowOptions::default()
    };
    let base = integrate_flow(&p, gamma, &FlowSchedule::None, 0.02, t_end, 0, &opts)?;
    let win = integrate_flow(&p, gamma, &windowed, 0.02, t_end, 0, &opts)?;
    println!("γ = {gamma}, σ_e = {:.3}, window [{start:.2}, {end:.2})", p.sigma_e);
    println!(
        "{:>6} {:>10} {:>10} {:>10} {:>10}",
        "t", "m(none)", "r(none)", "m(window)", "r(window)"
    );
    for i in 0..base.times.len() {
        println!(
            "{:>6.1} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            base.times[i], base.m[i], base.r[i], win.m[i], win.r[i]
        );
    }
    Ok(())
}
