//! Monte Carlo basin of attraction: how often a decay window steers the
//! reasoning channel to its plateau, per initialization scale γ.
//!
//! cargo run --release --example basin -- [n_seeds]

use critwin::task::TaskSpec;
use critwin::theory::{basin_mc, BasinConfig, Embedding, StylizedConfig, StylizedProblem};

fn main() -> critwin::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(24);
    let p = StylizedProblem::new(&StylizedConfig {
        d: 16,
        task: TaskSpec {
            keys: 4,
            anchors: 3,
            train_pair_fraction: 0.7,
            seed: 0,
        },
        embedding: Embedding::UnitNormRandom,
        gamma: 1.0,
    })?;
    for t_end in [20.0, 40.0] {
        let cfg = BasinConfig::new(vec![0.25, 0.5, 0.75, 1.0], t_end, n);
        for pt in basin_mc(&p, &cfg)? {
            println!(
                "T = {t_end}: γ = {:.2}  {}/{} succeed ({:.2})  window [{:.2}, {:.2})",
                pt.gamma, pt.successes, pt.n, pt.fraction, pt.window.0, pt.window.1
            );
        }
    }
    Ok(())
}
