//! Budget-matched windows: the same total Σλ_t placed early, mid-training
//! or late, with narrow and wide widths.
//!
//! cargo run --release --example budget_matched

use critwin::training::{build_budget_matched, Placement};

fn main() -> critwin::Result<()> {
    let total = 20_000;
    let layout: Vec<(Placement, usize)> = [Placement::Early, Placement::Middle, Placement::Late]
        .into_iter()
        .flat_map(|p| [(p, 2_500), (p, 5_000)])
        .collect();
    let schedules = build_budget_matched(&layout, 20.0, total)?;
    for ((place, width), s) in layout.iter().zip(&schedules) {
        println!(
            "{:<7} width {:>5}: λ = {:.3e} on [{}, {})  Σλ_t = {}",
            place.name(),
            width,
            s.lambda,
            s.start,
            s.end,
            s.realized_budget()
        );
    }
    Ok(())
}
