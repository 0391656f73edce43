//! Constant versus windowed weight decay on modular addition: which one
//! groks first?
//!
//! cargo run --release --example grokking -- [full]

use critwin::experiments::{grokking_compare, GrokConfig};

fn main() -> critwin::Result<()> {
    let cfg = match std::env::args().nth(1).as_deref() {
        Some("full") => GrokConfig::reference(),
        _ => GrokConfig::desk(),
    };
    let t = grokking_compare(&cfg)?;
    println!("p = {}, λ* = {}", cfg.modulus, t.lambda_star);
    for (schedule, lambda, seed, step) in t.rows() {
        println!("{schedule:<9} λ = {lambda:<5} seed {seed}: {step}");
    }
    println!(
        "median grok step: constant {} vs windowed {}",
        t.median_constant(),
        t.median_windowed()
    );
    Ok(())
}
