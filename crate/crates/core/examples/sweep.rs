//! Run a declarative sweep and print its summary. Defaults to a shortened
//! E2a window scan at desk scale; pass a TOML spec path to run your own.
//!
//! cargo run --release --example sweep -- [spec.toml] [out_dir] [workers]

use std::path::PathBuf;

use critwin::experiments::{run_sweep, SweepSpec};

const DEFAULT_SPEC: &str = r#"
preset = "E2a"
scale = "desk"
seeds = [0]
total_steps = 2000
"#;

fn main() -> critwin::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let spec = match args.first() {
        Some(p) => SweepSpec::load(p.as_ref())?,
        None => SweepSpec::from_toml(DEFAULT_SPEC)?,
    };
    let out = args
        .get(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("critwin_sweep"));
    let workers = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(4);
    let progress = |done: usize, total: usize, dir: &std::path::Path| {
        eprintln!(
            "[{done}/{total}] {}",
            dir.file_name().unwrap_or_default().to_string_lossy()
        )
    };
    let table = run_sweep(&spec, &out, workers, Some(&progress))?;
    for c in &table.cells {
        let ood = c.ood.map_or(f64::NAN, |s| s.mean);
        println!("{:<16} {:<28} OOD {:.3}", c.cell, c.schedule.label(), ood);
    }
    println!("Spearman(C(0.2T), OOD) = {:?}", table.spearman_c02_ood);
    println!("summary: {}", out.join("summary.csv").display());
    Ok(())
}
