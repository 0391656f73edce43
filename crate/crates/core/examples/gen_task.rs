//! Generate the anchor-composition task, inspect it, and round-trip the
//! text file format.
//!
//! cargo run --release --example gen_task -- [K] [M] [seed]

use critwin::task::{generate_anchor_task, AnchorTask, PairSet, TaskSpec};

fn main() -> critwin::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let spec = TaskSpec {
        keys: arg(0, 16),
        anchors: arg(1, 8),
        train_pair_fraction: 0.7,
        seed: arg(2, 0) as u64,
    };
    let task = generate_anchor_task(&spec)?;
    println!(
        "K = {}, M = {}: {} train pairs, {} held-out pairs, vocab {}",
        spec.keys,
        spec.anchors,
        task.train_pairs.len(),
        task.ood_pairs.len(),
        task.vocab_size()
    );
    println!("held-out pairs (i, j): {:?}", task.pairs(PairSet::Ood));
    let ex = &task.materialize(PairSet::Train)?[0];
    println!("first training example: tokens {:?} -> {}", ex.tokens, ex.target);

    let path = std::env::temp_dir().join("critwin_task.txt");
    task.save(&path)?;
    assert_eq!(AnchorTask::load(&path)?, task);
    println!("round-tripped through {}", path.display());
    Ok(())
}
