//! End-to-end checks of the `critwin` binary on tiny inputs.

use std::path::Path;
use std::process::{Command, Output};

fn critwin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_critwin"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = critwin(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json_lines(text: &str) -> Vec<serde_json::Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn task_train_diagnose_pipeline() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(
        &[
            "gen-task",
            "--K",
            "6",
            "--M",
            "4",
            "--fraction",
            "0.75",
            "--seed",
            "3",
            "--out",
            "task.txt",
        ],
        p,
    );
    let text = std::fs::read_to_string(p.join("task.txt")).unwrap();
    assert!(text.starts_with("critwin-task v1"));
    std::fs::write(
        p.join("cfg.toml"),
        "d_model = 16\ntotal_steps = 40\ncheckpoint_every = 10\nbridge_k = 4\n",
    )
    .unwrap();
    let train = [
        "train",
        "--task",
        "task.txt",
        "--config",
        "cfg.toml",
        "--schedule",
        "windowed,1e-2,8,24",
        "--seed",
        "1",
        "--out",
        "log.jsonl",
        "--checkpoint",
        "ck.json",
    ];
    ok(&train, p);
    let first = std::fs::read(p.join("log.jsonl")).unwrap();
    let lines = json_lines(std::str::from_utf8(&first).unwrap());
    assert_eq!(lines[0]["schema"], "critwin-log/1");
    assert_eq!(
        lines.len(),
        1 + 6 + 1,
        "header, checkpoints 0..=40 by 10 plus 0.2·T, summary"
    );
    assert_eq!(lines.last().unwrap()["type"], "summary");
    assert_eq!(lines.last().unwrap()["verdict"], "completed");
    // Same inputs, same bytes.
    ok(&train, p);
    assert_eq!(std::fs::read(p.join("log.jsonl")).unwrap(), first);

    let diag = json_lines(&ok(&["diagnose", "--checkpoint", "ck.json", "--k", "4"], p));
    assert_eq!(diag[0]["step"], 40);
    let c = diag[0]["condensation"].as_f64().unwrap();
    assert!(c > 1.0 && c <= 16.0, "{c}");
}

#[test]
fn bad_inputs_exit_nonzero_with_message() {
    let d = tempfile::tempdir().unwrap();
    for args in [
        vec!["predict-window", "--delta", "0.7"],
        vec!["train", "--task", "missing.txt", "--out", "x.jsonl"],
        vec!["gen-task", "--K", "1", "--out", "t.txt"],
        vec!["theory-sim", "--schedule", "sometimes"],
    ] {
        let out = critwin(&args, d.path());
        assert!(!out.status.success(), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"), "{args:?}");
    }
}

#[test]
fn theory_subcommands_emit_tagged_json_lines() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let small = ["--d", "8", "--K", "4", "--M", "3"];
    let sim: Vec<&str> = [
        "theory-sim",
        "--gamma",
        "0.3",
        "--t-end",
        "2",
        "--schedule",
        "windowed,0.1,0.5,1",
    ]
    .into_iter()
    .chain(small)
    .collect();
    let lines = json_lines(&ok(&sim, p));
    assert_eq!(lines[0]["schema"], "critwin-theory/1");
    assert_eq!(lines[0]["kind"], "trajectory");
    assert_eq!(lines[1]["type"], "record");
    assert_eq!(lines.last().unwrap()["type"], "summary");
    assert_eq!(lines.len(), 1 + 5 + 1, "t = 0, 0.5, …, 2 plus header and summary");
    assert_eq!(lines[2]["lambda"], 0.1);
    assert!(lines[1]["train_loss"].as_f64().unwrap() > 0.0);

    let w = json_lines(&ok(&["predict-window", "--gamma", "0.8"], p));
    assert_eq!(w[1]["c_r"], 0.015625);
    let t1 = w[1]["t1"].as_f64().unwrap();
    let t2 = w[1]["t2"].as_f64().unwrap();
    assert!((t2 / t1 - 100.0).abs() < 1e-9, "t2/t1 = 1/(c_r γ²)");

    let basin: Vec<&str> = ["basin-mc", "--gammas", "0.5,1.0", "--n-seeds", "10", "--t-end", "10"]
        .into_iter()
        .chain(small)
        .collect();
    let b = json_lines(&ok(&basin, p));
    assert_eq!(b[0]["kind"], "basin");
    assert_eq!(b.len(), 3);
    assert_eq!(b[1]["n"], 10);
}

#[test]
fn sweep_then_summarize() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let spec = r#"
experiment = "custom"
scale = "desk"
seeds = [0]
total_steps = 20
reference_steps = 20
gammas = [0.8]
n_layers = [1]
optimizers = ["adamw"]
d_model = 8
n_heads = 2
mlp_mult = 2
decay_mode = "coupled_l2"
checkpoint_every = 10
bridge_k = 4
save_checkpoints = true

[task]
kind = "anchor"
keys = 4
anchors = 3
train_pair_fraction = 0.7

[[schedules]]
name = "none"
kind = "none"
lambda = 0.0
start = 0
end = 0

[[schedules]]
name = "late"
kind = "windowed"
lambda = 0.01
start = 10
end = 20
"#;
    std::fs::write(p.join("spec.toml"), spec).unwrap();
    ok(&["sweep", "--spec", "spec.toml", "--out", "out", "--workers", "2"], p);
    assert!(p.join("out/runs/late__seed0/final.json").exists());
    ok(&["summarize", "--in", "out", "--csv", "again.csv"], p);
    let a = std::fs::read_to_string(p.join("out/summary.csv")).unwrap();
    let b = std::fs::read_to_string(p.join("again.csv")).unwrap();
    assert_eq!(a, b);
    assert!(a.starts_with("schema_version,experiment,cell,"));
    assert_eq!(a.lines().count(), 3);
}
