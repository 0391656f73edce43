use super::*;
use crate::task::{generate_anchor_task, TaskSpec};
use crate::transformer::Arch;

fn tiny(total: usize, schedule: WdSchedule, seed: u64) -> (crate::task::Dataset, TrainConfig) {
    let task = generate_anchor_task(&TaskSpec {
        keys: 6,
        anchors: 3,
        train_pair_fraction: 0.7,
        seed,
    })
    .unwrap();
    let data = task.dataset().unwrap();
    let arch = Arch {
        n_layers: 2,
        d_model: 16,
        n_heads: 2,
        mlp_mult: 4,
        vocab: data.vocab,
        seq_len: 3,
        init_scale: 0.8,
    };
    let mut opt = OptConfig::adamw(total);
    opt.batch_size = 16;
    let mut cfg = TrainConfig::new(arch, opt, schedule, seed);
    cfg.checkpoint_every = 10;
    cfg.bridge_k = 4;
    (data, cfg)
}

#[test]
fn zero_steps_gives_single_record() {
    let (data, cfg) = tiny(0, WdSchedule::none(0), 1);
    let log = train(&data, &cfg, &RunLabels::default()).unwrap();
    assert_eq!(log.records.len(), 1);
    assert_eq!(log.records[0].step, 0);
    assert_eq!(log.summary.verdict, Verdict::Completed);
}

#[test]
fn runs_are_byte_identical() {
    let sch = WdSchedule::windowed(1e-2, 10, 30, 40).unwrap();
    let (data, cfg) = tiny(40, sch, 2);
    let a = train(&data, &cfg, &RunLabels::default()).unwrap().to_jsonl().unwrap();
    let b = train(&data, &cfg, &RunLabels::default()).unwrap().to_jsonl().unwrap();
    assert_eq!(a, b);
}

#[test]
fn checkpoints_increase_and_end_at_total() {
    let (data, mut cfg) = tiny(45, WdSchedule::none(45), 3);
    cfg.checkpoint_every = 20;
    let log = train(&data, &cfg, &RunLabels::default()).unwrap();
    let steps: Vec<usize> = log.records.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![0, 9, 20, 40, 45]);
}

#[test]
fn empty_effect_window_matches_none() {
    // A zero-strength window changes nothing bitwise.
    let (data, cfg_none) = tiny(30, WdSchedule::none(30), 4);
    let mut cfg_zero = cfg_none.clone();
    cfg_zero.schedule = WdSchedule::windowed(0.0, 5, 20, 30).unwrap();
    let (_, a) = train_with_params(&data, &cfg_none, &RunLabels::default()).unwrap();
    let (_, b) = train_with_params(&data, &cfg_zero, &RunLabels::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn divergence_is_flagged_not_dropped() {
    let (data, mut cfg) = tiny(50, WdSchedule::none(50), 5);
    cfg.opt = OptConfig::sgd(50);
    cfg.opt.lr = 1e12;
    cfg.opt.batch_size = 16;
    let log = train(&data, &cfg, &RunLabels::default()).unwrap();
    assert_eq!(log.summary.verdict, Verdict::Diverged);
    assert!(log.summary.diverged_at.is_some());
    assert!(!log.records.is_empty());
}

#[test]
fn log_round_trips_and_checks_schema() {
    let (data, cfg) = tiny(20, WdSchedule::constant(1e-3, 20).unwrap(), 6);
    let log = train(&data, &cfg, &RunLabels::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.jsonl");
    log.write(&path).unwrap();
    assert_eq!(TrajectoryLog::read(&path).unwrap(), log);
    let bad = std::fs::read_to_string(&path)
        .unwrap()
        .replace(LOG_SCHEMA, "critwin-log/0");
    std::fs::write(&path, bad).unwrap();
    assert!(matches!(TrajectoryLog::read(&path), Err(crate::Error::Schema { .. })));
}

#[test]
fn mismatched_horizon_rejected() {
    let (data, mut cfg) = tiny(20, WdSchedule::none(20), 7);
    cfg.schedule = WdSchedule::none(10);
    assert!(train(&data, &cfg, &RunLabels::default()).is_err());
}
