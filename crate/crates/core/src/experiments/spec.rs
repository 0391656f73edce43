//! Declarative sweep specifications and the built-in experiment presets.
//!
//! A spec file is TOML. It either names a preset and overrides some of its
//! fields, or spells out every field with `experiment = "custom"`:
//!
//! ```toml
//! preset = "E2a"        # E1 E2a E2b E3 E4 E5 E6 E7 E8 E10 E11
//! scale = "desk"        # full | desk
//! seeds = [0, 1, 2]     # any SweepSpec field may be overridden
//! ```
//!
//! Schedule endpoints are written for `reference_steps`; when `total_steps`
//! differs, window endpoints scale linearly with T (rounded to the nearest
//! step) and λ is kept.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{generate_anchor_task, generate_modular_task, Dataset, ModularTaskSpec, TaskSpec};
use crate::training::{build_budget_matched, DecayMode, OptConfig, OptimizerKind, Placement, ScheduleKind, WdSchedule};
use crate::transformer::Arch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExperimentId {
    E1,
    E2a,
    E2b,
    E3,
    E4,
    E5,
    E6,
    E7,
    E8,
    E10,
    E11,
    #[serde(rename = "custom")]
    Custom,
}

impl ExperimentId {
    pub const PRESETS: [ExperimentId; 11] = [
        ExperimentId::E1,
        ExperimentId::E2a,
        ExperimentId::E2b,
        ExperimentId::E3,
        ExperimentId::E4,
        ExperimentId::E5,
        ExperimentId::E6,
        ExperimentId::E7,
        ExperimentId::E8,
        ExperimentId::E10,
        ExperimentId::E11,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::E1 => "E1",
            ExperimentId::E2a => "E2a",
            ExperimentId::E2b => "E2b",
            ExperimentId::E3 => "E3",
            ExperimentId::E4 => "E4",
            ExperimentId::E5 => "E5",
            ExperimentId::E6 => "E6",
            ExperimentId::E7 => "E7",
            ExperimentId::E8 => "E8",
            ExperimentId::E10 => "E10",
            ExperimentId::E11 => "E11",
            ExperimentId::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        std::iter::once(ExperimentId::Custom)
            .chain(ExperimentId::PRESETS)
            .find(|e| e.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parse(format!("unknown experiment `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Full grids, seed counts and horizons.
    Full,
    /// Fewer seeds for a single-machine run; grids and horizons unchanged.
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TaskConfig {
    Anchor {
        keys: usize,
        anchors: usize,
        train_pair_fraction: f64,
    },
    Modular {
        modulus: usize,
        train_fraction: f64,
    },
}

impl TaskConfig {
    pub fn reference_anchor() -> Self {
        TaskConfig::Anchor {
            keys: 16,
            anchors: 8,
            train_pair_fraction: 0.7,
        }
    }

    /// Task instance for one run; the run seed also seeds the task.
    pub fn dataset(&self, seed: u64) -> Result<Dataset> {
        match *self {
            TaskConfig::Anchor {
                keys,
                anchors,
                train_pair_fraction,
            } => generate_anchor_task(&TaskSpec {
                keys,
                anchors,
                train_pair_fraction,
                seed,
            })?
            .dataset(),
            TaskConfig::Modular {
                modulus,
                train_fraction,
            } => generate_modular_task(&ModularTaskSpec {
                modulus,
                train_fraction,
                seed,
            }),
        }
    }

    pub fn describe(&self, seed: u64) -> String {
        match *self {
            TaskConfig::Anchor {
                keys,
                anchors,
                train_pair_fraction,
            } => format!("anchor K={keys} M={anchors} fraction={train_pair_fraction} seed={seed}"),
            TaskConfig::Modular {
                modulus,
                train_fraction,
            } => format!("modular p={modulus} fraction={train_fraction} seed={seed}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub name: String,
    pub kind: ScheduleKind,
    #[serde(default)]
    pub lambda: f64,
    /// Window start in steps of `reference_steps`.
    #[serde(default)]
    pub start: usize,
    /// Window end (exclusive) in steps of `reference_steps`.
    #[serde(default)]
    pub end: usize,
    /// Restrict this schedule to these γ values (all γ when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
}

impl ScheduleSpec {
    pub fn none() -> Self {
        ScheduleSpec {
            name: "none".into(),
            kind: ScheduleKind::None,
            lambda: 0.0,
            start: 0,
            end: 0,
            gammas: None,
        }
    }

    pub fn constant(name: &str, lambda: f64) -> Self {
        ScheduleSpec {
            name: name.into(),
            kind: ScheduleKind::Constant,
            lambda,
            ..ScheduleSpec::none()
        }
    }

    pub fn windowed(name: &str, lambda: f64, start: usize, end: usize) -> Self {
        ScheduleSpec {
            name: name.into(),
            kind: ScheduleKind::Windowed,
            lambda,
            start,
            end,
            gammas: None,
        }
    }

    fn from_schedule(name: &str, s: &WdSchedule) -> Self {
        ScheduleSpec {
            name: name.into(),
            kind: s.kind,
            lambda: s.lambda,
            start: s.start,
            end: s.end,
            gammas: None,
        }
    }

    /// Concrete schedule at the reference horizon, rescaled to `total`.
    pub fn build(&self, reference: usize, total: usize) -> Result<WdSchedule> {
        let at_ref = match self.kind {
            ScheduleKind::None => WdSchedule::none(reference),
            ScheduleKind::Constant => WdSchedule::constant(self.lambda, reference)?,
            ScheduleKind::Windowed => WdSchedule::windowed(self.lambda, self.start, self.end, reference)?,
        };
        if total == reference {
            Ok(at_ref)
        } else {
            at_ref.rescaled(total)
        }
    }

    fn applies_to(&self, gamma: f64) -> bool {
        self.gammas
            .as_ref()
            .is_none_or(|g| g.iter().any(|x| (x - gamma).abs() < 1e-12))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub experiment: ExperimentId,
    pub scale: Scale,
    pub seeds: Vec<u64>,
    pub total_steps: usize,
    /// Horizon the schedule endpoints are written for.
    pub reference_steps: usize,
    pub task: TaskConfig,
    pub gammas: Vec<f64>,
    pub n_layers: Vec<usize>,
    pub optimizers: Vec<OptimizerKind>,
    pub schedules: Vec<ScheduleSpec>,
    pub d_model: usize,
    pub n_heads: usize,
    pub mlp_mult: usize,
    /// Learning rate for every optimizer; each optimizer's default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    pub decay_mode: DecayMode,
    pub checkpoint_every: usize,
    pub bridge_k: usize,
    /// When set, every schedule's realized Σλ_t must be bitwise equal, and
    /// equal to this value at the reference horizon. Checked before launch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    #[serde(default)]
    pub save_checkpoints: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_at_eval_acc: Option<f64>,
}

/// One grid point: everything but the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub name: String,
    pub optimizer: OptimizerKind,
    pub gamma: f64,
    pub n_layers: usize,
    pub schedule_name: String,
    pub schedule: WdSchedule,
}

fn onsets(from: usize, to: usize, step: usize) -> Vec<usize> {
    (from..=to).step_by(step).collect()
}

fn window_scan(onsets: &[usize], width: usize, lambda: f64) -> Vec<ScheduleSpec> {
    onsets
        .iter()
        .map(|&s| ScheduleSpec::windowed(&format!("window_{s}"), lambda, s, s + width))
        .collect()
}

fn fmt_lambda(l: f64) -> String {
    if l == 0.0 {
        "0".into()
    } else {
        format!("{l:e}")
    }
}

impl SweepSpec {
    fn anchor_base(experiment: ExperimentId, scale: Scale, seeds_full: usize, seeds_desk: usize, total: usize) -> Self {
        let n = if scale == Scale::Full { seeds_full } else { seeds_desk };
        SweepSpec {
            experiment,
            scale,
            seeds: (0..n as u64).collect(),
            total_steps: total,
            reference_steps: total,
            task: TaskConfig::reference_anchor(),
            gammas: vec![0.8],
            n_layers: vec![2],
            optimizers: vec![OptimizerKind::AdamW],
            schedules: vec![ScheduleSpec::none()],
            d_model: 64,
            n_heads: 2,
            mlp_mult: 4,
            lr: None,
            decay_mode: DecayMode::CoupledL2,
            checkpoint_every: 500,
            bridge_k: 8,
            budget: None,
            save_checkpoints: false,
            stop_at_eval_acc: None,
        }
    }

    /// The E2a scan: seven 5000-step windows (λ = 4e-3, budget 20) at onsets
    /// 0, 2500, …, 15000, plus constant λ = 1e-3 and no decay.
    fn e2a_schedules() -> Vec<ScheduleSpec> {
        let mut s = vec![ScheduleSpec::none(), ScheduleSpec::constant("full", 1e-3)];
        s.extend(window_scan(&onsets(0, 15_000, 2_500), 5_000, 4e-3));
        s
    }

    pub fn preset(id: ExperimentId, scale: Scale) -> Result<Self> {
        use ExperimentId::*;
        let spec = match id {
            E1 => SweepSpec {
                gammas: vec![0.3, 0.5, 0.7, 0.8, 0.9, 1.1],
                schedules: [0.0, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2]
                    .iter()
                    .map(|&l| ScheduleSpec::constant(&format!("lambda_{}", fmt_lambda(l)), l))
                    .collect(),
                ..Self::anchor_base(E1, scale, 3, 2, 15_000)
            },
            E2a => SweepSpec {
                schedules: Self::e2a_schedules(),
                ..Self::anchor_base(E2a, scale, 3, 2, 20_000)
            },
            E2b => {
                let total = 20_000;
                let mut schedules = Vec::new();
                for p in [Placement::Early, Placement::Middle, Placement::Late] {
                    for (tag, w) in [("narrow", 2_000), ("wide", 5_000)] {
                        let s = build_budget_matched(&[(p, w)], 20.0, total)?;
                        schedules.push(ScheduleSpec::from_schedule(&format!("{}_{tag}", p.name()), &s[0]));
                    }
                }
                SweepSpec {
                    schedules,
                    budget: Some(20.0),
                    ..Self::anchor_base(E2b, scale, 3, 2, total)
                }
            }
            E3 => SweepSpec {
                schedules: [0.0, 3e-4, 1e-3, 3e-3, 1e-2]
                    .iter()
                    .map(|&l| ScheduleSpec::constant(&format!("lambda_{}", fmt_lambda(l)), l))
                    .collect(),
                ..Self::anchor_base(E3, scale, 8, 4, 15_000)
            },
            E4 => {
                let (modulus, d) = if scale == Scale::Full { (67, 128) } else { (23, 64) };
                let total = 10_000;
                let mut schedules = Vec::new();
                for l in [0.01, 0.1, 0.3, 1.0, 3.0] {
                    schedules.push(ScheduleSpec::constant(&format!("constant_{}", fmt_lambda(l)), l));
                    schedules.push(ScheduleSpec::windowed(
                        &format!("windowed_{}", fmt_lambda(l)),
                        l,
                        total / 10,
                        total * 6 / 10,
                    ));
                }
                SweepSpec {
                    task: TaskConfig::Modular {
                        modulus,
                        train_fraction: 0.4,
                    },
                    d_model: d,
                    schedules,
                    checkpoint_every: 100,
                    ..Self::anchor_base(E4, scale, 3, 1, total)
                }
            }
            E5 => SweepSpec {
                gammas: vec![0.5, 0.8, 1.1],
                schedules: Self::e2a_schedules(),
                ..Self::anchor_base(E5, scale, 3, 2, 20_000)
            },
            E6 => SweepSpec {
                schedules: window_scan(&onsets(0, 6_000, 500), 5_000, 4e-3),
                ..Self::anchor_base(E6, scale, 3, 2, 20_000)
            },
            E7 => SweepSpec {
                schedules: window_scan(&onsets(0, 1_000, 100), 5_000, 4e-3),
                checkpoint_every: 100,
                ..Self::anchor_base(E7, scale, 4, 2, 20_000)
            },
            E8 => {
                // One 5000-step window per γ; onsets are spec fields so the
                // best E5 cell per γ can be substituted.
                let gammas = vec![0.5, 0.7, 0.9, 1.1];
                let schedules = gammas
                    .iter()
                    .map(|&g| ScheduleSpec {
                        gammas: Some(vec![g]),
                        ..ScheduleSpec::windowed("optimal_window", 4e-3, 5_000, 10_000)
                    })
                    .collect();
                SweepSpec {
                    gammas,
                    schedules,
                    ..Self::anchor_base(E8, scale, 12, 4, 20_000)
                }
            }
            E10 => SweepSpec {
                n_layers: vec![4],
                schedules: Self::e2a_schedules(),
                ..Self::anchor_base(E10, scale, 3, 2, 20_000)
            },
            E11 => {
                let t = 20_000;
                SweepSpec {
                    optimizers: vec![OptimizerKind::AdamW, OptimizerKind::Sgd],
                    schedules: vec![
                        ScheduleSpec::none(),
                        ScheduleSpec::windowed("early", 4e-3, 0, t / 4),
                        ScheduleSpec::windowed("middle", 4e-3, t / 4, t / 2),
                        ScheduleSpec::windowed("late", 4e-3, 3 * t / 4, t),
                        ScheduleSpec::constant("full", 1e-3),
                    ],
                    ..Self::anchor_base(E11, scale, 3, 2, t)
                }
            }
            Custom => return Err(Error::InvalidConfig("`custom` has no preset; write every field".into())),
        };
        Ok(spec)
    }

    /// Parse a TOML spec: a preset plus overrides, or a full custom spec.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)?;
        let preset = table.remove("preset");
        let spec: SweepSpec = match preset {
            Some(p) => {
                let name = p
                    .as_str()
                    .ok_or_else(|| Error::Parse("`preset` must be a string".into()))?;
                let scale = match table.get("scale").and_then(|v| v.as_str()) {
                    Some("full") => Scale::Full,
                    Some("desk") | None => Scale::Desk,
                    Some(other) => return Err(Error::Parse(format!("unknown scale `{other}`"))),
                };
                let base = Self::preset(ExperimentId::parse(name)?, scale)?;
                let mut merged =
                    toml::Table::try_from(&base).map_err(|e| Error::Parse(format!("preset serialization: {e}")))?;
                for (k, v) in table {
                    merged.insert(k, v);
                }
                merged.try_into()?
            }
            None => table.try_into()?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(format!("spec serialization: {e}")))
    }

    pub fn vocab(&self) -> usize {
        match self.task {
            TaskConfig::Anchor { keys, anchors, .. } => keys + anchors,
            TaskConfig::Modular { modulus, .. } => modulus + 1,
        }
    }

    pub fn arch(&self, gamma: f64, n_layers: usize) -> Arch {
        Arch {
            n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            mlp_mult: self.mlp_mult,
            vocab: self.vocab(),
            seq_len: 3,
            init_scale: gamma,
        }
    }

    pub fn opt(&self, kind: OptimizerKind) -> OptConfig {
        let mut o = match kind {
            OptimizerKind::AdamW => OptConfig::adamw(self.total_steps),
            OptimizerKind::Sgd => OptConfig::sgd(self.total_steps),
        };
        if let Some(lr) = self.lr {
            o.lr = lr;
        }
        o.decay_mode = self.decay_mode;
        o
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("seed list has duplicates".into());
        }
        if self.gammas.is_empty() || self.n_layers.is_empty() || self.optimizers.is_empty() || self.schedules.is_empty()
        {
            return bad("every grid axis needs at least one value".into());
        }
        if self.reference_steps == 0 && self.total_steps != 0 {
            return bad("reference_steps must be ≥ 1".into());
        }
        let names: BTreeSet<&str> = self.schedules.iter().map(|s| s.name.as_str()).collect();
        if names.len() != self.schedules.len() && self.schedules.iter().all(|s| s.gammas.is_none()) {
            return bad("schedule names must be unique".into());
        }
        for &g in &self.gammas {
            for &l in &self.n_layers {
                self.arch(g, l).validate()?;
            }
        }
        for o in &self.optimizers {
            self.opt(*o).validate()?;
        }
        let cells = self.cells()?;
        if cells.is_empty() {
            return bad("grid has no cells".into());
        }
        if let Some(budget) = self.budget {
            let realized: Vec<(String, f64)> = cells
                .iter()
                .map(|c| (c.schedule_name.clone(), c.schedule.realized_budget()))
                .collect();
            let first = realized[0].1;
            if let Some((name, b)) = realized.iter().find(|(_, b)| *b != first) {
                return bad(format!(
                    "budget mismatch: {name} spends {b}, {} spends {first}",
                    realized[0].0
                ));
            }
            if self.total_steps == self.reference_steps && first != budget {
                return bad(format!("schedules spend {first}, spec budget is {budget}"));
            }
        }
        Ok(())
    }

    /// The grid in launch order: optimizer, then n_layers, then γ, then schedule.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for &optimizer in &self.optimizers {
            for &n_layers in &self.n_layers {
                for &gamma in &self.gammas {
                    for s in self.schedules.iter().filter(|s| s.applies_to(gamma)) {
                        let mut name = s.name.clone();
                        if self.gammas.len() > 1 {
                            name = format!("g{gamma}_{name}");
                        }
                        if self.n_layers.len() > 1 {
                            name = format!("L{n_layers}_{name}");
                        }
                        if self.optimizers.len() > 1 {
                            name = format!("{}_{name}", optimizer_name(optimizer));
                        }
                        if !seen.insert(name.clone()) {
                            return Err(Error::InvalidConfig(format!("duplicate cell `{name}`")));
                        }
                        out.push(Cell {
                            name,
                            optimizer,
                            gamma,
                            n_layers,
                            schedule_name: s.name.clone(),
                            schedule: s.build(self.reference_steps, self.total_steps)?,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

pub fn optimizer_name(k: OptimizerKind) -> &'static str {
    match k {
        OptimizerKind::AdamW => "adamw",
        OptimizerKind::Sgd => "sgd",
    }
}
