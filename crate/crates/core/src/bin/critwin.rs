//! Command-line front end. Every subcommand is a thin wrapper over the library.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use critwin::diagnostics::diagnose;
use critwin::experiments::{run_sweep, summarize, SweepSpec};
use critwin::task::{generate_anchor_task, AnchorTask, TaskSpec};
use critwin::theory::{
    basin_mc, integrate_flow, predict_window, to_jsonl, trajectory_jsonl, BasinConfig, Embedding, FlowOptions,
    FlowSchedule, Groups, StylizedConfig, StylizedProblem,
};
use critwin::training::{train_with_params, RunLabels, TrainSettings, WdSchedule};
use critwin::transformer::ModelParams;
use critwin::Result;

#[derive(Parser)]
#[command(name = "critwin", version, about = "Critical-window weight decay laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Stylized problem shared by the theory subcommands.
#[derive(clap::Args)]
struct ProblemArgs {
    /// Embedding dimension.
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long = "K", default_value_t = 16)]
    keys: usize,
    #[arg(long = "M", default_value_t = 8)]
    anchors: usize,
    #[arg(long, default_value_t = 0.7)]
    fraction: f64,
    /// Seed of the task split and the embeddings.
    #[arg(long, default_value_t = 0)]
    task_seed: u64,
    #[arg(long, value_enum, default_value_t = EmbeddingArg::UnitNorm)]
    embedding: EmbeddingArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbeddingArg {
    UnitNorm,
    Orthonormal,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainGroups {
    All,
    Memorization,
    Reasoning,
}

impl ProblemArgs {
    fn problem(&self, gamma: f64) -> Result<StylizedProblem> {
        StylizedProblem::new(&StylizedConfig {
            d: self.d,
            task: TaskSpec {
                keys: self.keys,
                anchors: self.anchors,
                train_pair_fraction: self.fraction,
                seed: self.task_seed,
            },
            embedding: match self.embedding {
                EmbeddingArg::UnitNorm => Embedding::UnitNormRandom,
                EmbeddingArg::Orthonormal => Embedding::OrthonormalKeys,
            },
            gamma,
        })
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an anchor-composition task file.
    GenTask {
        #[arg(long = "K", default_value_t = 16)]
        keys: usize,
        #[arg(long = "M", default_value_t = 8)]
        anchors: usize,
        #[arg(long, default_value_t = 0.7)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the transformer on a task file and write a JSON Lines log.
    Train {
        #[arg(long)]
        task: PathBuf,
        /// TOML training settings; reference defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `none`, `constant,λ` or `windowed,λ,t1,t2`.
        #[arg(long, default_value = "none")]
        schedule: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also save the final weights here.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the weight-space diagnostics of a checkpoint as JSON.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8)]
        k: usize,
    },
    /// Integrate the stylized gradient flow and emit m(t), r(t).
    TheorySim {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value_t = 0.8)]
        gamma: f64,
        /// `none`, `constant,λ` or `windowed,λ,t1,t2` in flow time.
        #[arg(long, default_value = "none")]
        schedule: String,
        #[arg(long, default_value_t = 50.0)]
        t_end: f64,
        #[arg(long, default_value_t = 0.05)]
        dt: f64,
        #[arg(long, default_value_t = 0.5)]
        record_every: f64,
        /// Seed of the parameter initialization.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = TrainGroups::All)]
        train: TrainGroups,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form critical window in optimizer steps.
    PredictWindow {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value_t = 0.8)]
        gamma: f64,
        #[arg(long, default_value_t = 3e-3)]
        eta: f64,
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        /// Clamp t2 to this many steps.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo success fraction of windowed decay per γ.
    BasinMc {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1.0")]
        gammas: Vec<f64>,
        #[arg(long, default_value_t = 40.0)]
        t_end: f64,
        #[arg(long, default_value_t = 24)]
        n_seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        lambda: f64,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every cell and seed of a sweep spec, then summarize.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Aggregate a sweep directory into the summary CSV.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenTask {
            keys,
            anchors,
            fraction,
            seed,
            out,
        } => {
            let task = generate_anchor_task(&TaskSpec {
                keys,
                anchors,
                train_pair_fraction: fraction,
                seed,
            })?;
            task.save(&out)?;
            eprintln!(
                "wrote {} ({} train pairs, {} held-out pairs)",
                out.display(),
                task.train_pairs.len(),
                task.ood_pairs.len()
            );
        }
        Cmd::Train {
            task,
            config,
            schedule,
            seed,
            out,
            checkpoint,
        } => {
            let anchor = AnchorTask::load(&task)?;
            let settings = match config {
                Some(p) => TrainSettings::load(&p)?,
                None => TrainSettings::default(),
            };
            let schedule = WdSchedule::parse(&schedule, settings.total_steps)?;
            let data = anchor.dataset()?;
            let cfg = settings.config(data.vocab, schedule, seed)?;
            let labels = RunLabels {
                task: format!("anchor file {}", task.display()),
                ..RunLabels::default()
            };
            let (log, params) = train_with_params(&data, &cfg, &labels)?;
            log.write(&out)?;
            if let Some(p) = checkpoint {
                params.save(&p, log.summary.steps_completed)?;
            }
            eprintln!("{}", serde_json::to_string(&log.summary)?);
        }
        Cmd::Diagnose { checkpoint, k } => {
            let (params, step) = ModelParams::load(&checkpoint)?;
            let mut v = serde_json::to_value(diagnose(&params, k)?)?;
            v["step"] = step.into();
            println!("{}", serde_json::to_string(&v)?);
        }
        Cmd::TheorySim {
            problem,
            gamma,
            schedule,
            t_end,
            dt,
            record_every,
            seed,
            train,
            out,
        } => {
            let p = problem.problem(gamma)?;
            let sched = FlowSchedule::parse(&schedule)?;
            let (trainable, zero_init) = match train {
                TrainGroups::All => (Groups::ALL, Groups::NONE),
                TrainGroups::Memorization => (
                    Groups::MEMORIZATION,
                    Groups {
                        m: true,
                        ..Groups::NONE
                    },
                ),
                TrainGroups::Reasoning => (
                    Groups::REASONING,
                    Groups {
                        w1: true,
                        ..Groups::NONE
                    },
                ),
            };
            let opts = FlowOptions {
                trainable,
                zero_init,
                record_every,
                ..FlowOptions::default()
            };
            let traj = integrate_flow(&p, gamma, &sched, dt, t_end, seed, &opts)?;
            let meta = serde_json::json!({
                "gamma": gamma, "d": p.d, "seed": seed, "schedule": sched, "t_end": t_end, "options": opts,
                "sigma_e": p.sigma_e,
            });
            emit(&trajectory_jsonl(&meta, &traj)?, out.as_deref())?;
        }
        Cmd::PredictWindow {
            problem,
            gamma,
            eta,
            delta,
            horizon,
            out,
        } => {
            let p = problem.problem(gamma)?;
            let w = predict_window(&p, gamma, eta, delta, horizon)?;
            let meta = serde_json::json!({ "d": p.d, "keys": p.n_keys, "anchors": p.n_anchors });
            emit(&to_jsonl("window", &meta, &[w])?, out.as_deref())?;
        }
        Cmd::BasinMc {
            problem,
            gammas,
            t_end,
            n_seeds,
            seed,
            lambda,
            epsilon,
            out,
        } => {
            let p = problem.problem(1.0)?;
            let cfg = BasinConfig {
                seed,
                lambda,
                epsilon,
                ..BasinConfig::new(gammas, t_end, n_seeds)
            };
            let points = basin_mc(&p, &cfg)?;
            emit(&to_jsonl("basin", &cfg, &points)?, out.as_deref())?;
        }
        Cmd::Sweep { spec, out, workers } => {
            let spec = SweepSpec::load(&spec)?;
            let progress = |done: usize, total: usize, dir: &Path| eprintln!("[{done}/{total}] {}", dir.display());
            let table = run_sweep(&spec, &out, workers, Some(&progress))?;
            for c in &table.cells {
                let ood = c
                    .ood
                    .map_or("-".to_string(), |s| format!("{:.3} ± {:.3}", s.mean, s.std));
                let flag = if c.incomplete() { " (incomplete)" } else { "" };
                eprintln!("{:<28} OOD {ood}{flag}", c.cell);
            }
        }
        Cmd::Summarize { input, csv } => {
            let table = summarize(&input)?;
            table.write_csv(&csv)?;
            eprintln!("wrote {} ({} cells)", csv.display(), table.cells.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
