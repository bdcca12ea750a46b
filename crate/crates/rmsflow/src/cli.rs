//! The `rmsflow` command line: `gen`, `train`, `eval`, `bench`, `ablate`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, PyramidMode, RunConfig};
use crate::dataset::{self, DatasetError, Split};
use crate::eval::{eval_csv, evaluate_scenes, EvalOptions, SceneResult};
use crate::format::{load_checkpoint, FormatError};
use crate::trainer::{TrainError, Trainer};
use crate::{ablate, bench};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("checkpoint does not match the configured network:\n  {}", .0.join("\n  "))]
    Incompatible(Vec<String>),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Divergence(String),
    #[error(transparent)]
    Core(#[from] rmsflow_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => CliError::Divergence(e.to_string()),
            TrainError::Core(c) => CliError::Core(c),
            TrainError::Format(f) => CliError::Format(f),
            TrainError::Io { path, source } => CliError::Io { path, source },
            TrainError::Data(d) => CliError::Data(d),
        }
    }
}

impl CliError {
    /// 2 configuration, 3 data, 4 divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Incompatible(_) => 2,
            CliError::Dataset(_) | CliError::Format(_) | CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rmsflow", version, about = "Scene flow estimation on point clouds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set pyramid.l1=512`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads for scene-level parallelism.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Root seed for every random stream.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut extra = self.overrides.clone();
        if let Some(t) = self.threads {
            extra.push(format!("threads={t}"));
        }
        if let Some(s) = self.seed {
            extra.push(format!("seed={s}"));
        }
        Ok(RunConfig::load(self.config.as_deref(), &extra)?)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Output directory (default: data.dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on a dataset and write checkpoints plus a log CSV.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (default: data.dir).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory (default: train.out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from the last checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint and write per-scene metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Weights to load (default: best checkpoint under train.out).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset directory (default: data.dir).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory (default: eval.out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Point counts to evaluate, e.g. `512,1024,2048`.
        #[arg(long, value_delimiter = ',')]
        points: Option<Vec<usize>>,
        /// Use the dense level sizes.
        #[arg(long)]
        dense: bool,
        /// Score the ground truth itself (pipeline self-test).
        #[arg(long)]
        oracle: bool,
    },
    /// Time sampling, search and forward kernels.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Output directory (default: bench.out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Subset of ops, e.g. `random_sample,farthest_point_sample`.
        #[arg(long, value_delimiter = ',')]
        ops: Option<Vec<String>>,
    },
    /// Train and score the five embedding variants.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (default: data.dir).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory (default: ablate.out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    fs::write(path, text).map_err(io(path))
}

fn echo(dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    write(&dir.join("config.txt"), &cfg.to_text())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { common, out } => {
            let cfg = common.resolve()?;
            let dir = out.unwrap_or_else(|| cfg.data_dir.clone());
            let entries = dataset::generate(
                &dir,
                &cfg.synth(),
                cfg.scenes,
                cfg.train_fraction,
                cfg.val_fraction,
                cfg.seed,
                cfg.threads,
            )?;
            echo(&dir, &cfg)?;
            eprintln!("wrote {} scenes to {}", entries.len(), dir.display());
        }
        Command::Train {
            common,
            data,
            out,
            resume,
        } => {
            let cfg = common.resolve()?;
            let data = data.unwrap_or_else(|| cfg.data_dir.clone());
            let out = out.unwrap_or_else(|| cfg.train_out.clone());
            let train = dataset::load_split(&data, Split::Train)?;
            let val = dataset::load_split(&data, Split::Val)?;
            let outcome = Trainer {
                cfg: &cfg,
                train: &train,
                val: &val,
                out_dir: Some(&out),
                resume,
                budget_s: None,
                verbose: true,
            }
            .run()?;
            eprintln!(
                "best epoch {} ({} epochs logged) in {}",
                outcome.best_epoch,
                outcome.rows.len(),
                out.display()
            );
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            out,
            points,
            dense,
            oracle,
        } => {
            let mut cfg = common.resolve()?;
            if dense {
                cfg.mode = PyramidMode::Dense;
            }
            if oracle {
                cfg.oracle = true;
            }
            if let Some(p) = points {
                cfg.eval_points = p;
            }
            let data = data.unwrap_or_else(|| cfg.data_dir.clone());
            let out = out.unwrap_or_else(|| cfg.eval_out.clone());
            let net = cfg.net(cfg.mode);
            let store = if cfg.oracle {
                rmsflow_core::numcore::ParamStore::new()
            } else {
                let path = checkpoint.unwrap_or_else(|| cfg.train_out.join(crate::trainer::BEST));
                let store = load_checkpoint(&path)?;
                rmsflow_core::net::check_compatible(&net, &store)
                    .map_err(|errs| CliError::Incompatible(errs.iter().map(|e| e.to_string()).collect()))?;
                store
            };
            let split = Split::parse(&cfg.eval_split).expect("validated split");
            let scenes = dataset::load_split(&data, split)?;
            let mut results: Vec<SceneResult> = Vec::new();
            for &n in &cfg.eval_points {
                let opts = EvalOptions {
                    seed: cfg.seed,
                    tag: "eval",
                    points: n,
                    threads: cfg.threads,
                    oracle: cfg.oracle,
                };
                results.extend(evaluate_scenes(&store, &net, &scenes, &opts)?);
            }
            echo(&out, &cfg)?;
            write(&out.join("eval.csv"), &eval_csv(&results, cfg.timing))?;
            print!("{}", eval_csv(&results, cfg.timing).lines().filter(|l| l.starts_with("all")).map(|l| format!("{l}\n")).collect::<String>());
        }
        Command::Bench { common, out, ops } => {
            let cfg = common.resolve()?;
            let out = out.unwrap_or_else(|| cfg.bench_out.clone());
            let ops = match ops {
                None => bench::Op::ALL.to_vec(),
                Some(names) => names
                    .iter()
                    .map(|n| {
                        bench::Op::ALL
                            .into_iter()
                            .find(|o| o.name() == n)
                            .ok_or_else(|| ConfigError::Invalid(format!("unknown bench op `{n}`")))
                    })
                    .collect::<Result<_, _>>()?,
            };
            let plan = bench::BenchPlan {
                sizes: cfg.bench_sizes.clone(),
                ops,
                trials: cfg.bench_trials,
                k: cfg.bench_k,
                ratio: cfg.bench_ratio,
                brute_max: cfg.brute_max,
                forward_max: cfg.forward_max,
                seed: cfg.seed,
                min_trial_ms: 20.0,
                net: cfg.net(cfg.mode),
            };
            if !crate::alloc_count::installed() {
                eprintln!("note: counting allocator not installed; peak_bytes will read 0");
            }
            let rows = bench::run(&plan);
            echo(&out, &cfg)?;
            let csv = bench::bench_csv(&rows);
            write(&out.join("bench.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Ablate { common, data, out } => {
            let cfg = common.resolve()?;
            let data = data.unwrap_or_else(|| cfg.data_dir.clone());
            let out = out.unwrap_or_else(|| cfg.ablate_out.clone());
            let train = dataset::load_split(&data, Split::Train)?;
            let val = dataset::load_split(&data, Split::Val)?;
            let rows = ablate::run(&cfg, &train, &val, Some(&out), true)?;
            echo(&out, &cfg)?;
            let csv = ablate::ablate_csv(&rows);
            write(&out.join("ablate.csv"), &csv)?;
            print!("{csv}");
        }
    }
    Ok(())
}
