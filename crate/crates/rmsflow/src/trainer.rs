//! Two-phase training loop with validation, CSV log, checkpoints and resume.
//!
//! Phase 1 trains on one fixed point subset per frame with a decaying rate;
//! phase 2 draws fresh subsets every iteration at a constant rate. Every
//! random draw comes from a stream keyed by `(seed, epoch, scene)`, so a run
//! is reproducible, independent of the thread count, and resumable at any
//! epoch boundary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rmsflow_core::data::{augment, subsample_pair, ScenePair};
use rmsflow_core::metrics::MetricsReport;
use rmsflow_core::net::init_params;
use rmsflow_core::numcore::ParamStore;
use rmsflow_core::train::{apply_batch, scene_grads, Phase};

use crate::config::{PyramidMode, RunConfig};
use crate::eval::{aggregate, evaluate_scenes, EvalOptions};
use crate::format::{load_checkpoint, load_optimizer_state, save_checkpoint, save_optimizer_state, FormatError};
use crate::{parallel, seeds};

pub const LOG_HEADER: &str = "epoch,phase,lr,train_loss,val_epe3d,val_acc3dr,wall_s";
pub const LOG_FILE: &str = "train_log.csv";
pub const BEST: &str = "best.rmsw";
pub const LAST: &str = "last.rmsw";
pub const LAST_OPT: &str = "last.opt";
pub const STATE: &str = "state.txt";
pub const CONFIG_ECHO: &str = "config.txt";

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },
    #[error(transparent)]
    Core(#[from] rmsflow_core::Error),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub phase: Phase,
    pub lr: f64,
    pub train_loss: f64,
    pub val: MetricsReport,
    pub wall_s: f64,
}

impl LogRow {
    pub fn csv(&self, timing: bool) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{}",
            self.epoch,
            self.phase.number(),
            self.lr,
            self.train_loss,
            self.val.epe3d_m,
            self.val.acc3dr,
            if timing { format!("{:.3}", self.wall_s) } else { "0".into() }
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights after the last epoch.
    pub last: ParamStore<f32>,
    /// Weights of the epoch with the lowest validation EPE3D.
    pub best: ParamStore<f32>,
    pub best_epoch: usize,
    pub rows: Vec<LogRow>,
    /// True when the time budget ended training early.
    pub stopped_early: bool,
}

/// Resume point stored beside the last checkpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
struct State {
    next_epoch: usize,
    best_epoch: usize,
    best_epe_bits: u64,
}

impl State {
    fn render(&self) -> String {
        format!(
            "next_epoch = {}\nbest_epoch = {}\nbest_val_epe3d_bits = {:016x}\n",
            self.next_epoch, self.best_epoch, self.best_epe_bits
        )
    }

    fn parse(text: &str) -> Option<Self> {
        let mut next_epoch = None;
        let mut best_epoch = None;
        let mut bits = None;
        for line in text.lines() {
            let (k, v) = line.split_once('=')?;
            match k.trim() {
                "next_epoch" => next_epoch = v.trim().parse().ok(),
                "best_epoch" => best_epoch = v.trim().parse().ok(),
                "best_val_epe3d_bits" => bits = u64::from_str_radix(v.trim(), 16).ok(),
                _ => return None,
            }
        }
        Some(Self {
            next_epoch: next_epoch?,
            best_epoch: best_epoch?,
            best_epe_bits: bits?,
        })
    }
}

pub struct Trainer<'a> {
    pub cfg: &'a RunConfig,
    pub train: &'a [ScenePair],
    pub val: &'a [ScenePair],
    /// Where checkpoints, the log and the config echo go; `None` keeps everything in memory.
    pub out_dir: Option<&'a Path>,
    pub resume: bool,
    /// Stop after the epoch during which this many seconds have elapsed.
    pub budget_s: Option<f64>,
    pub verbose: bool,
}

impl Trainer<'_> {
    pub fn run(&self) -> Result<TrainOutcome, TrainError> {
        let cfg = self.cfg;
        if self.train.is_empty() {
            return Err(TrainError::Data("empty training split".into()));
        }
        if self.val.is_empty() {
            return Err(TrainError::Data("empty validation split".into()));
        }
        let net = cfg.net(PyramidMode::Standard);
        let schedule = cfg.schedule();
        let step = cfg.step();
        let aug = cfg.augmentation();
        let seed = cfg.seed;
        let start = Instant::now();

        let mut store = init_params::<f32, _>(&net, &mut seeds::rng(seed, "init", &[]))?;
        let mut best = store.clone();
        let mut state = State {
            next_epoch: 0,
            best_epoch: 0,
            best_epe_bits: f64::INFINITY.to_bits(),
        };

        if let Some(dir) = self.out_dir {
            fs::create_dir_all(dir).map_err(io(dir))?;
            fs::write(dir.join(CONFIG_ECHO), cfg.to_text()).map_err(io(dir))?;
            let state_path = dir.join(STATE);
            if self.resume && state_path.is_file() {
                let text = fs::read_to_string(&state_path).map_err(io(&state_path))?;
                state = State::parse(&text)
                    .ok_or_else(|| TrainError::Data(format!("{}: malformed state", state_path.display())))?;
                store = load_checkpoint(&dir.join(LAST))?;
                load_optimizer_state(&mut store, &dir.join(LAST_OPT))?;
                rmsflow_core::net::check_compatible(&net, &store).map_err(|errs| {
                    TrainError::Data(format!(
                        "checkpoint does not match config: {}",
                        errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
                    ))
                })?;
                let best_path = dir.join(BEST);
                best = if best_path.is_file() {
                    load_checkpoint(&best_path)?
                } else {
                    store.clone()
                };
                truncate_log(&dir.join(LOG_FILE), state.next_epoch)?;
            } else {
                fs::write(dir.join(LOG_FILE), format!("{LOG_HEADER}\n")).map_err(io(dir))?;
            }
        }

        let points = cfg.train_points;
        let fixed: Vec<ScenePair> = self
            .train
            .iter()
            .enumerate()
            .map(|(i, s)| subsample_pair(s, points, &mut seeds::rng(seed, "fixed", &[i as u64])))
            .collect::<Result<_, _>>()?;
        let val_scenes = if cfg.val_scenes > 0 {
            &self.val[..cfg.val_scenes.min(self.val.len())]
        } else {
            self.val
        };
        let val_opts = EvalOptions {
            seed,
            tag: "val",
            points,
            threads: cfg.threads,
            oracle: false,
        };

        let mut rows = Vec::new();
        let mut stopped_early = false;
        let total = schedule.total_epochs();
        for epoch in state.next_epoch..total {
            let phase = schedule.phase(epoch);
            let lr = schedule.lr(epoch);
            let mut order: Vec<usize> = (0..self.train.len()).collect();
            order.shuffle(&mut seeds::rng(seed, "order", &[epoch as u64]));
            let mut loss_sum = 0.0;
            let mut batches = 0usize;
            for batch in order.chunks(cfg.batch) {
                let grads = parallel::try_map(batch, cfg.threads, |&i| {
                    let key = [epoch as u64, i as u64];
                    let scene = match phase {
                        Phase::Fixed => fixed[i].clone(),
                        Phase::Resample => {
                            subsample_pair(&self.train[i], points, &mut seeds::rng(seed, "resample", &key))?
                        }
                    };
                    let scene = match &aug {
                        Some(a) => augment(&scene, &mut seeds::rng(seed, "augment", &key), a)?,
                        None => scene,
                    };
                    scene_grads(&store, &net, &step.weights, &scene, &mut seeds::rng(seed, "forward", &key))
                })
                .map_err(|e| diverged(epoch, e))?;
                loss_sum += apply_batch(&mut store, grads, &step, lr).map_err(|e| diverged(epoch, e))?;
                batches += 1;
            }
            let results = evaluate_scenes(&store, &net, val_scenes, &val_opts).map_err(|e| diverged(epoch, e))?;
            let val = aggregate(&results);
            let row = LogRow {
                epoch,
                phase,
                lr,
                train_loss: loss_sum / batches as f64,
                val,
                wall_s: start.elapsed().as_secs_f64(),
            };
            if self.verbose {
                eprintln!("{LOG_HEADER}: {}", row.csv(true));
            }
            let improved = val.epe3d_m < f64::from_bits(state.best_epe_bits);
            if improved {
                best = store.clone();
                state.best_epoch = epoch;
                state.best_epe_bits = val.epe3d_m.to_bits();
            }
            state.next_epoch = epoch + 1;
            if let Some(dir) = self.out_dir {
                let log = dir.join(LOG_FILE);
                let mut f = fs::OpenOptions::new().append(true).open(&log).map_err(io(&log))?;
                writeln!(f, "{}", row.csv(cfg.timing)).map_err(io(&log))?;
                if improved {
                    save_checkpoint(&best, &dir.join(BEST))?;
                }
                save_checkpoint(&store, &dir.join(LAST))?;
                save_optimizer_state(&store, &dir.join(LAST_OPT))?;
                fs::write(dir.join(STATE), state.render()).map_err(io(dir))?;
            }
            rows.push(row);
            if self.budget_s.is_some_and(|b| start.elapsed().as_secs_f64() >= b) && epoch + 1 < total {
                stopped_early = true;
                break;
            }
        }
        Ok(TrainOutcome {
            last: store,
            best,
            best_epoch: state.best_epoch,
            rows,
            stopped_early,
        })
    }
}

fn diverged(epoch: usize, e: rmsflow_core::Error) -> TrainError {
    match e {
        rmsflow_core::Error::NonFinite(what) => TrainError::Divergence {
            epoch,
            detail: format!("non-finite {what}"),
        },
        other => TrainError::Core(other),
    }
}

/// Keeps the header and the rows of epochs before `next_epoch`.
fn truncate_log(path: &Path, next_epoch: usize) -> Result<(), TrainError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        if i > next_epoch {
            break;
        }
        out.push_str(line);
        out.push('\n');
    }
    fs::write(path, out).map_err(io(path))
}
