use std::path::PathBuf;
use std::time::Instant;

use rmsflow::ablate;
use rmsflow::config::{PyramidMode, RunConfig};
use rmsflow::dataset::{self, Split};
use rmsflow::eval::{aggregate, evaluate_scenes, EvalOptions};
use rmsflow::seeds;
use rmsflow::trainer::{TrainOutcome, Trainer};
use rmsflow_core::data::ScenePair;
use rmsflow_core::metrics::MetricsReport;
use rmsflow_core::net::init_params;
use rmsflow_core::numcore::ParamStore;

use crate::Verdict;

/// Training budget in CPU seconds; training runs on one thread.
const BUDGET_S: f64 = 3600.0;
/// Epochs stop once the budget is passed, so leave room for the last one.
const STOP_AFTER_S: f64 = 3400.0;
/// Allowed spread of the learning targets across seeds.
const TOLERANCE: f64 = 0.10;

fn desk_config() -> Result<RunConfig, String> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.conf");
    let mut cfg = RunConfig::load(Some(&path), &["threads=1".into()]).map_err(|e| e.to_string())?;
    cfg.timing = false;
    Ok(cfg)
}

fn eval(store: &ParamStore<f32>, cfg: &RunConfig, mode: PyramidMode, scenes: &[ScenePair], points: usize) -> Result<MetricsReport, String> {
    let opts = EvalOptions {
        seed: cfg.seed,
        tag: "accept",
        points,
        threads: 1,
        oracle: false,
    };
    evaluate_scenes(store, &cfg.net(mode), scenes, &opts)
        .map(|r| aggregate(&r))
        .map_err(|e| e.to_string())
}

pub struct Desk {
    cfg: RunConfig,
    val: Vec<ScenePair>,
    outcome: TrainOutcome,
    train_s: f64,
    untrained: MetricsReport,
    trained: MetricsReport,
}

impl Desk {
    /// Generates the desk dataset and trains on it once.
    pub fn train() -> Result<Self, String> {
        let cfg = desk_config()?;
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let dir = tmp.path().join("desk");
        dataset::generate(&dir, &cfg.synth(), cfg.scenes, cfg.train_fraction, cfg.val_fraction, cfg.seed, 1)
            .map_err(|e| e.to_string())?;
        let train = dataset::load_split(&dir, Split::Train).map_err(|e| e.to_string())?;
        let val = dataset::load_split(&dir, Split::Val).map_err(|e| e.to_string())?;
        if (train.len(), val.len()) != (500, 100) {
            return Err(format!("desk split is {}/{}, expected 500/100", train.len(), val.len()));
        }
        let net = cfg.net(PyramidMode::Standard);
        let init = init_params::<f32, _>(&net, &mut seeds::rng(cfg.seed, "init", &[])).map_err(|e| e.to_string())?;
        let untrained = eval(&init, &cfg, PyramidMode::Standard, &val, cfg.train_points)?;
        eprintln!("desk: training on {} scenes, {} epochs", train.len(), cfg.schedule().total_epochs());
        let t = Instant::now();
        let outcome = Trainer {
            cfg: &cfg,
            train: &train,
            val: &val,
            out_dir: None,
            resume: false,
            budget_s: Some(STOP_AFTER_S),
            verbose: true,
        }
        .run()
        .map_err(|e| e.to_string())?;
        let train_s = t.elapsed().as_secs_f64();
        let trained = eval(&outcome.best, &cfg, PyramidMode::Standard, &val, cfg.train_points)?;
        Ok(Self {
            cfg,
            val,
            outcome,
            train_s,
            untrained,
            trained,
        })
    }

    pub fn a3(&self) -> Verdict {
        let (u, t) = (&self.untrained, &self.trained);
        let epe_max = 0.08 * (1.0 + TOLERANCE);
        let acc_min = 0.80 * (1.0 - TOLERANCE);
        let pass = t.epe3d_m < epe_max && t.acc3dr > acc_min && u.epe3d_m > 0.2 && self.train_s <= BUDGET_S;
        Verdict::new(
            pass,
            format!(
                "val EPE3D {:.4} m (target < 0.08, tolerance {epe_max:.3}), Acc3DR {:.3} (target > 0.80, tolerance {acc_min:.2}), \
                 best of {} epochs (epoch {}), {:.1} CPU-min{}; untrained EPE3D {:.3} m (> 0.2)",
                t.epe3d_m,
                t.acc3dr,
                self.outcome.rows.len(),
                self.outcome.best_epoch,
                self.train_s / 60.0,
                if self.outcome.stopped_early { ", stopped by budget" } else { "" },
                u.epe3d_m
            ),
        )
    }

    pub fn a4(&self) -> Verdict {
        let mut syn = self.cfg.synth();
        syn.static_fraction = 1.0;
        let seed = seeds::derive(self.cfg.seed, "static", &[]);
        let scenes: Result<Vec<ScenePair>, _> = (0..50).map(|id| dataset::generate_scene(&syn, seed, id)).collect();
        let scenes = match scenes {
            Ok(s) => s,
            Err(e) => return Verdict::error(e),
        };
        // The ground truth is zero, so EPE3D is the mean predicted magnitude.
        match eval(&self.outcome.best, &self.cfg, PyramidMode::Standard, &scenes, self.cfg.train_points) {
            Ok(r) => Verdict::new(
                r.epe3d_m < 0.01,
                format!(
                    "mean |SF| {:.4} m on {} static pairs (< 0.01; training mix has static fraction {})",
                    r.epe3d_m,
                    scenes.len(),
                    self.cfg.static_fraction
                ),
            ),
            Err(e) => Verdict::error(e),
        }
    }

    pub fn a6(&self) -> Verdict {
        let base = self.trained.acc3dr;
        let mut parts = Vec::new();
        let mut worst_drop: f64 = f64::NEG_INFINITY;
        for n in [512, 1024, 2048] {
            match eval(&self.outcome.best, &self.cfg, PyramidMode::Dense, &self.val, n) {
                Ok(r) => {
                    worst_drop = worst_drop.max(base - r.acc3dr);
                    parts.push(format!("{n}: {:.3}", r.acc3dr));
                }
                Err(e) => return Verdict::error(e),
            }
        }
        Verdict::new(
            worst_drop < 0.10,
            format!(
                "Acc3DR trained/evaluated at 512 {base:.3}; dense levels {:?} at {}; largest drop {:.1} pp (< 10)",
                self.cfg.level_sizes(PyramidMode::Dense),
                parts.join(", "),
                worst_drop * 100.0
            ),
        )
    }
}

/// Equal reduced budget for each of the five variants.
const ABLATION: &[&str] = &[
    "data.scenes=240",
    "data.train_fraction=0.8333333333333334",
    "data.val_fraction=0.16666666666666666",
    "pyramid.c0=16",
    "pyramid.c1=16",
    "pyramid.c2=32",
    "pyramid.c3=64",
    "train.phase1_epochs=10",
    "train.decay_every=4",
    "train.phase2_epochs=2",
];

pub fn a7() -> Verdict {
    let run = || -> Result<Vec<ablate::AblationRow>, String> {
        let mut cfg = desk_config()?;
        for kv in ABLATION {
            cfg.apply_override(kv).map_err(|e| e.to_string())?;
        }
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let dir = tmp.path().join("data");
        dataset::generate(&dir, &cfg.synth(), cfg.scenes, cfg.train_fraction, cfg.val_fraction, cfg.seed, 1)
            .map_err(|e| e.to_string())?;
        let train = dataset::load_split(&dir, Split::Train).map_err(|e| e.to_string())?;
        let val = dataset::load_split(&dir, Split::Val).map_err(|e| e.to_string())?;
        ablate::run(&cfg, &train, &val, None, false).map_err(|e| e.to_string())
    };
    let rows = match run() {
        Ok(r) => r,
        Err(e) => return Verdict::error(e),
    };
    let acc: Vec<f64> = rows.iter().map(|r| r.report.acc3dr).collect();
    let steps = acc.windows(2).filter(|w| w[1] >= w[0]).count();
    let full_best = acc.iter().all(|&a| a <= acc[acc.len() - 1]);
    Verdict::new(
        steps >= 3 && full_best,
        format!(
            "Acc3DR by row {}; non-decreasing steps {steps}/4 (>= 3), full design best: {full_best}",
            acc.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" -> ")
        ),
    )
}
