//! Evaluation under the random-subsampling protocol.

use std::time::Instant;

use rmsflow_core::data::{subsample_pair, ScenePair};
use rmsflow_core::metrics::{evaluate, MetricsReport};
use rmsflow_core::net::NetConfig;
use rmsflow_core::numcore::ParamStore;
use rmsflow_core::train::predict;

use crate::parallel;
use crate::seeds;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneResult {
    pub scene_id: u64,
    pub points: usize,
    pub report: MetricsReport,
    pub infer_ms: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions<'a> {
    pub seed: u64,
    /// Stream tag; scenes are subsampled and sampled per `(tag, scene_id, points)`.
    pub tag: &'a str,
    pub points: usize,
    pub threads: usize,
    /// Feed the ground truth through the metric pipeline instead of the network.
    pub oracle: bool,
}

/// `points` random rows of each frame, reproducible per scene.
pub fn eval_subset(pair: &ScenePair, opts: &EvalOptions<'_>) -> rmsflow_core::Result<ScenePair> {
    let mut rng = seeds::rng(opts.seed, opts.tag, &[pair.scene_id, opts.points as u64, 0]);
    subsample_pair(pair, opts.points, &mut rng)
}

pub fn evaluate_scenes(
    store: &ParamStore<f32>,
    net: &NetConfig,
    scenes: &[ScenePair],
    opts: &EvalOptions<'_>,
) -> rmsflow_core::Result<Vec<SceneResult>> {
    parallel::try_map(scenes, opts.threads, |pair| {
        let sub = eval_subset(pair, opts)?;
        let t = Instant::now();
        let pred = if opts.oracle {
            sub.gt_flow.clone()
        } else {
            let mut rng = seeds::rng(opts.seed, opts.tag, &[pair.scene_id, opts.points as u64, 1]);
            predict(store, net, &sub, &mut rng)?
        };
        let infer_ms = t.elapsed().as_secs_f64() * 1e3;
        Ok(SceneResult {
            scene_id: pair.scene_id,
            points: opts.points,
            report: evaluate(&pred, &sub.gt_flow)?,
            infer_ms,
        })
    })
}

pub fn aggregate(results: &[SceneResult]) -> MetricsReport {
    MetricsReport::merge(&results.iter().map(|r| r.report).collect::<Vec<_>>())
}

pub const EVAL_HEADER: &str = "scene_id,N,epe3d,acc3ds,acc3dr,out3d,infer_ms";

/// Per-scene rows followed by one `all` row per point count.
pub fn eval_csv(results: &[SceneResult], timing: bool) -> String {
    let mut s = String::from(EVAL_HEADER);
    s.push('\n');
    let ms = |v: f64| if timing { format!("{v:.3}") } else { "0".into() };
    let row = |s: &mut String, id: &str, n: usize, r: &MetricsReport, t: f64| {
        s.push_str(&format!(
            "{id},{n},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.epe3d_m,
            r.acc3ds,
            r.acc3dr,
            r.out3d,
            ms(t)
        ));
    };
    for r in results {
        row(&mut s, &r.scene_id.to_string(), r.points, &r.report, r.infer_ms);
    }
    let mut sizes: Vec<usize> = results.iter().map(|r| r.points).collect();
    sizes.dedup();
    for n in sizes {
        let group: Vec<SceneResult> = results.iter().filter(|r| r.points == n).cloned().collect();
        let mean_ms = group.iter().map(|r| r.infer_ms).sum::<f64>() / group.len().max(1) as f64;
        row(&mut s, "all", n, &aggregate(&group), mean_ms);
    }
    s
}
