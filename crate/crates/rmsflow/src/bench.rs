//! Runtime and memory of the sampling and search kernels and the full
//! forward pass over a grid of cloud sizes.

use std::hint::black_box;
use std::time::Instant;

use rand::Rng;
use rmsflow_core::geom::{farthest_point_sample, knn_accel, knn_brute, random_sample, PointCloud};
use rmsflow_core::net::{init_params, Ctx, NetConfig};
use rmsflow_core::predictor::forward;

use crate::alloc_count;
use crate::seeds;

pub const BENCH_HEADER: &str = "op,P,m_or_k,seed,wall_ms,peak_bytes";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    RandomSample,
    FarthestPointSample,
    KnnBrute,
    KnnAccel,
    Forward,
}

impl Op {
    pub const ALL: [Op; 5] = [
        Op::RandomSample,
        Op::FarthestPointSample,
        Op::KnnBrute,
        Op::KnnAccel,
        Op::Forward,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Op::RandomSample => "random_sample",
            Op::FarthestPointSample => "farthest_point_sample",
            Op::KnnBrute => "knn_brute",
            Op::KnnAccel => "knn_accel",
            Op::Forward => "forward",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub op: Op,
    pub p: usize,
    pub m_or_k: usize,
    pub seed: u64,
    /// Median over trials of the per-call time.
    pub wall_ms: f64,
    pub peak_bytes: usize,
}

impl BenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{}",
            self.op.name(),
            self.p,
            self.m_or_k,
            self.seed,
            self.wall_ms,
            self.peak_bytes
        )
    }
}

/// Uniform cloud in a 10 m cube.
pub fn uniform_cloud(p: usize, seed: u64) -> PointCloud {
    let mut rng = seeds::rng(seed, "bench-cloud", &[p as u64]);
    PointCloud::new(
        (0..p)
            .map(|_| {
                [
                    rng.random_range(-5.0f32..5.0),
                    rng.random_range(-5.0f32..5.0),
                    rng.random_range(-5.0f32..5.0),
                ]
            })
            .collect(),
    )
    .expect("finite coordinates")
}

#[derive(Clone, Debug)]
pub struct BenchPlan {
    pub sizes: Vec<usize>,
    pub ops: Vec<Op>,
    pub trials: usize,
    pub k: usize,
    /// Sample size is `P / ratio`.
    pub ratio: usize,
    pub brute_max: usize,
    pub forward_max: usize,
    pub seed: u64,
    /// Repeat a call until one trial lasts at least this long.
    pub min_trial_ms: f64,
    /// Network for the forward rows.
    pub net: NetConfig,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median per-call milliseconds and peak heap growth of one call.
fn time_op(trials: usize, min_ms: f64, mut call: impl FnMut()) -> (f64, usize) {
    let (_, peak) = alloc_count::measure(&mut call);
    let t = Instant::now();
    call();
    let once = t.elapsed().as_secs_f64() * 1e3;
    let reps = if once >= min_ms {
        1
    } else {
        ((min_ms / once.max(1e-6)).ceil() as usize).clamp(1, 1 << 20)
    };
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        let t = Instant::now();
        for _ in 0..reps {
            call();
        }
        samples.push(t.elapsed().as_secs_f64() * 1e3 / reps as f64);
    }
    (median(samples), peak)
}

/// One row of `op` at cloud size `p`, or `None` when `p` exceeds that op's size cap.
pub fn bench_one(plan: &BenchPlan, op: Op, p: usize) -> Option<BenchRow> {
    let cloud = uniform_cloud(p, plan.seed);
    let m = (p / plan.ratio).max(1);
    let k = plan.k.min(p);
    let mut rng = seeds::rng(plan.seed, "bench-op", &[p as u64]);
    let (m_or_k, (wall_ms, peak_bytes)) = match op {
        Op::RandomSample => (
            m,
            time_op(plan.trials, plan.min_trial_ms, || {
                black_box(random_sample(&cloud, m, &mut rng).expect("m <= P"));
            }),
        ),
        Op::FarthestPointSample => (
            m,
            time_op(plan.trials, plan.min_trial_ms, || {
                black_box(farthest_point_sample(&cloud, m, 0).expect("m <= P"));
            }),
        ),
        Op::KnnBrute => {
            if p > plan.brute_max {
                return None;
            }
            (
                k,
                time_op(plan.trials, plan.min_trial_ms, || {
                    black_box(knn_brute(&cloud, &cloud, k).expect("k <= P"));
                }),
            )
        }
        Op::KnnAccel => (
            k,
            time_op(plan.trials, plan.min_trial_ms, || {
                black_box(knn_accel(&cloud, &cloud, k).expect("k <= P"));
            }),
        ),
        Op::Forward => {
            if p > plan.forward_max || p < plan.net.pyramid.level_sizes[0] {
                return None;
            }
            let store = init_params::<f32, _>(&plan.net, &mut seeds::rng(plan.seed, "bench-init", &[]))
                .expect("valid network");
            let other = uniform_cloud(p, plan.seed ^ 1);
            (
                p,
                time_op(plan.trials, plan.min_trial_ms, || {
                    let mut ctx = Ctx::inference(&store, plan.net.slope);
                    black_box(forward(&mut ctx, &plan.net, &cloud, &other, &mut rng).expect("forward"));
                }),
            )
        }
    };
    Some(BenchRow {
        op,
        p,
        m_or_k,
        seed: plan.seed,
        wall_ms,
        peak_bytes,
    })
}

pub fn run(plan: &BenchPlan) -> Vec<BenchRow> {
    let mut rows = Vec::new();
    for &op in &plan.ops {
        for &p in &plan.sizes {
            if let Some(r) = bench_one(plan, op, p) {
                rows.push(r);
            }
        }
    }
    rows
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(BENCH_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

/// Least-squares slope of `ln wall_ms` against `ln P`.
pub fn loglog_slope(points: &[(usize, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(p, _)| (p as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, t)| t.max(1e-12).ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
