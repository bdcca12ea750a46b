use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmsflow::bench::{self, BenchPlan, Op};
use rmsflow_core::geom::{farthest_point_sample, knn_accel, knn_brute, sq_dist, PointCloud};
use rmsflow_core::net::NetConfig;

use crate::Verdict;

const KINDS: [&str; 5] = ["uniform", "clustered", "coincident", "lattice", "planar"];

fn instance(kind: &str, n: usize, r: &mut ChaCha8Rng) -> PointCloud {
    let mut p = || [0; 3].map(|_| r.random_range(-50.0f32..50.0));
    let pts: Vec<[f32; 3]> = match kind {
        "uniform" => (0..n).map(|_| p()).collect(),
        "clustered" => {
            let centers: Vec<[f32; 3]> = (0..3).map(|_| p()).collect();
            (0..n)
                .map(|i| {
                    let c = centers[i % 3];
                    let o = p();
                    [0, 1, 2].map(|a| c[a] + o[a] * 2e-4)
                })
                .collect()
        }
        "coincident" => {
            let a = p();
            let mut v = vec![a; n];
            for q in v.iter_mut().step_by(7) {
                *q = p();
            }
            v
        }
        "lattice" => (0..n).map(|_| p().map(|x| (x / 15.0).round())).collect(),
        _ => (0..n).map(|_| { let q = p(); [q[0], q[1], 2.5] }).collect(),
    };
    PointCloud::new(pts).unwrap()
}

fn fps_naive(pc: &PointCloud, m: usize, start: usize) -> Vec<usize> {
    let mut chosen = vec![start];
    while chosen.len() < m {
        let mut best: Option<(f32, usize)> = None;
        for i in 0..pc.len() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen.iter().map(|&c| sq_dist(&pc.get(i), &pc.get(c))).fold(f32::INFINITY, f32::min);
            if best.is_none_or(|(bd, _)| d > bd) {
                best = Some((d, i));
            }
        }
        chosen.push(best.unwrap().1);
    }
    chosen
}

pub fn a2() -> Verdict {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let (knn_cases, fps_cases) = (600, 150);
    let mut bad = Vec::new();
    for i in 0..knn_cases {
        let kind = KINDS[i % KINDS.len()];
        let targets = instance(kind, r.random_range(1..400), &mut r);
        let queries = if i % 4 == 0 {
            targets.clone()
        } else {
            instance(KINDS[r.random_range(0..KINDS.len())], r.random_range(1..80), &mut r)
        };
        let k = r.random_range(1..=targets.len().min(40));
        let (a, b) = (knn_accel(&queries, &targets, k), knn_brute(&queries, &targets, k));
        match (a, b) {
            (Ok(a), Ok(b)) if a.bit_eq(&b) => {}
            _ => bad.push(format!("knn #{i} ({kind})")),
        }
    }
    for i in 0..fps_cases {
        let kind = KINDS[i % KINDS.len()];
        let pc = instance(kind, r.random_range(1..120), &mut r);
        let m = r.random_range(1..=pc.len());
        let start = r.random_range(0..pc.len());
        match farthest_point_sample(&pc, m, start) {
            Ok(s) if s.indices() == fps_naive(&pc, m, start).as_slice() => {}
            _ => bad.push(format!("fps #{i} ({kind})")),
        }
    }
    let detail = format!(
        "knn_accel vs knn_brute bit-identical on {}/{knn_cases}; fps vs greedy oracle on {}/{fps_cases} ({})",
        knn_cases - bad.iter().filter(|b| b.starts_with("knn")).count(),
        fps_cases - bad.iter().filter(|b| b.starts_with("fps")).count(),
        KINDS.join("/")
    );
    Verdict::new(bad.is_empty(), detail)
}

pub fn a5() -> Verdict {
    let sizes = vec![4096, 16384, 65536];
    let plan = BenchPlan {
        sizes: sizes.clone(),
        ops: vec![Op::RandomSample, Op::FarthestPointSample],
        trials: 3,
        k: 17,
        ratio: 4,
        brute_max: 0,
        forward_max: 0,
        seed: 1,
        min_trial_ms: 20.0,
        net: NetConfig::default(),
    };
    let rows = bench::run(&plan);
    let series = |op: Op| -> Vec<(usize, f64)> { rows.iter().filter(|r| r.op == op).map(|r| (r.p, r.wall_ms)).collect() };
    let (rs, fps) = (series(Op::RandomSample), series(Op::FarthestPointSample));
    if rs.len() != sizes.len() || fps.len() != sizes.len() {
        return Verdict::new(false, "missing benchmark rows");
    }
    let (s_rs, s_fps) = (bench::loglog_slope(&rs), bench::loglog_slope(&fps));
    let speedup: Vec<f64> = rs.iter().zip(&fps).map(|(a, b)| b.1 / a.1).collect();
    let increasing = speedup.windows(2).all(|w| w[1] > w[0]);
    let pass = s_rs <= 1.1 && s_fps >= 1.8 && increasing;
    let times = |s: &[(usize, f64)]| s.iter().map(|(_, t)| format!("{t:.3}")).collect::<Vec<_>>().join("/");
    Verdict::new(
        pass,
        format!(
            "N = 4096/16384/65536, m = N/4: random_sample {} ms (slope {s_rs:.2} <= 1.1), \
             farthest_point_sample {} ms (slope {s_fps:.2} >= 1.8), speedup {} (strictly increasing: {increasing})",
            times(&rs),
            times(&fps),
            speedup.iter().map(|s| format!("{s:.0}x")).collect::<Vec<_>>().join("/")
        ),
    )
}
