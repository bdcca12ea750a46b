use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmsflow_core::flowembed::{embed_patch_to_point, Queries};
use rmsflow_core::geom::PointCloud;
use rmsflow_core::gradcheck::{max_rel_err, random_tensor, CheckOptions};
use rmsflow_core::net::{init_params, Ctx, NetConfig};
use rmsflow_core::numcore::{ParamStore, Tensor, Var};
use rmsflow_core::predictor::{estimate_flow, forward, gt_at_levels, multiscale_loss_on_tape, LossWeights, SceneFlow};
use rmsflow_core::pyramid::{attentive_pool, lfa, upsample_tconv, PyramidConfig};
use rmsflow_core::Result;

use crate::Verdict;

const ELEMENTWISE_TOL: f64 = 1e-6;
const NETWORK_TOL: f64 = 1e-4;

type Build = Box<dyn Fn(&mut Ctx<'_, f64>) -> Result<Var>>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn store_of(items: Vec<(&str, Tensor<f64>)>) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (n, t) in items {
        s.insert(n, t).unwrap();
    }
    s
}

fn cloud(n: usize, r: &mut ChaCha8Rng) -> PointCloud {
    PointCloud::new((0..n).map(|_| [0; 3].map(|_| r.random_range(-1.0f32..1.0))).collect()).unwrap()
}

fn net() -> NetConfig {
    let mut cfg = NetConfig::default();
    cfg.pyramid = PyramidConfig {
        level_sizes: vec![16, 6],
        channels: vec![4, 6],
        input_channels: 4,
        k_p: 5,
        k_q: 1,
    };
    cfg.embed.k_o = 6;
    cfg
}

/// `(name, store, graph, tolerance, entries per parameter)`.
fn cases() -> Vec<(&'static str, ParamStore<f64>, Build, f64, usize)> {
    let all = usize::MAX;
    let mut r = rng(1);
    let x3 = random_tensor(&[3, 4, 5], &mut r);
    let ab = store_of(vec![("a", random_tensor(&[3, 4], &mut r)), ("b", random_tensor(&[3, 4], &mut r))]);
    let x = store_of(vec![("x", x3.clone())]);
    // Distinct values keep every maximum unique under perturbation.
    let mut vals: Vec<f64> = (0..60).map(|i| i as f64 * 0.01).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, r.random_range(0..=i));
    }
    let distinct = store_of(vec![("x", Tensor::new(vec![3, 4, 5], vals).unwrap())]);
    let off_zero = store_of(vec![(
        "x",
        random_tensor(&[6, 5], &mut r).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 }),
    )]);
    let lin = store_of(vec![
        ("x", random_tensor(&[2, 3, 4], &mut r)),
        ("w", random_tensor(&[4, 5], &mut r)),
        ("b", random_tensor(&[5], &mut r)),
    ]);
    let gather = store_of(vec![("x", random_tensor(&[4, 3], &mut r)), ("y", random_tensor(&[2, 3, 2], &mut r))]);

    let mut v: Vec<(&'static str, ParamStore<f64>, Build, f64, usize)> = vec![
        ("linear", lin.clone(), Box::new(|c| {
            let (x, w, b) = (c.param("x")?, c.param("w")?, c.param("b")?);
            c.tape.linear(x, w, Some(b))
        }), ELEMENTWISE_TOL, all),
        ("linear(no bias)", lin, Box::new(|c| {
            let (x, w) = (c.param("x")?, c.param("w")?);
            c.tape.linear(x, w, None)
        }), ELEMENTWISE_TOL, all),
        ("leaky_relu", off_zero, Box::new(|c| {
            let x = c.param("x")?;
            c.tape.leaky_relu(x, 0.1)
        }), ELEMENTWISE_TOL, all),
        ("softmax_lastdim", x.clone(), Box::new(|c| {
            let x = c.param("x")?;
            c.tape.softmax_lastdim(x)
        }), ELEMENTWISE_TOL, all),
        ("softmax_neighbors", x.clone(), Box::new(|c| {
            let x = c.param("x")?;
            c.tape.softmax_neighbors(x)
        }), ELEMENTWISE_TOL, all),
        ("max_reduce", distinct.clone(), Box::new(|c| {
            let x = c.param("x")?;
            c.tape.max_reduce(x)
        }), ELEMENTWISE_TOL, all),
        ("sum_reduce", distinct.clone(), Box::new(|c| {
            let x = c.param("x")?;
            c.tape.sum_reduce(x)
        }), ELEMENTWISE_TOL, all),
        ("sum_all", distinct.clone(), Box::new(|c| {
            let x = c.param("x")?;
            Ok(c.tape.sum_all(x))
        }), ELEMENTWISE_TOL, all),
        ("row_norm", distinct.clone(), Box::new(|c| {
            let x = c.param("x")?;
            c.tape.row_norm(x)
        }), ELEMENTWISE_TOL, all),
        ("reshape", distinct, Box::new(|c| {
            let x = c.param("x")?;
            c.tape.reshape(x, vec![12, 5])
        }), ELEMENTWISE_TOL, all),
        ("gather_rows", gather.clone(), Box::new(|c| {
            let x = c.param("x")?;
            c.tape.gather_rows(x, &[0, 0, 3, 1, 1, 1], 2, 3)
        }), ELEMENTWISE_TOL, all),
        ("concat_lastdim", gather, Box::new(|c| {
            let x = c.param("x")?;
            let g = c.tape.gather_rows(x, &[2, 0, 3, 1, 1, 0], 2, 3)?;
            let y = c.param("y")?;
            c.tape.concat_lastdim(g, y)
        }), ELEMENTWISE_TOL, all),
        ("add", ab.clone(), Box::new(|c| {
            let (a, b) = (c.param("a")?, c.param("b")?);
            c.tape.add(a, b)
        }), ELEMENTWISE_TOL, all),
        ("sub", ab.clone(), Box::new(|c| {
            let (a, b) = (c.param("a")?, c.param("b")?);
            c.tape.sub(a, b)
        }), ELEMENTWISE_TOL, all),
        ("mul", ab.clone(), Box::new(|c| {
            let (a, b) = (c.param("a")?, c.param("b")?);
            c.tape.mul(a, b)
        }), ELEMENTWISE_TOL, all),
        ("scale", ab, Box::new(|c| {
            let a = c.param("a")?;
            Ok(c.tape.scale(a, -2.5))
        }), ELEMENTWISE_TOL, all),
    ];

    v.push((
        "attentive_pool",
        store_of(vec![
            ("g", random_tensor(&[5, 4, 6], &mut r)),
            ("att.score.w", random_tensor(&[6, 6], &mut r)),
            ("att.out.w", random_tensor(&[6, 3], &mut r)),
            ("att.out.b", random_tensor(&[3], &mut r)),
        ]),
        Box::new(|c| {
            let g = c.param("g")?;
            attentive_pool(c, g, "att")
        }),
        ELEMENTWISE_TOL,
        all,
    ));

    let mut est = store_of(vec![("x", random_tensor(&[6, 5], &mut r))]);
    for (i, (cin, cout)) in [(5, 64), (64, 32), (32, 3)].into_iter().enumerate() {
        est.insert(&format!("est.l{i}.w"), random_tensor(&[cin, cout], &mut r).map(|v| v * 0.5)).unwrap();
        est.insert(&format!("est.l{i}.b"), random_tensor(&[cout], &mut r).map(|v| v * 0.1)).unwrap();
    }
    v.push((
        "estimator",
        est,
        Box::new(|c| {
            let x = c.param("x")?;
            estimate_flow(c, x, "est")
        }),
        ELEMENTWISE_TOL,
        40,
    ));

    let init: ParamStore<f64> = init_params(&net(), &mut r).unwrap();
    let subset = |prefix: &str, mut s: ParamStore<f64>| {
        for (n, p) in init.iter().filter(|(n, _)| n.starts_with(prefix)) {
            s.insert(n, p.value.clone()).unwrap();
        }
        s
    };

    let pc = cloud(32, &mut r);
    v.push((
        "lfa",
        subset("pyramid.lfa1.", store_of(vec![("f", random_tensor(&[32, 4], &mut r))])),
        Box::new(move |c| {
            let f = c.param("f")?;
            lfa(c, &pc, f, 5, [0.0; 3], "pyramid.lfa1")
        }),
        NETWORK_TOL,
        all,
    ));

    let (fine, coarse) = (cloud(20, &mut r), cloud(6, &mut r));
    v.push((
        "upsample_tconv",
        store_of(vec![
            ("fc", random_tensor(&[6, 5], &mut r)),
            ("lat", random_tensor(&[20, 3], &mut r)),
            ("up.tconv.w", random_tensor(&[5, 3], &mut r)),
            ("up.tconv.b", random_tensor(&[3], &mut r)),
            ("up.lat.w", random_tensor(&[3, 3], &mut r)),
            ("up.lat.b", random_tensor(&[3], &mut r)),
        ]),
        Box::new(move |c| {
            let (fc, lat) = (c.param("fc")?, c.param("lat")?);
            Ok(upsample_tconv(c, &coarse, fc, &fine, lat, 1, "up")?.0)
        }),
        NETWORK_TOL,
        all,
    ));

    let (a, b) = (cloud(12, &mut r), cloud(14, &mut r));
    v.push((
        "warped embedding",
        subset(
            "fe1.s1.",
            store_of(vec![
                ("fa", random_tensor(&[12, 4], &mut r)),
                ("fb", random_tensor(&[14, 4], &mut r)),
                ("shift", random_tensor(&[12, 3], &mut r).map(|v| v * 0.2)),
            ]),
        ),
        Box::new(move |c| {
            let (fa, fb, shift) = (c.param("fa")?, c.param("fb")?, c.param("shift")?);
            embed_patch_to_point(c, Queries::warped(&a, shift), &b, fb, fa, 6, "fe1")
        }),
        NETWORK_TOL,
        all,
    ));

    let cfg = net();
    let a = cloud(32, &mut r);
    let b = cloud(32, &mut r).translated([0.1, 0.0, 0.0]);
    let gt = SceneFlow::new((0..32).map(|_| [r.random_range(-0.2f32..0.2), 0.05, 0.0]).collect()).unwrap();
    let weights = LossWeights::for_levels(2);
    v.push((
        "network(32 points, 2 levels)",
        init.clone(),
        Box::new(move |c| {
            let out = forward(c, &cfg, &a, &b, &mut rng(77))?;
            let gts = gt_at_levels(&gt, &out.chain)?;
            multiscale_loss_on_tape(c, &out.flows, &gts, &weights)
        }),
        NETWORK_TOL,
        12,
    ));
    v
}

pub fn a1() -> Verdict {
    let mut failures = Vec::new();
    let mut worst_op: f64 = 0.0;
    let mut worst_net: f64 = 0.0;
    let cases = cases();
    let n = cases.len();
    for (name, store, build, tol, per_param) in cases {
        let opts = CheckOptions {
            per_param,
            ..CheckOptions::default()
        };
        match max_rel_err(&store, build, &opts) {
            Ok((err, param)) => {
                if tol == ELEMENTWISE_TOL {
                    worst_op = worst_op.max(err);
                } else {
                    worst_net = worst_net.max(err);
                }
                if err >= tol {
                    failures.push(format!("{name}: {err:.2e} at {param}"));
                }
            }
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    let mut detail = format!(
        "{n} graphs; max rel err elementwise {worst_op:.2e} (< {ELEMENTWISE_TOL:e}), composed {worst_net:.2e} (< {NETWORK_TOL:e})"
    );
    if !failures.is_empty() {
        detail.push_str(&format!("; failing: {}", failures.join(", ")));
    }
    Verdict::new(failures.is_empty(), detail)
}
