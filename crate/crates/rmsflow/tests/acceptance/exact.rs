use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmsflow::config::RunConfig;
use rmsflow::dataset::{self, Split};
use rmsflow::eval::{eval_csv, evaluate_scenes, EvalOptions};
use rmsflow::format::{load_checkpoint, read_scene, save_checkpoint, write_scene};
use rmsflow::trainer::{Trainer, BEST, LAST, LAST_OPT, LOG_FILE};
use rmsflow_core::metrics::{accuracy, epe3d, outliers, ACC3DR, ACC3DS};
use rmsflow_core::predictor::{multiscale_loss, LossWeights, SceneFlow};

use crate::Verdict;

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// `(error norm, ground-truth norm)` per point.
fn pairs(p: &[[f64; 3]], g: &[[f64; 3]]) -> Vec<(f64, f64)> {
    p.iter().zip(g).map(|(a, b)| (norm([a[0] - b[0], a[1] - b[1], a[2] - b[2]]), norm(*b))).collect()
}

fn sf(v: &[[f64; 3]]) -> SceneFlow {
    SceneFlow::new(v.iter().map(|p| p.map(|x| x as f32)).collect()).unwrap()
}

/// Ground truth and a nearby prediction, both exactly representable in f32.
fn flows(n: usize, r: &mut ChaCha8Rng) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    let g: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            if r.random_bool(0.2) {
                [0.0; 3]
            } else {
                [0; 3].map(|_| r.random_range(-1.0f32..1.0) as f64)
            }
        })
        .collect();
    let p = g
        .iter()
        .map(|g| {
            let s = r.random_range(0.0f32..0.3);
            g.map(|x| (x as f32 + r.random_range(-1.0f32..1.0) * s) as f64)
        })
        .collect();
    (p, g)
}

pub fn a8() -> Verdict {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let cases = 1000;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (p, g) = flows(r.random_range(1..80), &mut r);
        let e = pairs(&p, &g);
        let n = e.len() as f64;
        let frac = |f: &dyn Fn(f64, f64) -> bool| e.iter().filter(|(err, gn)| f(*err, *gn)).count() as f64 / n;
        let want = [
            e.iter().map(|x| x.0).sum::<f64>() / n,
            frac(&|err, gn| err < 0.05 || (gn > 0.0 && err / gn < 0.05)),
            frac(&|err, gn| err < 0.1 || (gn > 0.0 && err / gn < 0.1)),
            frac(&|err, gn| err > 0.3 || (gn > 0.0 && err / gn > 0.1)),
        ];
        let (ps, gs) = (sf(&p), sf(&g));
        let got = [
            epe3d(&ps, &gs).unwrap(),
            accuracy(&ps, &gs, ACC3DS.0, ACC3DS.1).unwrap(),
            accuracy(&ps, &gs, ACC3DR.0, ACC3DR.1).unwrap(),
            outliers(&ps, &gs).unwrap(),
        ];
        for (a, b) in got.iter().zip(want) {
            worst = worst.max((a - b).abs());
        }

        let alpha: Vec<f64> = (0..4).map(|_| r.random_range(0.0..1.0)).collect();
        let levels: Vec<_> = (0..4).map(|k| flows(r.random_range(1..(60 >> k)), &mut r)).collect();
        let want: f64 = levels
            .iter()
            .zip(&alpha)
            .map(|((p, g), a)| a * pairs(p, g).iter().map(|x| x.0).sum::<f64>())
            .sum();
        let preds: Vec<SceneFlow> = levels.iter().map(|(p, _)| sf(p)).collect();
        let gts: Vec<SceneFlow> = levels.iter().map(|(_, g)| sf(g)).collect();
        let got = multiscale_loss(&preds, &gts, &LossWeights(alpha)).unwrap();
        worst = worst.max((got - want).abs() / want.max(1.0));
    }

    let unit = |v: f32| vec![SceneFlow::new(vec![[v, 0.0, 0.0]]).unwrap(); 4];
    let hand = multiscale_loss(&unit(1.0), &unit(0.0), &LossWeights::default()).unwrap();
    let hand_ok = hand == 0.02 + 0.04 + 0.08 + 0.16 && (hand - 0.30).abs() < 1e-15;
    Verdict::new(
        worst <= 1e-6 && hand_ok,
        format!(
            "{cases} random instances, max deviation from f64 reference {worst:.2e} (<= 1e-6); \
             hand example {hand} == 0.02+0.04+0.08+0.16: {hand_ok}"
        ),
    )
}

const TINY: &str = "\
seed = 11
output.timing = false
data.scenes = 16
data.train_fraction = 0.5
data.val_fraction = 0.25
synth.objects = 2
synth.points_per_object = 40
pyramid.l1 = 24
pyramid.l2 = 10
pyramid.l3 = 5
pyramid.c0 = 4
pyramid.c1 = 6
pyramid.c2 = 8
pyramid.c3 = 8
pyramid.k_p = 5
embed.k_o = 6
train.points = 48
train.batch = 2
train.phase1_epochs = 2
train.phase2_epochs = 1
";

/// Every file a gen + train + eval run writes, in a fixed order.
fn run_once(root: &Path, cfg: &RunConfig) -> Result<Vec<(String, Vec<u8>)>, String> {
    let s = |e: &dyn std::fmt::Display| e.to_string();
    let data = root.join("data");
    dataset::generate(&data, &cfg.synth(), cfg.scenes, cfg.train_fraction, cfg.val_fraction, cfg.seed, 1)
        .map_err(|e| s(&e))?;
    let train = dataset::load_split(&data, Split::Train).map_err(|e| s(&e))?;
    let val = dataset::load_split(&data, Split::Val).map_err(|e| s(&e))?;
    let out = root.join("train");
    let outcome = Trainer {
        cfg,
        train: &train,
        val: &val,
        out_dir: Some(&out),
        resume: false,
        budget_s: None,
        verbose: false,
    }
    .run()
    .map_err(|e| s(&e))?;
    let opts = EvalOptions {
        seed: cfg.seed,
        tag: "eval",
        points: cfg.train_points,
        threads: 1,
        oracle: false,
    };
    let results = evaluate_scenes(&outcome.best, &cfg.net(cfg.mode), &val, &opts).map_err(|e| s(&e))?;
    fs::write(root.join("eval.csv"), eval_csv(&results, cfg.timing)).map_err(|e| s(&e))?;

    let mut files = Vec::new();
    let mut names: Vec<_> = fs::read_dir(&data).map_err(|e| s(&e))?.map(|e| e.unwrap().path()).collect();
    names.sort();
    names.extend([LOG_FILE, BEST, LAST, LAST_OPT].map(|f| out.join(f)));
    names.push(root.join("eval.csv"));
    for p in names {
        files.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).map_err(|e| s(&e))?));
    }
    Ok(files)
}

pub fn a9() -> Verdict {
    let tmp = match tempfile::tempdir() {
        Ok(t) => t,
        Err(e) => return Verdict::error(e),
    };
    let mut cfg = RunConfig::default();
    if let Err(e) = cfg.apply_text(TINY, Path::new("tiny")) {
        return Verdict::error(e);
    }
    let runs: Result<Vec<_>, String> = ["a", "b"].iter().map(|d| run_once(&tmp.path().join(d), &cfg)).collect();
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return Verdict::error(e),
    };
    let identical = runs[0] == runs[1];
    let nfiles = runs[0].len();

    // Round trips.
    let ckpt = tmp.path().join("a/train").join(LAST);
    let store = load_checkpoint(&ckpt).unwrap();
    let again = tmp.path().join("again.rmsw");
    save_checkpoint(&store, &again).unwrap();
    let ckpt_ok = fs::read(&ckpt).unwrap() == fs::read(&again).unwrap();
    let scenes = dataset::load_split(&tmp.path().join("a/data"), Split::Train).unwrap();
    let mut scene_ok = true;
    for pair in &scenes {
        let path = tmp.path().join("scene.sfpr");
        write_scene(pair, &path).unwrap();
        let back = read_scene(&path, pair.scene_id).unwrap();
        let bits = |p: &rmsflow_core::data::ScenePair| -> Vec<u32> {
            p.pc_t
                .points()
                .iter()
                .chain(p.pc_t1.points())
                .chain(p.gt_flow.vectors())
                .flatten()
                .map(|x| x.to_bits())
                .collect()
        };
        scene_ok &= bits(&back) == bits(pair) && back.pc_t.len() == pair.pc_t.len();
    }
    Verdict::new(
        identical && ckpt_ok && scene_ok,
        format!(
            "two gen+train+eval runs byte-identical over {nfiles} files: {identical}; \
             checkpoint round trip bit-exact: {ckpt_ok}; {} scene round trips bit-exact: {scene_ok}",
            scenes.len()
        ),
    )
}
