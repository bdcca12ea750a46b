use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rmsflow_core::data::{
    apply_rigid, augment, axis_angle, euler_xyz, gen_synthetic, gen_synthetic_labeled, subsample_pair,
    AugmentConfig, Mat3, ScenePair, ShapeKind, SynthConfig,
};
use rmsflow_core::geom::{knn, PointCloud};
use rmsflow_core::predictor::{warp, SceneFlow};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn dist(a: [f32; 3], b: [f32; 3]) -> f64 {
    (0..3).map(|i| (a[i] as f64 - b[i] as f64).powi(2)).sum::<f64>().sqrt()
}

/// Distance from every point of `a` to its nearest point of `b`.
fn nearest(a: &PointCloud, b: &PointCloud) -> Vec<f64> {
    let t = knn(a, b, 1).unwrap();
    (0..a.len()).map(|i| (t.row_dists(i)[0] as f64).sqrt()).collect()
}

/// Pairwise distances inside each object agree between the first frame and
/// its flow-warped copy.
fn assert_isometric(pair: &ScenePair, object_of: &[u32], tol: f64) {
    let warped = warp(&pair.pc_t, &pair.gt_flow).unwrap();
    let n = pair.pc_t.len();
    for i in (0..n).step_by(7) {
        for j in (i + 1..n).step_by(5) {
            if object_of[i] != object_of[j] {
                continue;
            }
            let before = dist(pair.pc_t.get(i), pair.pc_t.get(j));
            let after = dist(warped.get(i), warped.get(j));
            assert!((before - after).abs() < tol, "{i},{j}: {before} vs {after}");
        }
    }
}

fn config(kind: ShapeKind) -> SynthConfig {
    SynthConfig {
        objects: 3,
        points_per_object: 200,
        shapes: vec![kind],
        ..Default::default()
    }
}

#[test]
fn noiseless_warp_hits_the_second_frame() {
    for kind in ShapeKind::ALL {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            drop_fraction: 0.0,
            ..config(kind)
        };
        let pair = gen_synthetic(&cfg, 1, &mut rng(1)).unwrap();
        let warped = warp(&pair.pc_t, &pair.gt_flow).unwrap();
        for d in nearest(&warped, &pair.pc_t1) {
            assert!(d < 1e-5, "{kind:?}: {d}");
        }
        // No dropping: the second frame is a permutation of the warped first frame.
        for d in nearest(&pair.pc_t1, &warped) {
            assert!(d < 1e-5, "{kind:?}: {d}");
        }
    }
}

#[test]
fn noisy_correspondences_stay_within_noise() {
    let cfg = config(ShapeKind::Box);
    let pair = gen_synthetic(&cfg, 2, &mut rng(2)).unwrap();
    let warped = warp(&pair.pc_t, &pair.gt_flow).unwrap();
    // Every kept second-frame point has its noise-free source among the warped points.
    let d = nearest(&pair.pc_t1, &warped);
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    assert!(d.iter().all(|&x| x < 8.0 * cfg.noise_sigma));
    assert!(mean < 2.0 * cfg.noise_sigma, "{mean}");
    assert_eq!(pair.pc_t1.len(), cfg.kept_points());
}

#[test]
fn objects_move_rigidly_within_bounds() {
    for kind in ShapeKind::ALL {
        let cfg = config(kind);
        for seed in 0..5 {
            let s = gen_synthetic_labeled(&cfg, seed, &mut rng(seed)).unwrap();
            assert_isometric(&s.pair, &s.object_of, 1e-4);
            let reach = cfg.max_translation + cfg.max_rotation * cfg.radius_range.1 * cfg.extent * 3.0;
            for f in s.pair.gt_flow.vectors() {
                assert!(dist(*f, [0.0; 3]) <= reach);
            }
        }
    }
}

#[test]
fn static_scenes_have_zero_flow() {
    let cfg = SynthConfig {
        static_fraction: 1.0,
        noise_sigma: 0.0,
        ..config(ShapeKind::Blob)
    };
    let pair = gen_synthetic(&cfg, 3, &mut rng(3)).unwrap();
    assert!(pair.gt_flow.vectors().iter().all(|f| *f == [0.0; 3]));
    for d in nearest(&pair.pc_t1, &pair.pc_t) {
        assert_eq!(d, 0.0);
    }
}

#[test]
fn subsampling_keeps_flow_rows_aligned() {
    let cfg = SynthConfig {
        noise_sigma: 0.0,
        ..config(ShapeKind::Sphere)
    };
    let full = gen_synthetic(&cfg, 4, &mut rng(4)).unwrap();
    let sub = subsample_pair(&full, 300, &mut rng(5)).unwrap();
    assert_eq!((sub.pc_t.len(), sub.pc_t1.len(), sub.gt_flow.len()), (300, 300, 300));
    // Each subsampled first-frame row still lands on the full second frame
    // (or on a dropped point, which the warped full first frame contains).
    let all_targets = warp(&full.pc_t, &full.gt_flow).unwrap();
    let warped = warp(&sub.pc_t, &sub.gt_flow).unwrap();
    for d in nearest(&warped, &all_targets) {
        assert!(d < 1e-6);
    }
    let rows_src = knn(&sub.pc_t, &full.pc_t, 1).unwrap();
    for i in 0..sub.pc_t.len() {
        assert_eq!(sub.gt_flow.vectors()[i], full.gt_flow.vectors()[rows_src.row(i)[0]]);
    }
    assert!(subsample_pair(&full, full.pc_t1.len() + 1, &mut rng(0)).is_err());
}

#[test]
fn misaligned_pairs_are_rejected() {
    let pc = PointCloud::new(vec![[0.0; 3]; 4]).unwrap();
    assert!(ScenePair::new(pc.clone(), pc.clone(), SceneFlow::zeros(3), 0).is_err());
    assert!(ScenePair::new(pc.clone(), pc, SceneFlow::zeros(4), 0).is_ok());
}

#[test]
fn generation_is_deterministic() {
    let cfg = config(ShapeKind::Plane);
    let a = gen_synthetic(&cfg, 7, &mut rng(7)).unwrap();
    let b = gen_synthetic(&cfg, 7, &mut rng(7)).unwrap();
    assert_eq!(a, b);
    assert!(SynthConfig { objects: 0, ..cfg.clone() }.validate().is_err());
    assert!(SynthConfig { drop_fraction: 1.0, ..cfg }.validate().is_err());
}

fn mat_vec(r: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2])
}

fn is_rotation(r: &Mat3) -> bool {
    let mut ok = true;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
            ok &= (dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12;
        }
    }
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    ok && (det - 1.0).abs() < 1e-12
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotations_are_proper(a in -3.2f64..3.2, b in -3.2f64..3.2, c in -3.2f64..3.2, axis in [-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0]) {
        prop_assert!(is_rotation(&euler_xyz(a, b, c)));
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        prop_assume!(n > 1e-3);
        let axis = axis.map(|v| v / n);
        let r = axis_angle(axis, a);
        prop_assert!(is_rotation(&r));
        let fixed = mat_vec(&r, axis);
        for i in 0..3 {
            prop_assert!((fixed[i] - axis[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn augmentation_rotates_the_flow(seed in any::<u64>()) {
        let cfg = SynthConfig { objects: 2, points_per_object: 60, ..Default::default() };
        let s = gen_synthetic_labeled(&cfg, seed, &mut rng(seed)).unwrap();
        let (a, b, c) = (0.05, -0.08, 0.02);
        let r = euler_xyz(a, b, c);
        let out = apply_rigid(&s.pair, &r, [0.3, -0.2, 0.1]).unwrap();
        for (f, g) in s.pair.gt_flow.vectors().iter().zip(out.gt_flow.vectors()) {
            let want = mat_vec(&r, f.map(|v| v as f64));
            for i in 0..3 {
                prop_assert!((want[i] - g[i] as f64).abs() < 1e-6);
            }
        }
        let aug = augment(&s.pair, &mut rng(seed ^ 1), &AugmentConfig::default()).unwrap();
        assert_isometric(&aug, &s.object_of, 1e-4);
        // Warped first frame still meets the second frame up to noise.
        let d = nearest(&aug.pc_t1, &warp(&aug.pc_t, &aug.gt_flow).unwrap());
        prop_assert!(d.iter().all(|&x| x < 8.0 * cfg.noise_sigma + 1e-5));
    }
}
