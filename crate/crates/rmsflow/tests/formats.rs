use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rmsflow::format::*;
use rmsflow_core::data::{gen_synthetic, ScenePair, SynthConfig};
use rmsflow_core::geom::PointCloud;
use rmsflow_core::net::{init_params, NetConfig};
use rmsflow_core::numcore::{ParamStore, Tensor};
use rmsflow_core::predictor::SceneFlow;
use rmsflow_core::pyramid::PyramidConfig;

fn small_net() -> NetConfig {
    let mut cfg = NetConfig::default();
    cfg.pyramid = PyramidConfig {
        level_sizes: vec![16, 6],
        channels: vec![4, 6],
        input_channels: 4,
        k_p: 5,
        ..PyramidConfig::default()
    };
    cfg.embed.k_o = 6;
    cfg
}

fn bits(store: &ParamStore<f32>) -> Vec<(String, Vec<usize>, Vec<u32>, Vec<u32>, Vec<u32>)> {
    store
        .iter()
        .map(|(k, p)| {
            let b = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            (k.clone(), p.value.shape().to_vec(), b(p.value.data()), b(&p.m), b(&p.v))
        })
        .collect()
}

fn scene_bits(p: &ScenePair) -> Vec<u32> {
    p.pc_t
        .points()
        .iter()
        .chain(p.pc_t1.points())
        .chain(p.gt_flow.vectors())
        .flatten()
        .map(|x| x.to_bits())
        .collect()
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let store = init_params::<f32, _>(&small_net(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let path = dir.path().join("w.rmsw");
    save_checkpoint(&store, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let strip = |v: Vec<(String, Vec<usize>, Vec<u32>, Vec<u32>, Vec<u32>)>| {
        v.into_iter().map(|(k, s, d, _, _)| (k, s, d)).collect::<Vec<_>>()
    };
    assert_eq!(strip(bits(&back)), strip(bits(&store)));
    // Saving the loaded store reproduces the file byte for byte.
    let again = dir.path().join("again.rmsw");
    save_checkpoint(&back, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn optimizer_state_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = init_params::<f32, _>(&small_net(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let names: Vec<String> = store.names().map(String::from).collect();
    for (i, name) in names.iter().enumerate() {
        let p = store.param_mut(name).unwrap();
        for (j, m) in p.m.iter_mut().enumerate() {
            *m = (i * 31 + j) as f32 * 1e-3;
        }
        for (j, v) in p.v.iter_mut().enumerate() {
            *v = (i + j * 7) as f32 * 1e-5;
        }
    }
    store.set_step(70_001);
    let w = dir.path().join("w.rmsw");
    let o = dir.path().join("w.opt");
    save_checkpoint(&store, &w).unwrap();
    save_optimizer_state(&store, &o).unwrap();
    let mut back = load_checkpoint(&w).unwrap();
    load_optimizer_state(&mut back, &o).unwrap();
    assert_eq!(bits(&back), bits(&store));
    assert_eq!(back.step(), 70_001);
}

#[test]
fn scene_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        points_per_object: 50,
        ..SynthConfig::default()
    };
    let pair = gen_synthetic(&cfg, 9, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let path = dir.path().join("s.sfpr");
    write_scene(&pair, &path).unwrap();
    let back = read_scene(&path, 9).unwrap();
    assert_eq!(scene_bits(&back), scene_bits(&pair));
    assert_eq!(back.pc_t1.len(), pair.pc_t1.len());
    assert_eq!(back.scene_id, 9);
}

proptest! {
    #[test]
    fn encoded_scenes_decode_to_the_same_bits(
        n in 1usize..40,
        m in 1usize..40,
        seed in any::<u64>(),
        specials in any::<bool>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coord = |i: usize| -> f32 {
            if specials && i.is_multiple_of(5) {
                [0.0, -0.0, f32::MIN_POSITIVE, 1e-40, -3.3e38][i % 25 / 5]
            } else {
                rng.random_range(-1e3f32..1e3)
            }
        };
        let mut k = 0;
        let mut pts = |len: usize| -> Vec<[f32; 3]> {
            (0..len).map(|_| { k += 3; [coord(k), coord(k + 1), coord(k + 2)] }).collect()
        };
        let pair = ScenePair::new(
            PointCloud::new(pts(n)).unwrap(),
            PointCloud::new(pts(m)).unwrap(),
            SceneFlow::new(pts(n)).unwrap(),
            3,
        ).unwrap();
        let bytes = encode_scene(&pair);
        let (back, has_gt) = decode_scene(&bytes, Path::new("mem"), 3).unwrap();
        prop_assert!(has_gt);
        prop_assert_eq!(scene_bits(&back), scene_bits(&pair));
        prop_assert_eq!(encode_scene(&back), bytes);
    }

    #[test]
    fn every_truncation_is_rejected(cut_frac in 0.0f64..1.0) {
        let pair = gen_synthetic(
            &SynthConfig { objects: 1, points_per_object: 8, ..SynthConfig::default() },
            0,
            &mut ChaCha8Rng::seed_from_u64(0),
        ).unwrap();
        let bytes = encode_scene(&pair);
        let cut = (bytes.len() as f64 * cut_frac) as usize;
        prop_assert!(decode_scene(&bytes[..cut], Path::new("mem"), 0).is_err());
    }
}

fn tiny_scene_bytes() -> Vec<u8> {
    let pair = ScenePair::new(
        PointCloud::new(vec![[1.0, 2.0, 3.0]]).unwrap(),
        PointCloud::new(vec![[1.5, 2.0, 3.0], [0.0; 3]]).unwrap(),
        SceneFlow::new(vec![[0.5, 0.0, 0.0]]).unwrap(),
        0,
    )
    .unwrap();
    encode_scene(&pair)
}

#[test]
fn scene_errors_are_distinct() {
    let p = Path::new("mem");
    let good = tiny_scene_bytes();

    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(matches!(decode_scene(&magic, p, 0), Err(FormatError::BadMagic { .. })));

    let mut version = good.clone();
    version[4] = 9;
    assert!(matches!(decode_scene(&version, p, 0), Err(FormatError::Version { found: 9, .. })));

    assert!(matches!(decode_scene(&good[..good.len() - 1], p, 0), Err(FormatError::Truncated { .. })));

    let mut trailing = good.clone();
    trailing.push(0);
    assert!(matches!(decode_scene(&trailing, p, 0), Err(FormatError::Invalid { .. })));

    let mut flags = good.clone();
    flags[16] = 0x80;
    assert!(matches!(decode_scene(&flags, p, 0), Err(FormatError::Invalid { .. })));

    let mut empty = good.clone();
    empty[8..12].copy_from_slice(&0u32.to_le_bytes());
    assert!(matches!(decode_scene(&empty, p, 0), Err(FormatError::Invalid { .. })));

    let mut nan = good.clone();
    nan[17..21].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(decode_scene(&nan, p, 0), Err(FormatError::Invalid { .. })));
}

#[test]
fn scene_without_ground_truth_reads_as_zero_flow() {
    let mut bytes = tiny_scene_bytes();
    bytes[16] = 0;
    bytes.truncate(bytes.len() - 12);
    let (pair, has_gt) = decode_scene(&bytes, Path::new("mem"), 0).unwrap();
    assert!(!has_gt);
    assert_eq!(pair.gt_flow.vectors(), &[[0.0; 3]]);
}

#[test]
fn checkpoint_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = ParamStore::new();
    store.insert("a.w", Tensor::new(vec![2, 3], vec![1.0f32; 6]).unwrap()).unwrap();
    let path = dir.path().join("w.rmsw");
    save_checkpoint(&store, &path).unwrap();
    let good = std::fs::read(&path).unwrap();

    assert!(matches!(load_checkpoint(&dir.path().join("missing.rmsw")), Err(FormatError::Io { .. })));
    assert!(matches!(decode_tensors(&tiny_scene_bytes(), &path), Err(FormatError::BadMagic { .. })));
    for cut in 0..good.len() {
        assert!(decode_tensors(&good[..cut], &path).is_err(), "cut at {cut}");
    }
    let mut version = good.clone();
    version[4] = 2;
    assert!(matches!(decode_tensors(&version, &path), Err(FormatError::Version { .. })));

    // Moments for a parameter the store does not have.
    let other = dir.path().join("o.opt");
    let mut stranger = ParamStore::new();
    stranger.insert("b.w", Tensor::new(vec![1], vec![0.0f32]).unwrap()).unwrap();
    save_optimizer_state(&stranger, &other).unwrap();
    assert!(matches!(load_optimizer_state(&mut store, &other), Err(FormatError::Invalid { .. })));
}
