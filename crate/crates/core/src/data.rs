//! Synthetic scene pairs with exact ground-truth flow, subsampling and
//! rigid augmentation.
//!
//! A scene is a set of rigid objects (planes, boxes, spheres, Gaussian
//! blobs) scattered in a cubic workspace. The second frame moves every
//! object by its own small rotation about its center plus a translation,
//! adds sensor noise and drops a fraction of the points, so that no point of
//! the first frame has an exact counterpart in the second.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use crate::geom::{random_sample, PointCloud};
use crate::predictor::SceneFlow;
use crate::{Error, Result};
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Two frames and the flow of every first-frame point.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePair {
    pub pc_t: PointCloud,
    pub pc_t1: PointCloud,
    pub gt_flow: SceneFlow,
    pub scene_id: u64,
}

impl ScenePair {
    pub fn new(pc_t: PointCloud, pc_t1: PointCloud, gt_flow: SceneFlow, scene_id: u64) -> Result<Self> {
        if gt_flow.len() != pc_t.len() {
            return Err(Error::Shape {
                op: "scene pair",
                detail: format!("{} flow rows for {} points", gt_flow.len(), pc_t.len()),
            });
        }
        Ok(Self {
            pc_t,
            pc_t1,
            gt_flow,
            scene_id,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Plane,
    Box,
    Sphere,
    Blob,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Plane, ShapeKind::Box, ShapeKind::Sphere, ShapeKind::Blob];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Plane => "plane",
            ShapeKind::Box => "box",
            ShapeKind::Sphere => "sphere",
            ShapeKind::Blob => "blob",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub objects: usize,
    pub points_per_object: usize,
    pub shapes: Vec<ShapeKind>,
    /// Largest per-object rotation angle, radians.
    pub max_rotation: f64,
    /// Largest per-object translation length, meters.
    pub max_translation: f64,
    /// Standard deviation of Gaussian noise on the second frame, meters.
    pub noise_sigma: f64,
    /// Fraction of second-frame points removed.
    pub drop_fraction: f64,
    /// Edge of the cubic workspace centered at the origin, meters.
    pub extent: f64,
    /// Object radius range as fractions of the extent.
    pub radius_range: (f64, f64),
    /// Probability that a scene has no motion at all.
    pub static_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            objects: 4,
            points_per_object: 256,
            shapes: ShapeKind::ALL.to_vec(),
            max_rotation: 0.1,
            max_translation: 0.5,
            noise_sigma: 0.005,
            drop_fraction: 0.1,
            extent: 10.0,
            radius_range: (0.08, 0.15),
            static_fraction: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("synthetic config: {m}")));
        if self.objects == 0 || self.points_per_object == 0 {
            return bad("needs at least one object with at least one point");
        }
        if self.shapes.is_empty() {
            return bad("empty shape set");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise sigma must be non-negative");
        }
        if !(0.0..1.0).contains(&self.drop_fraction) {
            return bad("drop fraction must lie in [0, 1)");
        }
        if !(self.max_rotation >= 0.0 && self.max_translation >= 0.0 && self.extent > 0.0) {
            return bad("motion ranges and extent must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.static_fraction) {
            return bad("static fraction must lie in [0, 1]");
        }
        let (lo, hi) = self.radius_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad("radius range must satisfy 0 < lo <= hi");
        }
        Ok(())
    }

    pub fn total_points(&self) -> usize {
        self.objects * self.points_per_object
    }

    /// Second-frame size after dropping points.
    pub fn kept_points(&self) -> usize {
        let n = self.total_points();
        n - drop_count(n, self.drop_fraction)
    }
}

fn drop_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).floor() as usize).min(n - 1)
}

/// Row-major 3×3 rotation.
pub type Mat3 = [[f64; 3]; 3];

fn mat_vec(r: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Rotation by `angle` about the unit `axis` (Rodrigues).
pub fn axis_angle(axis: [f64; 3], angle: f64) -> Mat3 {
    let (s, c) = (angle.sin(), angle.cos());
    let t = 1.0 - c;
    let [x, y, z] = axis;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// `Rz(c) · Ry(b) · Rx(a)`.
pub fn euler_xyz(a: f64, b: f64, c: f64) -> Mat3 {
    let rx = axis_angle([1.0, 0.0, 0.0], a);
    let ry = axis_angle([0.0, 1.0, 0.0], b);
    let rz = axis_angle([0.0, 0.0, 1.0], c);
    mat_mul(&rz, &mat_mul(&ry, &rx))
}

fn unit<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    UnitSphere.sample(rng)
}

fn sample_surface<R: Rng + ?Sized>(kind: ShapeKind, radius: f64, n: usize, rng: &mut R) -> Vec<[f64; 3]> {
    match kind {
        ShapeKind::Sphere => (0..n)
            .map(|_| {
                let u = unit(rng);
                [u[0] * radius, u[1] * radius, u[2] * radius]
            })
            .collect(),
        ShapeKind::Blob => {
            let g = Normal::new(0.0, radius / 2.0).expect("positive sigma");
            (0..n).map(|_| [g.sample(rng), g.sample(rng), g.sample(rng)]).collect()
        }
        ShapeKind::Plane => {
            let orient = axis_angle(unit(rng), rng.random_range(0.0..core::f64::consts::PI));
            (0..n)
                .map(|_| {
                    let u = rng.random_range(-radius..=radius);
                    let v = rng.random_range(-radius..=radius);
                    mat_vec(&orient, [u, v, 0.0])
                })
                .collect()
        }
        ShapeKind::Box => {
            let h = [
                rng.random_range(0.5 * radius..=radius),
                rng.random_range(0.5 * radius..=radius),
                rng.random_range(0.5 * radius..=radius),
            ];
            let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
            let total: f64 = areas.iter().sum();
            (0..n)
                .map(|_| {
                    let mut pick = rng.random_range(0.0..total);
                    let mut axis = 0;
                    while axis < 2 && pick >= areas[axis] {
                        pick -= areas[axis];
                        axis += 1;
                    }
                    let mut p = [0.0; 3];
                    for a in 0..3 {
                        p[a] = rng.random_range(-h[a]..=h[a]);
                    }
                    p[axis] = if rng.random_bool(0.5) { h[axis] } else { -h[axis] };
                    p
                })
                .collect()
        }
    }
}

fn to_cloud(points: Vec<[f64; 3]>) -> Result<PointCloud> {
    PointCloud::new(
        points
            .into_iter()
            .map(|p| [p[0] as f32, p[1] as f32, p[2] as f32])
            .collect(),
    )
}

/// A generated scene plus the object id of every first-frame point.
#[derive(Clone, Debug)]
pub struct LabeledScene {
    pub pair: ScenePair,
    pub object_of: Vec<u32>,
}

pub fn gen_synthetic_labeled<R: Rng + ?Sized>(cfg: &SynthConfig, scene_id: u64, rng: &mut R) -> Result<LabeledScene> {
    cfg.validate()?;
    let half = cfg.extent / 2.0;
    let moving = !rng.random_bool(cfg.static_fraction);
    let n = cfg.total_points();
    let mut p0 = Vec::with_capacity(n);
    let mut p1 = Vec::with_capacity(n);
    let mut flow = Vec::with_capacity(n);
    let mut object_of = Vec::with_capacity(n);
    for obj in 0..cfg.objects {
        let kind = cfg.shapes[rng.random_range(0..cfg.shapes.len())];
        let radius = rng.random_range(cfg.radius_range.0..=cfg.radius_range.1) * cfg.extent;
        let center = [
            rng.random_range(-half..=half),
            rng.random_range(-half..=half),
            rng.random_range(-half..=half),
        ];
        let (rot, shift) = if moving {
            let angle = rng.random_range(0.0..=cfg.max_rotation);
            let dir = unit(rng);
            let len = rng.random_range(0.0..=cfg.max_translation);
            (axis_angle(unit(rng), angle), [dir[0] * len, dir[1] * len, dir[2] * len])
        } else {
            (axis_angle([1.0, 0.0, 0.0], 0.0), [0.0; 3])
        };
        for local in sample_surface(kind, radius, cfg.points_per_object, rng) {
            let p = [local[0] + center[0], local[1] + center[1], local[2] + center[2]];
            // Round the first frame once so the flow is exact for the stored points.
            let p = [p[0] as f32 as f64, p[1] as f32 as f64, p[2] as f32 as f64];
            let rel = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
            let r = mat_vec(&rot, rel);
            let q = [
                r[0] + center[0] + shift[0],
                r[1] + center[1] + shift[1],
                r[2] + center[2] + shift[2],
            ];
            p0.push(p);
            flow.push([(q[0] - p[0]) as f32, (q[1] - p[1]) as f32, (q[2] - p[2]) as f32]);
            p1.push(q);
            object_of.push(obj as u32);
        }
    }
    if cfg.noise_sigma > 0.0 {
        let g = Normal::new(0.0, cfg.noise_sigma).expect("positive sigma");
        for q in &mut p1 {
            for v in q.iter_mut() {
                *v += g.sample(rng);
            }
        }
    }
    let pc_t = to_cloud(p0)?;
    let moved = to_cloud(p1)?;
    let kept = n - drop_count(n, cfg.drop_fraction);
    // A random subset in random order: drops points and shuffles the frame.
    let keep = random_sample(&moved, kept, rng)?;
    let pc_t1 = moved.select(&keep);
    Ok(LabeledScene {
        pair: ScenePair::new(pc_t, pc_t1, SceneFlow::new(flow)?, scene_id)?,
        object_of,
    })
}

/// A synthetic scene pair.
pub fn gen_synthetic<R: Rng + ?Sized>(cfg: &SynthConfig, scene_id: u64, rng: &mut R) -> Result<ScenePair> {
    Ok(gen_synthetic_labeled(cfg, scene_id, rng)?.pair)
}

/// `n` random rows of each frame, drawn independently and in random order;
/// the flow follows the first frame's rows.
pub fn subsample_pair<R: Rng + ?Sized>(pair: &ScenePair, n: usize, rng: &mut R) -> Result<ScenePair> {
    let avail = pair.pc_t.len().min(pair.pc_t1.len());
    if n > avail {
        return Err(Error::TooMany {
            op: "subsample_pair",
            requested: n,
            available: avail,
        });
    }
    let a = random_sample(&pair.pc_t, n, rng)?;
    let b = random_sample(&pair.pc_t1, n, rng)?;
    ScenePair::new(
        pair.pc_t.select(&a),
        pair.pc_t1.select(&b),
        pair.gt_flow.select(&a),
        pair.scene_id,
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Per-axis rotation angles are drawn from `±max_angle` radians.
    pub max_angle: f64,
    /// Per-axis offsets are drawn from `±max_translation` meters.
    pub max_translation: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_angle: 0.1,
            max_translation: 0.5,
        }
    }
}

/// Applies `x ↦ R·x + t` to both frames; the flow becomes `R·f`.
pub fn apply_rigid(pair: &ScenePair, rot: &Mat3, t: [f64; 3]) -> Result<ScenePair> {
    let tf = |pc: &PointCloud| -> Result<PointCloud> {
        to_cloud(
            pc.points()
                .iter()
                .map(|p| {
                    let r = mat_vec(rot, [p[0] as f64, p[1] as f64, p[2] as f64]);
                    [r[0] + t[0], r[1] + t[1], r[2] + t[2]]
                })
                .collect(),
        )
    };
    let flow = pair
        .gt_flow
        .vectors()
        .iter()
        .map(|f| {
            let r = mat_vec(rot, [f[0] as f64, f[1] as f64, f[2] as f64]);
            [r[0] as f32, r[1] as f32, r[2] as f32]
        })
        .collect();
    ScenePair::new(tf(&pair.pc_t)?, tf(&pair.pc_t1)?, SceneFlow::new(flow)?, pair.scene_id)
}

/// Random small rotation about X, Y and Z plus a random offset, shared by both frames.
pub fn augment<R: Rng + ?Sized>(pair: &ScenePair, rng: &mut R, cfg: &AugmentConfig) -> Result<ScenePair> {
    let mut draw = |m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    let angles = [draw(cfg.max_angle), draw(cfg.max_angle), draw(cfg.max_angle)];
    let t = [
        draw(cfg.max_translation),
        draw(cfg.max_translation),
        draw(cfg.max_translation),
    ];
    apply_rigid(pair, &euler_xyz(angles[0], angles[1], angles[2]), t)
}
