//! Hierarchical feature extraction.
//!
//! Top-down: the full-resolution cloud is lifted to `input_channels`, then for
//! each level a random subset is drawn (downsampling with max pooling over the
//! `K_p` finer neighbors) and refined by local feature aggregation (LFA: two
//! attentive pooling stages over a relative position encoding). Bottom-up:
//! coarse features are copied to the nearest finer point (`K_q = 1`),
//! projected per point and summed with a projected lateral connection. The
//! full-resolution level is not reached by the bottom-up path.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::geom::{knn, random_indices, random_sample, NeighborTable, PointCloud, SampleIndex};
use crate::net::{centered_coords, rel_pos_encoding, Ctx, LayoutBuilder, POS_ENC};
use crate::numcore::Var;
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidConfig {
    /// Point counts `l_1 > l_2 > ... >= 1` of the sampled levels.
    pub level_sizes: Vec<usize>,
    /// Feature width `C_k` of every sampled level.
    pub channels: Vec<usize>,
    /// Width of the lifted full-resolution features.
    pub input_channels: usize,
    pub k_p: usize,
    pub k_q: usize,
}

/// Level sizes for dense inputs, usable with weights trained at the default sizes.
pub const DENSE_LEVEL_SIZES: [usize; 3] = [8192, 2048, 512];

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            level_sizes: alloc::vec![2048, 728, 320],
            channels: alloc::vec![128, 256, 512],
            input_channels: 32,
            k_p: 17,
            k_q: 1,
        }
    }
}

impl PyramidConfig {
    pub fn levels(&self) -> usize {
        self.level_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.level_sizes.is_empty() || self.level_sizes.len() != self.channels.len() {
            return Err(Error::Invalid(format!(
                "{} level sizes but {} channel widths",
                self.level_sizes.len(),
                self.channels.len()
            )));
        }
        if self.level_sizes.windows(2).any(|w| w[0] <= w[1]) || self.level_sizes.contains(&0) {
            return Err(Error::Invalid(format!(
                "level sizes {:?} must be strictly decreasing and positive",
                self.level_sizes
            )));
        }
        if self.channels.contains(&0) || self.input_channels == 0 || self.k_p == 0 || self.k_q == 0 {
            return Err(Error::Invalid("channel widths and neighbor counts must be positive".into()));
        }
        Ok(())
    }

    /// Same weights, level sizes replaced (dense-input mode).
    pub fn with_level_sizes(&self, sizes: &[usize]) -> Self {
        Self {
            level_sizes: sizes.to_vec(),
            ..self.clone()
        }
    }
}

/// One resolution of a pyramid.
#[derive(Clone, Debug)]
pub struct PyramidLevel {
    pub cloud: PointCloud,
    /// `[l_k, C_k]` output features.
    pub features: Var,
    /// Rows of the parent level this level was sampled from (absent at level 0).
    pub parent_sample: Option<SampleIndex>,
    /// `K_p` nearest neighbors within this level (sampled levels only).
    pub neighbors: Option<NeighborTable>,
    /// `[l_k, K_p, 10]` relative position encoding for `neighbors`.
    pub encoding: Option<Var>,
    /// Nearest coarser-level point for every point of this level.
    pub up_table: Option<NeighborTable>,
}

#[derive(Clone, Debug)]
pub struct Pyramid {
    /// Levels `0..=L`, finest first.
    pub levels: Vec<PyramidLevel>,
}

impl Pyramid {
    /// Level-`k` rows expressed as rows of the full-resolution input.
    pub fn composed_sample(&self, k: usize) -> Option<SampleIndex> {
        let mut acc: Option<SampleIndex> = None;
        for level in &self.levels[1..=k] {
            let s = level.parent_sample.as_ref()?;
            acc = Some(match acc {
                None => s.clone(),
                Some(outer) => s.compose(&outer).ok()?,
            });
        }
        acc
    }
}

pub(crate) fn layout(cfg: &PyramidConfig, b: &mut LayoutBuilder) {
    b.dense("pyramid.lift", 3, cfg.input_channels, true);
    let mut prev = cfg.input_channels;
    for (i, &c) in cfg.channels.iter().enumerate() {
        let k = i + 1;
        b.dense(&format!("pyramid.ds{k}"), prev, c, true);
        lfa_layout(&format!("pyramid.lfa{k}"), c, b);
        prev = c;
    }
    for k in 1..cfg.levels() {
        let (c, coarse) = (cfg.channels[k - 1], cfg.channels[k]);
        b.dense(&format!("pyramid.up{k}.tconv"), coarse, c, true);
        b.dense(&format!("pyramid.up{k}.lat"), c, c, true);
    }
}

fn half(c: usize) -> usize {
    (c / 2).max(1)
}

fn lfa_layout(name: &str, c: usize, b: &mut LayoutBuilder) {
    let h = half(c);
    b.dense(&format!("{name}.pos0"), POS_ENC, h, true);
    b.attention(&format!("{name}.att0"), c + h, h);
    b.dense(&format!("{name}.pos1"), POS_ENC, h, true);
    b.attention(&format!("{name}.att1"), h + h, c);
}

/// Attentive pooling of `[P, K, C]` neighbor features to `[P, C']`.
///
/// Per-neighbor scores from a linear map, softmax over the `K` neighbors
/// (per channel), score-weighted sum, then a shared linear layer with
/// activation.
pub fn attentive_pool<T: Scalar>(ctx: &mut Ctx<'_, T>, grouped: Var, name: &str) -> Result<Var> {
    let scores = ctx.dense(grouped, &format!("{name}.score"), false)?;
    let weights = ctx.tape.softmax_neighbors(scores)?;
    let weighted = ctx.tape.mul(weights, grouped)?;
    let pooled = ctx.tape.sum_reduce(weighted)?;
    ctx.dense(pooled, &format!("{name}.out"), true)
}

/// One attentive aggregation of per-point `features` over a neighbor table:
/// neighbor features are concatenated with an encoded relative position.
pub(crate) fn attend_neighbors<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    features: Var,
    table: &NeighborTable,
    encoding: Var,
    pos_name: &str,
    att_name: &str,
) -> Result<Var> {
    let p = table.queries();
    let pos = ctx.dense(encoding, pos_name, true)?;
    let nb = ctx.tape.gather_rows(features, table.indices(), p, table.k())?;
    let grouped = ctx.tape.concat_lastdim(pos, nb)?;
    attentive_pool(ctx, grouped, att_name)
}

/// LFA with a precomputed neighbor table and encoding.
pub(crate) fn lfa_with<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    features: Var,
    table: &NeighborTable,
    encoding: Var,
    name: &str,
) -> Result<Var> {
    let a = attend_neighbors(
        ctx,
        features,
        table,
        encoding,
        &format!("{name}.pos0"),
        &format!("{name}.att0"),
    )?;
    attend_neighbors(
        ctx,
        a,
        table,
        encoding,
        &format!("{name}.pos1"),
        &format!("{name}.att1"),
    )
}

/// Self neighbor table (K clamped to the level size) and its encoding.
pub(crate) fn self_neighbors<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    cloud: &PointCloud,
    k_p: usize,
    origin: [f32; 3],
) -> Result<(NeighborTable, Var)> {
    let table = knn(cloud, cloud, k_p.min(cloud.len()))?;
    let enc = rel_pos_encoding(cloud, cloud, &table, origin);
    let enc = ctx.tape.constant(enc);
    Ok((table, enc))
}

/// Local feature aggregation over the `K_p` nearest neighbors within `cloud`.
pub fn lfa<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    cloud: &PointCloud,
    features: Var,
    k_p: usize,
    origin: [f32; 3],
    name: &str,
) -> Result<Var> {
    let (table, enc) = self_neighbors(ctx, cloud, k_p, origin)?;
    lfa_with(ctx, features, &table, enc, name)
}

/// Random downsampling to `m` points with max pooling over the `K_p`
/// nearest finer-level neighbors of every kept point.
pub fn downsample<T: Scalar, R: Rng + ?Sized>(
    ctx: &mut Ctx<'_, T>,
    fine: &PointCloud,
    fine_features: Var,
    m: usize,
    k_p: usize,
    rng: &mut R,
    name: &str,
) -> Result<(PointCloud, SampleIndex, Var)> {
    if m > fine.len() {
        return Err(Error::TooMany {
            op: "downsample",
            requested: m,
            available: fine.len(),
        });
    }
    let sample = random_sample(fine, m, rng)?;
    let (coarse, pooled) = downsample_with(ctx, fine, fine_features, &sample, k_p, name)?;
    Ok((coarse, sample, pooled))
}

/// Downsampling to a given row subset of `fine`.
pub fn downsample_with<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    fine: &PointCloud,
    fine_features: Var,
    sample: &SampleIndex,
    k_p: usize,
    name: &str,
) -> Result<(PointCloud, Var)> {
    if sample.source_len() != fine.len() {
        return Err(Error::Shape {
            op: "downsample",
            detail: format!("sample over {} rows for a cloud of {}", sample.source_len(), fine.len()),
        });
    }
    let coarse = fine.select(sample);
    let table = knn(&coarse, fine, k_p.min(fine.len()))?;
    let grouped = ctx.tape.gather_rows(fine_features, table.indices(), coarse.len(), table.k())?;
    let projected = ctx.dense(grouped, name, true)?;
    let pooled = ctx.tape.max_reduce(projected)?;
    Ok((coarse, pooled))
}

/// Nearest-coarse-point copy (`K_q` neighbors averaged, exact copy for `K_q = 1`).
pub(crate) fn copy_from_coarse<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    coarse_features: Var,
    table: &NeighborTable,
) -> Result<Var> {
    let g = ctx
        .tape
        .gather_rows(coarse_features, table.indices(), table.queries(), table.k())?;
    let s = ctx.tape.sum_reduce(g)?;
    Ok(if table.k() == 1 {
        s
    } else {
        ctx.tape.scale(s, 1.0 / table.k() as f64)
    })
}

/// Bottom-up step: copy each fine point's nearest coarse feature, project it
/// (the per-point "transposed convolution") and add the projected lateral features.
pub fn upsample_tconv<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    coarse: &PointCloud,
    coarse_features: Var,
    fine: &PointCloud,
    lateral: Var,
    k_q: usize,
    name: &str,
) -> Result<(Var, NeighborTable)> {
    if ctx.tape.shape(lateral).first() != Some(&fine.len()) {
        return Err(Error::Shape {
            op: "upsample_tconv",
            detail: format!(
                "lateral {:?} vs fine cloud of {}",
                ctx.tape.shape(lateral),
                fine.len()
            ),
        });
    }
    let table = knn(fine, coarse, k_q.min(coarse.len()))?;
    let copied = copy_from_coarse(ctx, coarse_features, &table)?;
    let up = ctx.dense(copied, &format!("{name}.tconv"), false)?;
    let lat = ctx.dense(lateral, &format!("{name}.lat"), false)?;
    let sum = ctx.tape.add(up, lat)?;
    let out = ctx.tape.leaky_relu(sum, ctx.slope)?;
    Ok((out, table))
}

/// Builds the pyramid of one cloud. `origin` is the reference point all
/// absolute coordinates are expressed against (shared by both clouds).
pub fn build_pyramid<T: Scalar, R: Rng + ?Sized>(
    ctx: &mut Ctx<'_, T>,
    cfg: &PyramidConfig,
    cloud: &PointCloud,
    origin: [f32; 3],
    rng: &mut R,
) -> Result<Pyramid> {
    let samples = draw_samples(cfg, cloud.len(), rng)?;
    build_pyramid_sampled(ctx, cfg, cloud, origin, &samples)
}

/// The random level subsets `build_pyramid` uses: level `k + 1` rows out of level `k`.
pub fn draw_samples<R: Rng + ?Sized>(cfg: &PyramidConfig, n: usize, rng: &mut R) -> Result<Vec<SampleIndex>> {
    cfg.validate()?;
    if n < cfg.level_sizes[0] {
        return Err(Error::TooMany {
            op: "build_pyramid",
            requested: cfg.level_sizes[0],
            available: n,
        });
    }
    let mut parent = n;
    let mut out = Vec::with_capacity(cfg.levels());
    for &m in &cfg.level_sizes {
        out.push(random_indices(parent, m, rng)?);
        parent = m;
    }
    Ok(out)
}

/// Pyramid over given level subsets (`samples[k]` selects level `k + 1` out of level `k`).
pub fn build_pyramid_sampled<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    cfg: &PyramidConfig,
    cloud: &PointCloud,
    origin: [f32; 3],
    samples: &[SampleIndex],
) -> Result<Pyramid> {
    cfg.validate()?;
    if samples.len() != cfg.levels() || samples.iter().zip(&cfg.level_sizes).any(|(s, &m)| s.len() != m) {
        return Err(Error::Invalid("one sample of the configured size per level".into()));
    }
    let xyz = ctx.tape.constant(centered_coords(cloud, origin));
    let lifted = ctx.dense(xyz, "pyramid.lift", true)?;
    let mut levels = Vec::with_capacity(cfg.levels() + 1);
    levels.push(PyramidLevel {
        cloud: cloud.clone(),
        features: lifted,
        parent_sample: None,
        neighbors: None,
        encoding: None,
        up_table: None,
    });
    for (i, sample) in samples.iter().enumerate() {
        let k = i + 1;
        let parent = &levels[i];
        let (coarse, pooled) = downsample_with(
            ctx,
            &parent.cloud,
            parent.features,
            sample,
            cfg.k_p,
            &format!("pyramid.ds{k}"),
        )?;
        let (table, enc) = self_neighbors(ctx, &coarse, cfg.k_p, origin)?;
        let feats = lfa_with(ctx, pooled, &table, enc, &format!("pyramid.lfa{k}"))?;
        levels.push(PyramidLevel {
            cloud: coarse,
            features: feats,
            parent_sample: Some(sample.clone()),
            neighbors: Some(table),
            encoding: Some(enc),
            up_table: None,
        });
    }
    for k in (1..cfg.levels()).rev() {
        let (lo, hi) = levels.split_at_mut(k + 1);
        let (fine, coarse) = (&mut lo[k], &hi[0]);
        let (out, table) = upsample_tconv(
            ctx,
            &coarse.cloud,
            coarse.features,
            &fine.cloud,
            fine.features,
            cfg.k_q,
            &format!("pyramid.up{k}"),
        )?;
        fine.features = out;
        fine.up_table = Some(table);
    }
    let coarse0 = &levels[1].cloud;
    levels[0].up_table = Some(knn(cloud, coarse0, cfg.k_q.min(coarse0.len()))?);
    Ok(Pyramid { levels })
}

/// Pyramids of both clouds with shared weights and independent sampling draws.
/// Coordinates are encoded relative to the centroid of `pc_t`.
pub fn build_pyramids<T: Scalar, R: Rng + ?Sized>(
    ctx: &mut Ctx<'_, T>,
    cfg: &PyramidConfig,
    pc_t: &PointCloud,
    pc_t1: &PointCloud,
    rng: &mut R,
) -> Result<(Pyramid, Pyramid)> {
    let origin = pc_t.centroid();
    let a = build_pyramid(ctx, cfg, pc_t, origin, rng)?;
    let b = build_pyramid(ctx, cfg, pc_t1, origin, rng)?;
    Ok((a, b))
}
