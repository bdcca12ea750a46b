//! Patch-to-dilated-patch flow embedding.
//!
//! Three stages per level:
//! 1. patch-to-point: every query point groups its `K_o` nearest points of
//!    the second cloud, runs two MLPs over (own feature, neighbor feature,
//!    offset, distance) and max-pools;
//! 2. point-to-patch: attentive aggregation over the `K_p` nearest points of
//!    the reference cloud;
//! 3. point-to-dilated-patch: a second attentive aggregation with its own
//!    weights over the same neighborhoods, which reaches two hops.
//!
//! The reference features are concatenated to the stage-1 output before
//! stage 2, and a residual connection wraps the last attentive stage. Each
//! of these pieces can be switched off for ablations.

use alloc::format;
use alloc::vec::Vec;

use crate::geom::{knn, NeighborTable, PointCloud};
use crate::net::{repeat_rows, Ctx, LayoutBuilder, POS_ENC};
use crate::numcore::{Tensor, Var};
use crate::predictor::{warp, SceneFlow};
use crate::pyramid::{attend_neighbors, PyramidLevel};
use crate::{Error, Result, Scalar};
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Which optional parts of the embedding are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationFlags {
    pub stage2: bool,
    pub stage3: bool,
    pub concat: bool,
    pub residual: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::FULL
    }
}

impl AblationFlags {
    pub const FULL: Self = Self {
        stage2: true,
        stage3: true,
        concat: true,
        residual: true,
    };

    pub const STAGE1_ONLY: Self = Self {
        stage2: false,
        stage3: false,
        concat: false,
        residual: false,
    };

    /// The five cumulative design variants, from stage 1 alone to the full block:
    /// +stage 2, +feature concat, +residual, +stage 3.
    pub fn ablation_rows() -> [Self; 5] {
        let mut rows = [Self::STAGE1_ONLY; 5];
        rows[1].stage2 = true;
        rows[2] = Self {
            concat: true,
            ..rows[1]
        };
        rows[3] = Self {
            residual: true,
            ..rows[2]
        };
        rows[4] = Self::FULL;
        rows
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedConfig {
    /// Cross-cloud neighbor count.
    pub k_o: usize,
    pub flags: AblationFlags,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            k_o: 33,
            flags: AblationFlags::FULL,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_o == 0 {
            return Err(Error::Invalid("K_o must be at least 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn layout(cfg: &EmbedConfig, name: &str, c: usize, b: &mut LayoutBuilder) {
    let h = (c / 2).max(1);
    b.dense(&format!("{name}.s1.mlp0"), 2 * c + 4, c, true);
    b.dense(&format!("{name}.s1.mlp1"), c, c, true);
    if cfg.flags.concat {
        b.dense(&format!("{name}.cat"), 2 * c, c, true);
    }
    if cfg.flags.stage2 {
        b.dense(&format!("{name}.s2.pos"), POS_ENC, h, true);
        b.attention(&format!("{name}.s2.att"), c + h, c);
    }
    if cfg.flags.stage3 {
        b.dense(&format!("{name}.s3.pos"), POS_ENC, h, true);
        b.attention(&format!("{name}.s3.att"), c + h, c);
    }
}

/// `[Q, K, 4]` offsets (neighbor minus query) and distances for fixed queries.
fn cross_encoding<T: Scalar>(queries: &PointCloud, targets: &PointCloud, table: &NeighborTable) -> Tensor<T> {
    let mut out = Vec::with_capacity(table.indices().len() * 4);
    for (q, qp) in queries.points().iter().enumerate() {
        for &j in table.row(q) {
            let t = targets.get(j);
            let mut d2 = 0.0f64;
            for a in 0..3 {
                let d = t[a] as f64 - qp[a] as f64;
                d2 += d * d;
                out.push(T::from_f64(d));
            }
            out.push(T::from_f64(d2.sqrt()));
        }
    }
    Tensor::new(alloc::vec![queries.len(), table.k(), 4], out).expect("encoding size")
}

/// `[Q, K, 3]` offsets from each query's base point to its neighbors.
fn base_offsets<T: Scalar>(base: &PointCloud, targets: &PointCloud, table: &NeighborTable) -> Tensor<T> {
    let mut out = Vec::with_capacity(table.indices().len() * 3);
    for (q, b) in base.points().iter().enumerate() {
        for &j in table.row(q) {
            let t = targets.get(j);
            for a in 0..3 {
                out.push(T::from_f64(t[a] as f64 - b[a] as f64));
            }
        }
    }
    Tensor::new(alloc::vec![base.len(), table.k(), 3], out).expect("offset size")
}

/// Query positions of the cross-cloud search: reference points, optionally
/// displaced by a `[Q, 3]` flow that stays on the tape (the warping layer).
#[derive(Clone, Copy, Debug)]
pub struct Queries<'a> {
    pub points: &'a PointCloud,
    pub shift: Option<Var>,
}

impl<'a> Queries<'a> {
    pub fn fixed(points: &'a PointCloud) -> Self {
        Self { points, shift: None }
    }

    pub fn warped(points: &'a PointCloud, shift: Var) -> Self {
        Self {
            points,
            shift: Some(shift),
        }
    }
}

/// Neighbor table of the (possibly warped) queries in `pc_t1` and the
/// matching `[Q, K, 4]` encoding. With a shift, the offsets are
/// `(target - base) - shift`, so gradients reach the shifting flow; the
/// neighbor selection itself is piecewise constant.
fn cross_neighbors<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    queries: Queries<'_>,
    pc_t1: &PointCloud,
    k_o: usize,
) -> Result<(NeighborTable, Var)> {
    let k = k_o.min(pc_t1.len());
    let Some(shift) = queries.shift else {
        let table = knn(queries.points, pc_t1, k)?;
        let enc = ctx.tape.constant(cross_encoding(queries.points, pc_t1, &table));
        return Ok((table, enc));
    };
    let flow = SceneFlow::from_tensor(ctx.value(shift))?;
    let warped = warp(queries.points, &flow)?;
    let table = knn(&warped, pc_t1, k)?;
    let q = queries.points.len();
    let rel = ctx.tape.constant(base_offsets(queries.points, pc_t1, &table));
    let s = ctx.tape.gather_rows(shift, &repeat_rows(q, k), q, k)?;
    let off = ctx.tape.sub(rel, s)?;
    let dist = ctx.tape.row_norm(off)?;
    let dist = ctx.tape.reshape(dist, alloc::vec![q, k, 1])?;
    let enc = ctx.tape.concat_lastdim(off, dist)?;
    Ok((table, enc))
}

/// Stage 1: max embedding of the `K_o` nearest second-cloud features.
///
/// Row `i` of `queries` pairs with row `i` of `f_t`.
pub fn embed_patch_to_point<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    queries: Queries<'_>,
    pc_t1: &PointCloud,
    f_t1: Var,
    f_t: Var,
    k_o: usize,
    name: &str,
) -> Result<Var> {
    let q = queries.points.len();
    if ctx.tape.shape(f_t).first() != Some(&q) {
        return Err(Error::Shape {
            op: "embed_patch_to_point",
            detail: format!("{q} queries vs features {:?}", ctx.tape.shape(f_t)),
        });
    }
    let (table, enc) = cross_neighbors(ctx, queries, pc_t1, k_o)?;
    let k = table.k();
    let own = ctx.tape.gather_rows(f_t, &repeat_rows(q, k), q, k)?;
    let other = ctx.tape.gather_rows(f_t1, table.indices(), q, k)?;
    let pair = ctx.tape.concat_lastdim(own, other)?;
    let pair = ctx.tape.concat_lastdim(pair, enc)?;
    let h = ctx.dense(pair, &format!("{name}.s1.mlp0"), true)?;
    let h = ctx.dense(h, &format!("{name}.s1.mlp1"), true)?;
    ctx.tape.max_reduce(h)
}

/// Stage 2: attentive aggregation of `e1` over the reference-cloud neighborhoods.
pub fn embed_point_to_patch<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    table: &NeighborTable,
    encoding: Var,
    e1: Var,
    name: &str,
) -> Result<Var> {
    attend_neighbors(
        ctx,
        e1,
        table,
        encoding,
        &format!("{name}.s2.pos"),
        &format!("{name}.s2.att"),
    )
}

/// Stage 3: second attentive aggregation over the same neighborhoods, plus
/// the residual connection `aggregate(e2) + e2`.
pub fn embed_dilated<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    table: &NeighborTable,
    encoding: Var,
    e2: Var,
    name: &str,
) -> Result<Var> {
    let agg = embed_dilated_aggregate(ctx, table, encoding, e2, name)?;
    ctx.tape.add(agg, e2)
}

fn embed_dilated_aggregate<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    table: &NeighborTable,
    encoding: Var,
    e2: Var,
    name: &str,
) -> Result<Var> {
    attend_neighbors(
        ctx,
        e2,
        table,
        encoding,
        &format!("{name}.s3.pos"),
        &format!("{name}.s3.att"),
    )
}

/// Full embedding block at one level.
///
/// `level_t` must carry its self-neighbor table and encoding (every sampled
/// pyramid level does). `shift` is the `[l_k, 3]` flow that warps the
/// stage-1 query positions.
pub fn flow_embedding<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    cfg: &EmbedConfig,
    level_t: &PyramidLevel,
    level_t1: &PyramidLevel,
    shift: Option<Var>,
    name: &str,
) -> Result<Var> {
    let queries = Queries {
        points: &level_t.cloud,
        shift,
    };
    let e1 = embed_patch_to_point(
        ctx,
        queries,
        &level_t1.cloud,
        level_t1.features,
        level_t.features,
        cfg.k_o,
        name,
    )?;
    let mut x = e1;
    if cfg.flags.concat {
        let cat = ctx.tape.concat_lastdim(e1, level_t.features)?;
        x = ctx.dense(cat, &format!("{name}.cat"), true)?;
    }
    let (table, enc) = match (&level_t.neighbors, level_t.encoding) {
        (Some(t), Some(e)) => (t, e),
        _ if !(cfg.flags.stage2 || cfg.flags.stage3) => return Ok(x),
        _ => {
            return Err(Error::Invalid(
                "flow_embedding needs a level with a neighbor table".into(),
            ))
        }
    };
    let mut last_input = None;
    if cfg.flags.stage2 {
        last_input = Some(x);
        x = embed_point_to_patch(ctx, table, enc, x, name)?;
    }
    if cfg.flags.stage3 {
        last_input = Some(x);
        x = embed_dilated_aggregate(ctx, table, enc, x, name)?;
    }
    if cfg.flags.residual {
        if let Some(input) = last_input {
            x = ctx.tape.add(x, input)?;
        }
    }
    Ok(x)
}
