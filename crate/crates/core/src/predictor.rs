//! Coarse-to-fine scene-flow estimation and the multi-scale loss.
//!
//! The coarsest level predicts flow from its embedding alone. Every finer
//! sampled level upsamples the coarser flow and embedding (nearest coarse
//! point), warps its reference points by the upsampled flow, re-runs the
//! embedding from the warped positions and predicts a residual on top of the
//! upsampled flow. A last estimator does the same at full resolution without
//! a new embedding, so there is one estimator per scale.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::flowembed::flow_embedding;
use crate::geom::{knn, PointCloud, SampleIndex};
use crate::net::{Ctx, LayoutBuilder, NetConfig, ESTIMATOR_WIDTHS};
use crate::numcore::{Tensor, Var};
use crate::pyramid::{build_pyramids, copy_from_coarse};
use crate::{Error, Result, Scalar};
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Per-point motion vectors, in meters, row-aligned with a reference cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFlow {
    vectors: Vec<[f32; 3]>,
}

impl SceneFlow {
    pub fn new(vectors: Vec<[f32; 3]>) -> Result<Self> {
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scene flow"));
        }
        Ok(Self { vectors })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            vectors: vec![[0.0; 3]; n],
        }
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        if t.rank() != 2 || t.last_dim() != 3 {
            return Err(Error::Shape {
                op: "scene flow",
                detail: format!("expected [N, 3], got {:?}", t.shape()),
            });
        }
        let d = t.data();
        Self::new(
            (0..t.rows())
                .map(|r| {
                    [
                        d[3 * r].as_f64() as f32,
                        d[3 * r + 1].as_f64() as f32,
                        d[3 * r + 2].as_f64() as f32,
                    ]
                })
                .collect(),
        )
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self
            .vectors
            .iter()
            .flat_map(|v| v.iter().map(|&x| T::from_f64(x as f64)))
            .collect();
        Tensor::new(vec![self.vectors.len(), 3], data).expect("3 components per vector")
    }

    pub fn vectors(&self) -> &[[f32; 3]] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn select(&self, idx: &SampleIndex) -> SceneFlow {
        SceneFlow {
            vectors: idx.indices().iter().map(|&i| self.vectors[i]).collect(),
        }
    }

    /// Mean vector length.
    pub fn mean_magnitude(&self) -> f64 {
        if self.vectors.is_empty() {
            return 0.0;
        }
        self.vectors
            .iter()
            .map(|v| v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt())
            .sum::<f64>()
            / self.vectors.len() as f64
    }
}

/// Per-scale loss weights `α_0..α_L`, finest first.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights(pub Vec<f64>);

impl Default for LossWeights {
    fn default() -> Self {
        Self(vec![0.02, 0.04, 0.08, 0.16])
    }
}

impl LossWeights {
    /// Weights for `levels` sampled levels: the defaults for three, otherwise
    /// the same doubling series starting at 0.02.
    pub fn for_levels(levels: usize) -> Self {
        if levels == 3 {
            Self::default()
        } else {
            Self((0..=levels).map(|k| 0.02 * f64::from(1u32 << k)).collect())
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::Invalid(format!("loss weights {:?} must be positive", self.0)));
        }
        Ok(())
    }
}

/// Reference points displaced by a flow.
pub fn warp(pc: &PointCloud, sf: &SceneFlow) -> Result<PointCloud> {
    if pc.len() != sf.len() {
        return Err(Error::Shape {
            op: "warp",
            detail: format!("{} points vs {} flow vectors", pc.len(), sf.len()),
        });
    }
    PointCloud::new(
        pc.points()
            .iter()
            .zip(sf.vectors())
            .map(|(p, f)| [p[0] + f[0], p[1] + f[1], p[2] + f[2]])
            .collect(),
    )
}

pub(crate) fn estimator_layout(name: &str, cin: usize, b: &mut LayoutBuilder) {
    let mut prev = cin;
    for (i, &w) in ESTIMATOR_WIDTHS.iter().enumerate() {
        b.dense(&format!("{name}.l{i}"), prev, w, true);
        prev = w;
    }
}

/// Per-point MLP 64 → 32 → 3; the last layer is linear so the flow is signed.
pub fn estimate_flow<T: Scalar>(ctx: &mut Ctx<'_, T>, features: Var, name: &str) -> Result<Var> {
    let mut x = features;
    let last = ESTIMATOR_WIDTHS.len() - 1;
    for i in 0..=last {
        x = ctx.dense(x, &format!("{name}.l{i}"), i < last)?;
    }
    Ok(x)
}

/// Nearest-coarse-point copy of a flow and its features to a finer cloud.
pub fn upsample_flow_feats<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    sf_coarse: Var,
    feats_coarse: Var,
    coarse: &PointCloud,
    fine: &PointCloud,
    k_q: usize,
) -> Result<(Var, Var)> {
    let table = knn(fine, coarse, k_q.min(coarse.len()))?;
    let f = copy_from_coarse(ctx, sf_coarse, &table)?;
    let x = copy_from_coarse(ctx, feats_coarse, &table)?;
    Ok((f, x))
}

/// Flows at every scale plus the sampling chain that produced the levels.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[l_k, 3]` flows, index 0 = full resolution.
    pub flows: Vec<Var>,
    /// Reference-cloud points of every level.
    pub clouds: Vec<PointCloud>,
    /// `chain[k]` selects level `k + 1` rows out of level `k`.
    pub chain: Vec<SampleIndex>,
}

impl ForwardOutput {
    pub fn flow<T: Scalar>(&self, ctx: &Ctx<'_, T>, level: usize) -> Result<SceneFlow> {
        SceneFlow::from_tensor(ctx.value(self.flows[level]))
    }
}

/// Full forward pass.
pub fn forward<T: Scalar, R: Rng + ?Sized>(
    ctx: &mut Ctx<'_, T>,
    cfg: &NetConfig,
    pc_t: &PointCloud,
    pc_t1: &PointCloud,
    rng: &mut R,
) -> Result<ForwardOutput> {
    cfg.validate()?;
    let top = cfg.pyramid.levels();
    let need = cfg.pyramid.level_sizes[0];
    if pc_t.len() < need || pc_t1.len() < need {
        return Err(Error::TooMany {
            op: "forward",
            requested: need,
            available: pc_t.len().min(pc_t1.len()),
        });
    }
    let (pyr_t, pyr_t1) = build_pyramids(ctx, &cfg.pyramid, pc_t, pc_t1, rng)?;
    let mut flows: Vec<Option<Var>> = vec![None; top + 1];

    let mut emb = flow_embedding(
        ctx,
        &cfg.embed,
        &pyr_t.levels[top],
        &pyr_t1.levels[top],
        None,
        &format!("fe{top}"),
    )?;
    let mut flow = estimate_flow(ctx, emb, &format!("est{top}"))?;
    flows[top] = Some(flow);

    for k in (0..top).rev() {
        let level = &pyr_t.levels[k];
        let table = level.up_table.as_ref().expect("pyramid levels carry up tables");
        let up_flow = copy_from_coarse(ctx, flow, table)?;
        let up_emb = copy_from_coarse(ctx, emb, table)?;
        let input = if k > 0 {
            let e = flow_embedding(
                ctx,
                &cfg.embed,
                level,
                &pyr_t1.levels[k],
                Some(up_flow),
                &format!("fe{k}"),
            )?;
            let x = ctx.tape.concat_lastdim(e, up_emb)?;
            emb = e;
            ctx.tape.concat_lastdim(x, up_flow)?
        } else {
            ctx.tape.concat_lastdim(up_emb, up_flow)?
        };
        let residual = estimate_flow(ctx, input, &format!("est{k}"))?;
        flow = ctx.tape.add(up_flow, residual)?;
        flows[k] = Some(flow);
    }

    Ok(ForwardOutput {
        flows: flows.into_iter().map(|f| f.expect("every level predicted")).collect(),
        clouds: pyr_t.levels.iter().map(|l| l.cloud.clone()).collect(),
        chain: pyr_t.levels[1..]
            .iter()
            .map(|l| l.parent_sample.clone().expect("sampled level"))
            .collect(),
    })
}

/// Ground truth at every level: rows of the full-resolution flow selected
/// by the composed sampling indices (levels are exact subsets).
pub fn gt_at_levels(gt_full: &SceneFlow, chain: &[SampleIndex]) -> Result<Vec<SceneFlow>> {
    let mut out = Vec::with_capacity(chain.len() + 1);
    out.push(gt_full.clone());
    let mut composed: Option<SampleIndex> = None;
    for s in chain {
        let next = match &composed {
            None => {
                if s.source_len() != gt_full.len() {
                    return Err(Error::Shape {
                        op: "gt_at_levels",
                        detail: format!(
                            "sample chain starts from {} rows, ground truth has {}",
                            s.source_len(),
                            gt_full.len()
                        ),
                    });
                }
                s.clone()
            }
            Some(outer) => s.compose(outer)?,
        };
        out.push(gt_full.select(&next));
        composed = Some(next);
    }
    Ok(out)
}

fn check_levels(flows: usize, gts: usize, weights: &LossWeights) -> Result<()> {
    if flows != gts || flows != weights.0.len() {
        return Err(Error::Shape {
            op: "multiscale_loss",
            detail: format!(
                "{} flows, {} ground truths, {} weights",
                flows,
                gts,
                weights.0.len()
            ),
        });
    }
    Ok(())
}

/// `Σ_k α_k Σ_i ‖sf_ki − gt_ki‖₂`, accumulated in f64.
pub fn multiscale_loss(flows: &[SceneFlow], gts: &[SceneFlow], weights: &LossWeights) -> Result<f64> {
    check_levels(flows.len(), gts.len(), weights)?;
    let mut total = 0.0;
    for ((f, g), &a) in flows.iter().zip(gts).zip(&weights.0) {
        if f.len() != g.len() {
            return Err(Error::Shape {
                op: "multiscale_loss",
                detail: format!("{} predictions vs {} ground-truth rows", f.len(), g.len()),
            });
        }
        let level: f64 = f
            .vectors()
            .iter()
            .zip(g.vectors())
            .map(|(p, q)| {
                (0..3)
                    .map(|c| {
                        let d = p[c] as f64 - q[c] as f64;
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        total += a * level;
    }
    Ok(total)
}

/// The same loss recorded on the tape for training.
pub fn multiscale_loss_on_tape<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    flows: &[Var],
    gts: &[SceneFlow],
    weights: &LossWeights,
) -> Result<Var> {
    check_levels(flows.len(), gts.len(), weights)?;
    let mut total: Option<Var> = None;
    for ((&f, g), &a) in flows.iter().zip(gts).zip(&weights.0) {
        let gt = ctx.tape.constant(g.to_tensor());
        let diff = ctx.tape.sub(f, gt)?;
        let norms = ctx.tape.row_norm(diff)?;
        let s = ctx.tape.sum_all(norms);
        let term = ctx.tape.scale(s, a);
        total = Some(match total {
            None => term,
            Some(t) => ctx.tape.add(t, term)?,
        });
    }
    total.ok_or_else(|| Error::Invalid("loss over zero levels".into()))
}
