//! Training primitives: learning-rate schedule, per-scene loss and gradients,
//! gradient accumulation and clipping, one optimizer step over a batch.
//!
//! The epoch loop with logging and checkpoints lives in the std crate; this
//! module holds everything that does not need IO or a clock.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::ScenePair;
use crate::net::{Ctx, NetConfig};
use crate::numcore::{global_norm, GradMap, ParamStore};
use crate::predictor::{forward, gt_at_levels, multiscale_loss_on_tape, LossWeights, SceneFlow};
use crate::{Error, Result, Scalar};
#[cfg(not(feature = "std"))]
use num_traits::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Fixed point subsets, decaying learning rate.
    Fixed,
    /// Fresh subsets every iteration, constant learning rate.
    Resample,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::Fixed => 1,
            Phase::Resample => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub lr0: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub phase2_lr: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            decay: 0.7,
            decay_every: 10,
            phase1_epochs: 40,
            phase2_epochs: 10,
            phase2_lr: 1e-4,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.phase2_lr > 0.0 && self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Invalid("learning rates must be positive and decay in (0, 1]".into()));
        }
        if self.decay_every == 0 {
            return Err(Error::Invalid("decay interval must be at least one epoch".into()));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.phase1_epochs + self.phase2_epochs
    }

    pub fn phase(&self, epoch: usize) -> Phase {
        if epoch < self.phase1_epochs {
            Phase::Fixed
        } else {
            Phase::Resample
        }
    }

    /// `lr0 · decay^⌊epoch / decay_every⌋` in phase 1, the constant phase-2 rate after.
    pub fn lr(&self, epoch: usize) -> f64 {
        match self.phase(epoch) {
            Phase::Fixed => self.lr0 * self.decay.powi((epoch / self.decay_every) as i32),
            Phase::Resample => self.phase2_lr,
        }
    }
}

/// Loss and gradients of one scene, zero-filled for parameters the pass did not reach.
#[derive(Clone, Debug)]
pub struct SceneGrads<T> {
    pub loss: f64,
    pub grads: GradMap<T>,
}

/// Forward, multi-scale loss and backward for one scene pair.
pub fn scene_grads<T: Scalar, R: Rng + ?Sized>(
    store: &ParamStore<T>,
    cfg: &NetConfig,
    weights: &LossWeights,
    pair: &ScenePair,
    rng: &mut R,
) -> Result<SceneGrads<T>> {
    let mut ctx = Ctx::new(store, cfg.slope);
    let out = forward(&mut ctx, cfg, &pair.pc_t, &pair.pc_t1, rng)?;
    let gts = gt_at_levels(&pair.gt_flow, &out.chain)?;
    let loss = multiscale_loss_on_tape(&mut ctx, &out.flows, &gts, weights)?;
    let value = ctx.value(loss).data()[0].as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    let grads = ctx.tape.backward(loss)?.for_params(&ctx.tape, store);
    Ok(SceneGrads { loss: value, grads })
}

/// Adds `g` into `acc` name by name.
pub fn accumulate<T: Scalar>(acc: &mut GradMap<T>, g: &GradMap<T>) -> Result<()> {
    for (name, t) in g {
        match acc.get_mut(name) {
            Some(a) => a.add_assign(t),
            None => {
                acc.insert(name.clone(), t.clone());
            }
        }
    }
    Ok(())
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut GradMap<T>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for t in grads.values_mut() {
            t.scale_in_place(T::from_f64(s));
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepConfig {
    pub weights: LossWeights,
    /// Global-norm clip on the batch-mean gradient; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            clip: Some(1.0),
        }
    }
}

/// Averages per-scene gradients, clips and applies one Adam step.
/// Returns the mean scene loss.
pub fn apply_batch<T: Scalar>(
    store: &mut ParamStore<T>,
    batch: Vec<SceneGrads<T>>,
    step: &StepConfig,
    lr: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let n = batch.len();
    let mut loss = 0.0;
    let mut acc = GradMap::new();
    for sg in &batch {
        loss += sg.loss;
        accumulate(&mut acc, &sg.grads)?;
    }
    let inv = 1.0 / n as f64;
    for t in acc.values_mut() {
        t.scale_in_place(T::from_f64(inv));
    }
    let norm = match step.clip {
        Some(c) => clip_global_norm(&mut acc, c),
        None => global_norm(&acc),
    };
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    store.adam_step(&acc, lr)?;
    Ok(loss * inv)
}

/// Sequential batch step: gradients per scene in order, then one update.
pub fn train_step<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    cfg: &NetConfig,
    step: &StepConfig,
    scenes: &[ScenePair],
    lr: f64,
    rng: &mut R,
) -> Result<f64> {
    let batch = scenes
        .iter()
        .map(|s| scene_grads(store, cfg, &step.weights, s, rng))
        .collect::<Result<Vec<_>>>()?;
    apply_batch(store, batch, step, lr)
}

/// Full-resolution flow prediction without recording gradients.
pub fn predict<T: Scalar, R: Rng + ?Sized>(
    store: &ParamStore<T>,
    cfg: &NetConfig,
    pair: &ScenePair,
    rng: &mut R,
) -> Result<SceneFlow> {
    let mut ctx = Ctx::inference(store, cfg.slope);
    let out = forward(&mut ctx, cfg, &pair.pc_t, &pair.pc_t1, rng)?;
    out.flow(&ctx, 0)
}

/// Loss weights matching the configured level count, checked against it.
pub fn weights_for(cfg: &NetConfig, weights: Option<&LossWeights>) -> Result<LossWeights> {
    let levels = cfg.pyramid.levels();
    let w = weights.cloned().unwrap_or_else(|| LossWeights::for_levels(levels));
    w.validate()?;
    if w.0.len() != levels + 1 {
        return Err(Error::Invalid(format!(
            "{} loss weights for {} scales",
            w.0.len(),
            levels + 1
        )));
    }
    Ok(w)
}
