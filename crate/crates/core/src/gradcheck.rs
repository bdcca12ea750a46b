//! Central finite differences against reverse-mode gradients, in f64.
//!
//! A graph is checked through the scalar probe `sum(out * r)` with a fixed
//! random `r`, so every output entry contributes.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::net::Ctx;
use crate::numcore::{ParamStore, Tensor, Var};
use crate::{Error, Result};

/// Perturbation step.
pub const STEP: f64 = 1e-6;

/// Denominator floor of the relative error, so near-zero gradients compare absolutely.
pub const FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    /// Entries checked per parameter; smaller tensors are checked in full.
    pub per_param: usize,
    pub slope: f64,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            per_param: usize::MAX,
            slope: 0.1,
            seed: 5,
        }
    }
}

/// Uniform entries in `[-1, 1)`.
pub fn random_tensor<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.into(), data).expect("length matches shape")
}

fn probe(ctx: &mut Ctx<'_, f64>, out: Var, seed: u64) -> Result<Var> {
    let shape: Vec<usize> = ctx.tape.shape(out).into();
    if shape.is_empty() {
        return Ok(out);
    }
    let r = random_tensor(&shape, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x9e37));
    let r = ctx.tape.constant(r);
    let m = ctx.tape.mul(out, r)?;
    Ok(ctx.tape.sum_all(m))
}

fn probe_value<F>(store: &ParamStore<f64>, build: &F, opts: &CheckOptions) -> Result<f64>
where
    F: Fn(&mut Ctx<'_, f64>) -> Result<Var>,
{
    let mut ctx = Ctx::new(store, opts.slope);
    let out = build(&mut ctx)?;
    let l = probe(&mut ctx, out, opts.seed)?;
    Ok(ctx.value(l).data()[0])
}

/// Largest relative error `|n - a| / max(|n|, |a|, FLOOR)` over the checked
/// entries of every parameter in `store`, with the parameter it came from.
pub fn max_rel_err<F>(store: &ParamStore<f64>, build: F, opts: &CheckOptions) -> Result<(f64, String)>
where
    F: Fn(&mut Ctx<'_, f64>) -> Result<Var>,
{
    let mut ctx = Ctx::new(store, opts.slope);
    let out = build(&mut ctx)?;
    let l = probe(&mut ctx, out, opts.seed)?;
    let grads = ctx.tape.backward(l)?.for_params(&ctx.tape, store);
    let mut pick = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = (0.0f64, String::new());
    let names: Vec<String> = store.names().map(String::from).collect();
    if names.is_empty() {
        return Err(Error::Invalid("gradient check on an empty store".into()));
    }
    for name in names {
        let n = store.get(&name).map_or(0, |t| t.len());
        let entries: Vec<usize> = if n <= opts.per_param {
            (0..n).collect()
        } else {
            (0..opts.per_param).map(|_| pick.random_range(0..n)).collect()
        };
        for i in entries {
            let mut plus = store.clone();
            plus.get_mut(&name).expect("listed name").data_mut()[i] += STEP;
            let mut minus = store.clone();
            minus.get_mut(&name).expect("listed name").data_mut()[i] -= STEP;
            let numeric = (probe_value(&plus, &build, opts)? - probe_value(&minus, &build, opts)?) / (2.0 * STEP);
            let analytic = grads[&name].data()[i];
            let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(FLOOR);
            if !err.is_finite() {
                return Err(Error::NonFinite("gradient check"));
            }
            if err > worst.0 || worst.1.is_empty() {
                worst = (err, name.clone());
            }
        }
    }
    Ok(worst)
}
