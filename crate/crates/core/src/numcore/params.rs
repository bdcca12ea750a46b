use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::Tensor;
use crate::{Error, Result, Scalar};
#[cfg(not(feature = "std"))]
use num_traits::Float;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Gradients keyed by parameter name.
pub type GradMap<T> = BTreeMap<String, Tensor<T>>;

/// A learnable tensor with its Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> Param<T> {
    fn new(value: Tensor<T>) -> Self {
        let n = value.len();
        Self {
            value,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }
}

/// All learnable weights, keyed by unique hierarchical names and iterated in
/// sorted name order, plus the optimizer step count.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Param<T>>,
    step: u64,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
            step: 0,
        }
    }

    /// Adds a parameter; names must be unique.
    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Invalid(alloc::format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name.to_string(), Param::new(value));
        Ok(())
    }

    /// Adds a Kaiming-uniform weight (fan-in, leaky-ReLU gain) of shape `[fan_in, fan_out]`.
    pub fn insert_kaiming<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        slope: f64,
        rng: &mut R,
    ) -> Result<()> {
        let gain = (2.0 / (1.0 + slope * slope)).sqrt();
        let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::from_f64(rng.random_range(-bound..=bound)))
            .collect();
        self.insert(name, Tensor::new(vec![fan_in, fan_out], data)?)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Same weights and optimizer state in another precision.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let conv = |v: &[T]| v.iter().map(|&x| U::from_f64(x.as_f64())).collect();
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            m: conv(&p.m),
                            v: conv(&p.v),
                        },
                    )
                })
                .collect(),
            step: self.step,
        }
    }

    /// One Adam update (β1 = 0.9, β2 = 0.999, ε = 1e-8) with bias correction.
    ///
    /// Every parameter needs a gradient of matching shape; the update is
    /// all-or-nothing.
    pub fn adam_step(&mut self, grads: &GradMap<T>, lr: f64) -> Result<()> {
        for (name, p) in &self.params {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::MissingGrad(name.clone()))?;
            if g.shape() != p.value.shape() {
                return Err(Error::ParamShape {
                    name: name.clone(),
                    expected: p.value.shape().to_vec(),
                    found: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::from_f64(ADAM_BETA1), T::from_f64(ADAM_BETA2));
        let one = T::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let lr = T::from_f64(lr);
        let eps = T::from_f64(ADAM_EPS);
        for (name, p) in &mut self.params {
            let g = grads[name].data();
            let Param { value, m, v } = p;
            for (((w, mi), vi), &gi) in value.data_mut().iter_mut().zip(m).zip(v).zip(g) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Global L2 norm of a gradient map.
pub fn global_norm<T: Scalar>(grads: &GradMap<T>) -> f64 {
    grads.values().map(Tensor::sq_norm).sum::<f64>().sqrt()
}
