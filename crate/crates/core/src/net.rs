//! Network configuration, parameter layout and the shared layer context.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::flowembed::EmbedConfig;
use crate::geom::{NeighborTable, PointCloud};
use crate::numcore::{ParamStore, Tape, Tensor, Var};
use crate::pyramid::PyramidConfig;
use crate::{Error, Result, Scalar};
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Hidden widths of every flow estimator; the last layer emits the 3-D flow.
pub const ESTIMATOR_WIDTHS: [usize; 3] = [64, 32, 3];

/// Default negative slope of every hidden activation.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Width of the relative position encoding: center, neighbor, offset, distance.
pub const POS_ENC: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub pyramid: PyramidConfig,
    pub embed: EmbedConfig,
    pub slope: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            pyramid: PyramidConfig::default(),
            embed: EmbedConfig::default(),
            slope: LEAKY_SLOPE,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        self.pyramid.validate()?;
        self.embed.validate()?;
        if !(0.0..1.0).contains(&self.slope) {
            return Err(Error::Invalid(format!("activation slope {} not in [0,1)", self.slope)));
        }
        Ok(())
    }

    /// Input width of the flow estimator at level `k`.
    pub fn estimator_input(&self, k: usize) -> usize {
        let c = &self.pyramid.channels;
        let top = self.pyramid.levels();
        if k == top {
            c[top - 1]
        } else if k == 0 {
            c[0] + 3
        } else {
            c[k - 1] + c[k] + 3
        }
    }
}

/// Shape and initialization class of one parameter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Default)]
pub(crate) struct LayoutBuilder {
    pub specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    pub fn dense(&mut self, name: &str, cin: usize, cout: usize, bias: bool) {
        self.specs.push(ParamSpec {
            name: format!("{name}.w"),
            shape: vec![cin, cout],
        });
        if bias {
            self.specs.push(ParamSpec {
                name: format!("{name}.b"),
                shape: vec![cout],
            });
        }
    }

    /// Attentive pooling over `cin`-wide grouped features to `cout` channels.
    pub fn attention(&mut self, name: &str, cin: usize, cout: usize) {
        self.dense(&format!("{name}.score"), cin, cin, false);
        self.dense(&format!("{name}.out"), cin, cout, true);
    }
}

/// Every learnable tensor of the network for `cfg`, sorted by name.
pub fn param_layout(cfg: &NetConfig) -> Vec<ParamSpec> {
    let mut b = LayoutBuilder::default();
    crate::pyramid::layout(&cfg.pyramid, &mut b);
    let levels = cfg.pyramid.levels();
    for k in 1..=levels {
        crate::flowembed::layout(&cfg.embed, &format!("fe{k}"), cfg.pyramid.channels[k - 1], &mut b);
    }
    for k in 0..=levels {
        crate::predictor::estimator_layout(&format!("est{k}"), cfg.estimator_input(k), &mut b);
    }
    let mut specs = b.specs;
    specs.sort_by(|a, b| a.name.cmp(&b.name));
    specs
}

/// Kaiming-uniform weights (fan-in), zero biases.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut store: ParamStore<T> = ParamStore::new();
    for spec in param_layout(cfg) {
        if spec.name.ends_with(".b") {
            store.insert(&spec.name, Tensor::zeros(&spec.shape))?;
        } else {
            store.insert_kaiming(&spec.name, spec.shape[0], spec.shape[1], cfg.slope, rng)?;
        }
    }
    Ok(store)
}

/// Checks that `store` holds exactly the parameters `cfg` needs.
pub fn check_compatible<T: Scalar>(cfg: &NetConfig, store: &ParamStore<T>) -> core::result::Result<(), Vec<Error>> {
    let layout = param_layout(cfg);
    let mut errs = Vec::new();
    for spec in &layout {
        match store.get(&spec.name) {
            None => errs.push(Error::UnknownParam(spec.name.clone())),
            Some(t) if t.shape() != spec.shape.as_slice() => errs.push(Error::ParamShape {
                name: spec.name.clone(),
                expected: spec.shape.clone(),
                found: t.shape().to_vec(),
            }),
            _ => {}
        }
    }
    for name in store.names() {
        if !layout.iter().any(|s| s.name == name) {
            errs.push(Error::Invalid(format!("unexpected parameter `{name}`")));
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

/// A tape plus read access to the weights it draws from.
pub struct Ctx<'s, T> {
    pub tape: Tape<T>,
    pub store: &'s ParamStore<T>,
    pub slope: f64,
}

impl<'s, T: Scalar> Ctx<'s, T> {
    pub fn new(store: &'s ParamStore<T>, slope: f64) -> Self {
        Self {
            tape: Tape::new(),
            store,
            slope,
        }
    }

    pub fn inference(store: &'s ParamStore<T>, slope: f64) -> Self {
        Self {
            tape: Tape::no_grad(),
            store,
            slope,
        }
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        self.tape.param(self.store, name)
    }

    /// `name.w` (and `name.b` when present) applied to `x`, optionally activated.
    pub fn dense(&mut self, x: Var, name: &str, act: bool) -> Result<Var> {
        let w = self.param(&format!("{name}.w"))?;
        let bname = format!("{name}.b");
        let b = if self.store.get(&bname).is_some() {
            Some(self.param(&bname)?)
        } else {
            None
        };
        let y = self.tape.linear(x, w, b)?;
        if act {
            self.tape.leaky_relu(y, self.slope)
        } else {
            Ok(y)
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }
}

/// Coordinates relative to `origin` as an `[P, 3]` tensor.
pub fn centered_coords<T: Scalar>(pc: &PointCloud, origin: [f32; 3]) -> Tensor<T> {
    let data = pc
        .points()
        .iter()
        .flat_map(|p| (0..3).map(move |a| T::from_f64(p[a] as f64 - origin[a] as f64)))
        .collect();
    Tensor::new(vec![pc.len(), 3], data).expect("3 coordinates per point")
}

/// Relative position encoding `[P, K, 10]` of each center and its neighbors:
/// centered center xyz, centered neighbor xyz, offset, Euclidean distance.
pub fn rel_pos_encoding<T: Scalar>(
    centers: &PointCloud,
    others: &PointCloud,
    table: &NeighborTable,
    origin: [f32; 3],
) -> Tensor<T> {
    let k = table.k();
    let mut out = Vec::with_capacity(centers.len() * k * POS_ENC);
    for (q, c) in centers.points().iter().enumerate() {
        for &j in table.row(q) {
            let n = others.get(j);
            let mut dist = 0.0f64;
            for a in 0..3 {
                out.push(T::from_f64(c[a] as f64 - origin[a] as f64));
            }
            for a in 0..3 {
                out.push(T::from_f64(n[a] as f64 - origin[a] as f64));
            }
            for a in 0..3 {
                let d = n[a] as f64 - c[a] as f64;
                dist += d * d;
                out.push(T::from_f64(d));
            }
            out.push(T::from_f64(dist.sqrt()));
        }
    }
    Tensor::new(vec![centers.len(), k, POS_ENC], out).expect("encoding size")
}

/// Self-index table `[P, K]` used to broadcast a per-point row over its neighbors.
pub(crate) fn repeat_rows(p: usize, k: usize) -> Vec<usize> {
    (0..p).flat_map(|i| core::iter::repeat_n(i, k)).collect()
}
