use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::{GradMap, ParamStore, Tensor};
use crate::error::shape_err;
use crate::{Error, Result, Scalar};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    LeakyRelu { x: Var, slope: T },
    /// Softmax over the middle axis of a `[outer, k, inner]` view.
    Softmax { x: Var, k: usize, inner: usize },
    MaxReduce { x: Var, k: usize, argmax: Vec<u32> },
    SumReduce { x: Var, k: usize },
    Gather { x: Var, idx: Vec<usize> },
    Concat { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: T },
    SumAll { x: Var },
    RowNorm { x: Var },
    Reshape { x: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Wengert list of executed operations.
///
/// Nodes are appended in execution order, so every node's inputs precede it
/// and a single reverse sweep computes all gradients. Gradients accumulate
/// additively when a value feeds several consumers.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
    track: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            track: true,
        }
    }

    /// Tape whose parameters do not require gradients (inference).
    pub fn no_grad() -> Self {
        Self {
            track: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Winning neighbor index per output element of a `max_reduce` node.
    pub fn argmax(&self, v: Var) -> Option<&[u32]> {
        match &self.nodes[v.0].op {
            Op::MaxReduce { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    /// Parameters referenced so far, by name.
    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite output from {:?}", op_name(&op));
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a constant input.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records a leaf that requires a gradient.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Fetches a parameter by name; repeated lookups return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?
            .clone();
        let v = self.push(value, Op::Leaf, self.track);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// `y = x·w + b` over the last axis of `x`, broadcasting over leading dims.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.value(x);
        let ws = self.value(w);
        if ws.rank() != 2 || xs.rank() == 0 || xs.last_dim() != ws.shape()[0] {
            return Err(shape_err(
                "linear",
                format!("x {:?} vs w {:?}", xs.shape(), ws.shape()),
            ));
        }
        let (cin, cout) = (ws.shape()[0], ws.shape()[1]);
        let rows = xs.rows();
        let mut out = vec![T::zero(); rows * cout];
        if let Some(b) = b {
            let bs = self.value(b);
            if bs.shape() != [cout] {
                return Err(shape_err(
                    "linear",
                    format!("bias {:?} vs w {:?}", bs.shape(), ws.shape()),
                ));
            }
            for r in 0..rows {
                out[r * cout..(r + 1) * cout].copy_from_slice(bs.data());
            }
        }
        T::gemm(
            rows,
            cin,
            cout,
            xs.data(),
            (cin as isize, 1),
            ws.data(),
            (cout as isize, 1),
            if b.is_some() { T::one() } else { T::zero() },
            &mut out,
        );
        let mut shape = xs.shape().to_vec();
        *shape.last_mut().unwrap() = cout;
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b }, ng))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&slope) {
            return Err(Error::Invalid(format!("leaky_relu slope {slope} not in [0,1)")));
        }
        let s = T::from_f64(slope);
        let out = self.value(x).map(|v| if v > T::zero() { v } else { v * s });
        let ng = self.ng(x);
        Ok(self.push(out, Op::LeakyRelu { x, slope: s }, ng))
    }

    fn softmax_axis(&mut self, x: Var, from_end: usize) -> Result<Var> {
        let xs = self.value(x);
        if xs.rank() < from_end {
            return Err(shape_err("softmax", format!("rank {} input", xs.rank())));
        }
        let shape = xs.shape();
        let k = shape[shape.len() - from_end];
        if k == 0 {
            return Err(shape_err("softmax", "empty softmax axis".into()));
        }
        let inner: usize = shape[shape.len() - from_end + 1..].iter().product();
        let outer = xs.len() / (k * inner);
        let src = xs.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            let base = o * k * inner;
            for i in 0..inner {
                let at = |j: usize| base + j * inner + i;
                let mut mx = src[at(0)];
                for j in 1..k {
                    mx = mx.max(src[at(j)]);
                }
                let mut z = T::zero();
                for j in 0..k {
                    let e = (src[at(j)] - mx).exp();
                    out[at(j)] = e;
                    z += e;
                }
                for j in 0..k {
                    out[at(j)] = out[at(j)] / z;
                }
            }
        }
        let t = Tensor::new(shape.to_vec(), out)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Softmax { x, k, inner }, ng))
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        self.softmax_axis(x, 1)
    }

    /// Softmax over the neighbor axis `K` of a `[..., K, C]` tensor, independently per channel.
    pub fn softmax_neighbors(&mut self, x: Var) -> Result<Var> {
        self.softmax_axis(x, 2)
    }

    fn split_kc(&self, op: &'static str, x: Var) -> Result<(usize, usize, usize, Vec<usize>)> {
        let xs = self.value(x);
        if xs.rank() < 2 {
            return Err(shape_err(op, format!("need [..., K, C], got {:?}", xs.shape())));
        }
        let s = xs.shape();
        let (k, c) = (s[s.len() - 2], s[s.len() - 1]);
        let outer = s[..s.len() - 2].iter().product();
        let mut out_shape = s[..s.len() - 2].to_vec();
        out_shape.push(c);
        Ok((outer, k, c, out_shape))
    }

    /// Per-channel maximum over the neighbor axis of `[..., K, C]`.
    /// Ties resolve to the lowest neighbor index, which alone receives the gradient.
    pub fn max_reduce(&mut self, x: Var) -> Result<Var> {
        let (outer, k, c, shape) = self.split_kc("max_reduce", x)?;
        if k == 0 {
            return Err(Error::EmptyNeighborhood);
        }
        let src = self.value(x).data();
        let mut out = vec![T::zero(); outer * c];
        let mut argmax = vec![0u32; outer * c];
        for o in 0..outer {
            let base = o * k * c;
            let dst = &mut out[o * c..(o + 1) * c];
            dst.copy_from_slice(&src[base..base + c]);
            let am = &mut argmax[o * c..(o + 1) * c];
            for j in 1..k {
                let row = &src[base + j * c..base + (j + 1) * c];
                for ch in 0..c {
                    if row[ch] > dst[ch] {
                        dst[ch] = row[ch];
                        am[ch] = j as u32;
                    }
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::MaxReduce { x, k, argmax }, ng))
    }

    /// Sum over the neighbor axis of `[..., K, C]`.
    pub fn sum_reduce(&mut self, x: Var) -> Result<Var> {
        let (outer, k, c, shape) = self.split_kc("sum_reduce", x)?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); outer * c];
        for o in 0..outer {
            let dst = &mut out[o * c..(o + 1) * c];
            for j in 0..k {
                let row = &src[(o * k + j) * c..(o * k + j + 1) * c];
                for (d, &v) in dst.iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::SumReduce { x, k }, ng))
    }

    /// `out[m, k, :] = x[idx[m * K + k], :]` for `x: [N, C]`; output `[M, K, C]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize], m: usize, k: usize) -> Result<Var> {
        let xs = self.value(x);
        if xs.rank() != 2 {
            return Err(shape_err("gather_rows", format!("x must be [N, C], got {:?}", xs.shape())));
        }
        if idx.len() != m * k {
            return Err(shape_err(
                "gather_rows",
                format!("index table holds {} entries, expected {m}x{k}", idx.len()),
            ));
        }
        let (n, c) = (xs.shape()[0], xs.shape()[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                len: n,
            });
        }
        let src = xs.data();
        let mut out = Vec::with_capacity(m * k * c);
        for &i in idx {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let ng = self.ng(x);
        let t = Tensor::new(vec![m, k, c], out)?;
        Ok(self.push(t, Op::Gather { x, idx: idx.to_vec() }, ng))
    }

    /// Concatenation along the last axis; leading shapes must agree.
    pub fn concat_lastdim(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(shape_err("concat_lastdim", format!("{sa:?} vs {sb:?}")));
        }
        let (ca, cb) = (av.last_dim(), bv.last_dim());
        let rows = av.rows();
        let mut out = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            out.extend_from_slice(&av.data()[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&bv.data()[r * cb..(r + 1) * cb]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { a, b }, ng))
    }

    fn zip_same(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(op_name, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let out = self.value(x).map(|v| v * c);
        let ng = self.ng(x);
        self.push(out, Op::Scale { x, c }, ng)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::SumAll { x }, ng)
    }

    /// Euclidean norm of every row (last axis); output drops the last axis.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x);
        if xs.rank() == 0 {
            return Err(shape_err("row_norm", "scalar input".into()));
        }
        let c = xs.last_dim();
        let out: Vec<T> = (0..xs.rows())
            .map(|r| xs.data()[r * c..(r + 1) * c].iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect();
        let shape = xs.shape()[..xs.rank() - 1].to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::RowNorm { x }, ng))
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape { x }, ng))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every node that requires a gradient and is reachable from `loss`
    /// receives `dLoss/dNode`; unreachable ones report zero.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[id].take() else { continue };
            self.backprop_node(node, &dy, &mut grads);
            grads[id] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let dyd = dy.data();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (cin, cout) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                if self.ng(*x) {
                    let g = acc(grads, *x, xv.shape());
                    // dx = dy · wᵀ
                    T::gemm(
                        rows,
                        cout,
                        cin,
                        dyd,
                        (cout as isize, 1),
                        wv.data(),
                        (1, cout as isize),
                        T::one(),
                        g.data_mut(),
                    );
                }
                if self.ng(*w) {
                    let g = acc(grads, *w, wv.shape());
                    // dw = xᵀ · dy
                    T::gemm(
                        cin,
                        rows,
                        cout,
                        xv.data(),
                        (1, cin as isize),
                        dyd,
                        (cout as isize, 1),
                        T::one(),
                        g.data_mut(),
                    );
                }
                if let Some(b) = b {
                    if self.ng(*b) {
                        let g = acc(grads, *b, &[cout]).data_mut();
                        for r in 0..rows {
                            for (gj, &d) in g.iter_mut().zip(&dyd[r * cout..(r + 1) * cout]) {
                                *gj += d;
                            }
                        }
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                if self.ng(*x) {
                    let xv = self.value(*x);
                    let g = acc(grads, *x, xv.shape()).data_mut();
                    for ((gi, &xi), &d) in g.iter_mut().zip(xv.data()).zip(dyd) {
                        *gi += if xi > T::zero() { d } else { d * *slope };
                    }
                }
            }
            Op::Softmax { x, k, inner } => {
                if self.ng(*x) {
                    let y = node.value.data();
                    let (k, inner) = (*k, *inner);
                    let outer = y.len() / (k * inner);
                    let g = acc(grads, *x, node.value.shape()).data_mut();
                    for o in 0..outer {
                        let base = o * k * inner;
                        for i in 0..inner {
                            let mut dot = T::zero();
                            for j in 0..k {
                                let a = base + j * inner + i;
                                dot += dyd[a] * y[a];
                            }
                            for j in 0..k {
                                let a = base + j * inner + i;
                                g[a] += y[a] * (dyd[a] - dot);
                            }
                        }
                    }
                }
            }
            Op::MaxReduce { x, k, argmax } => {
                if self.ng(*x) {
                    let xs = self.value(*x).shape();
                    let c = node.value.last_dim();
                    let g = acc(grads, *x, xs).data_mut();
                    for (o_c, (&j, &d)) in argmax.iter().zip(dyd).enumerate() {
                        let (o, ch) = (o_c / c, o_c % c);
                        g[(o * k + j as usize) * c + ch] += d;
                    }
                }
            }
            Op::SumReduce { x, k } => {
                if self.ng(*x) {
                    let xs = self.value(*x).shape();
                    let c = node.value.last_dim();
                    let g = acc(grads, *x, xs).data_mut();
                    let outer = dyd.len() / c.max(1);
                    for o in 0..outer {
                        let d = &dyd[o * c..(o + 1) * c];
                        for j in 0..*k {
                            let row = &mut g[(o * k + j) * c..(o * k + j + 1) * c];
                            for (gi, &di) in row.iter_mut().zip(d) {
                                *gi += di;
                            }
                        }
                    }
                }
            }
            Op::Gather { x, idx } => {
                if self.ng(*x) {
                    let xs = self.value(*x).shape();
                    let c = xs[1];
                    let g = acc(grads, *x, xs).data_mut();
                    for (slot, &i) in idx.iter().enumerate() {
                        let src = &dyd[slot * c..(slot + 1) * c];
                        for (gi, &d) in g[i * c..(i + 1) * c].iter_mut().zip(src) {
                            *gi += d;
                        }
                    }
                }
            }
            Op::Concat { a, b } => {
                let ca = self.value(*a).last_dim();
                let cb = self.value(*b).last_dim();
                let rows = node.value.rows();
                if self.ng(*a) {
                    let g = acc(grads, *a, self.value(*a).shape()).data_mut();
                    for r in 0..rows {
                        let src = &dyd[r * (ca + cb)..r * (ca + cb) + ca];
                        for (gi, &d) in g[r * ca..(r + 1) * ca].iter_mut().zip(src) {
                            *gi += d;
                        }
                    }
                }
                if self.ng(*b) {
                    let g = acc(grads, *b, self.value(*b).shape()).data_mut();
                    for r in 0..rows {
                        let src = &dyd[r * (ca + cb) + ca..(r + 1) * (ca + cb)];
                        for (gi, &d) in g[r * cb..(r + 1) * cb].iter_mut().zip(src) {
                            *gi += d;
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.ng(v) {
                        acc(grads, v, dy.shape()).add_assign(dy);
                    }
                }
            }
            Op::Sub { a, b } => {
                if self.ng(*a) {
                    acc(grads, *a, dy.shape()).add_assign(dy);
                }
                if self.ng(*b) {
                    let g = acc(grads, *b, dy.shape()).data_mut();
                    for (gi, &d) in g.iter_mut().zip(dyd) {
                        *gi -= d;
                    }
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let g = acc(grads, *a, dy.shape()).data_mut();
                    for ((gi, &d), &o) in g.iter_mut().zip(dyd).zip(bv.data()) {
                        *gi += d * o;
                    }
                }
                if self.ng(*b) {
                    let g = acc(grads, *b, dy.shape()).data_mut();
                    for ((gi, &d), &o) in g.iter_mut().zip(dyd).zip(av.data()) {
                        *gi += d * o;
                    }
                }
            }
            Op::Scale { x, c } => {
                if self.ng(*x) {
                    let g = acc(grads, *x, dy.shape()).data_mut();
                    for (gi, &d) in g.iter_mut().zip(dyd) {
                        *gi += d * *c;
                    }
                }
            }
            Op::SumAll { x } => {
                if self.ng(*x) {
                    let xs = self.value(*x).shape();
                    let d = dyd[0];
                    for gi in acc(grads, *x, xs).data_mut() {
                        *gi += d;
                    }
                }
            }
            Op::RowNorm { x } => {
                if self.ng(*x) {
                    let xv = self.value(*x);
                    let c = xv.last_dim();
                    let norms = node.value.data();
                    let g = acc(grads, *x, xv.shape()).data_mut();
                    for r in 0..norms.len() {
                        // Subgradient 0 at the origin.
                        if norms[r] > T::zero() {
                            let s = dyd[r] / norms[r];
                            for j in r * c..(r + 1) * c {
                                g[j] += s * xv.data()[j];
                            }
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if self.ng(*x) {
                    let g = acc(grads, *x, self.value(*x).shape()).data_mut();
                    for (gi, &d) in g.iter_mut().zip(dyd) {
                        *gi += d;
                    }
                }
            }
        }
    }
}

fn acc<'g, T: Scalar>(grads: &'g mut [Option<Tensor<T>>], v: Var, shape: &[usize]) -> &'g mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Linear { .. } => "linear",
        Op::LeakyRelu { .. } => "leaky_relu",
        Op::Softmax { .. } => "softmax",
        Op::MaxReduce { .. } => "max_reduce",
        Op::SumReduce { .. } => "sum_reduce",
        Op::Gather { .. } => "gather_rows",
        Op::Concat { .. } => "concat_lastdim",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::Scale { .. } => "scale",
        Op::SumAll { .. } => "sum_all",
        Op::RowNorm { .. } => "row_norm",
        Op::Reshape { .. } => "reshape",
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`, or `None` when `v` does not require one or is unreachable.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v` with unreachable values reported as zeros.
    pub fn get_or_zeros(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
    }

    /// One gradient per parameter of `store`; parameters the tape never touched get zeros.
    pub fn for_params(&self, tape: &Tape<T>, store: &ParamStore<T>) -> GradMap<T> {
        let mut out = GradMap::new();
        for (name, p) in store.iter() {
            let g = match tape.params.get(name) {
                Some(&v) => self.get_or_zeros(tape, v),
                None => Tensor::zeros(p.value.shape()),
            };
            out.insert(name.clone(), g);
        }
        out
    }
}
