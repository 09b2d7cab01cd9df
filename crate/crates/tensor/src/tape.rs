//! Reverse-mode autodiff tape.
//!
//! Every forward op appends a node holding its output value and enough
//! bookkeeping to push gradients back to its inputs. Node order is a valid
//! topological order, so backward is a single reverse sweep.

use std::rc::Rc;

use crate::conv::{self, ConvSpec};
use crate::error::{Result, TensorError};
use crate::param::{ParamId, ParamStore};
use crate::resize::{ResizePlan, Scale};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf { param: Option<ParamId> },
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Reshape(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    Conv1d { x: Var, w: Var },
    Resize { x: Var, plan: Rc<ResizePlan<T>> },
    GlobalAvgPool(Var),
    ChannelMean(Var),
    ChannelVar(Var),
    Concat(Vec<Var>),
    MulChannel { x: Var, mask: Var },
    MulSpatial { x: Var, mask: Var },
    L1 { pred: Var, target: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Single-threaded recording context for one forward/backward pass.
#[derive(Debug)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(TensorError::shape(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Result<Var> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if !matches!(op, Op::Leaf { .. }) {
            // Intermediate values never carry their own grad buffer.
            value.set_requires_grad(false);
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a leaf after [`backward`](Self::backward).
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor<T>) -> Result<Var> {
        t.set_requires_grad(false);
        self.push(t, Op::Leaf { param: None }, false)
    }

    /// Leaf that receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Result<Var> {
        let needs = t.requires_grad();
        self.push(t, Op::Leaf { param: None }, needs)
    }

    /// Records a snapshot of a stored parameter.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        let mut value = store.get(id).value.clone();
        value.set_requires_grad(false);
        self.push(value, Op::Leaf { param: Some(id) }, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let (va, vb) = (&self.node(a).value, &self.node(b).value);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(&[a, b]);
        self.push(out, Op::Add(a, b), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let (va, vb) = (&self.node(a).value, &self.node(b).value);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(&[a, b]);
        self.push(out, Op::Mul(a, b), needs)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().fold(T::zero(), |a, &v| a + v);
        let needs = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).reshaped(shape)?;
        let needs = self.needs(&[x]);
        self.push(out, Op::Reshape(x), needs)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let vx = self.value(x);
        let out = Tensor::new(vx.shape().to_vec(), vx.data().iter().map(|&v| f(v)).collect())?;
        let needs = self.needs(&[x]);
        self.push(out, op, needs)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        // Saturated values stay strictly inside (-1, 1).
        let lim = T::one() - T::epsilon() / (T::one() + T::one());
        let squash = move |v: T| {
            let t = v.tanh();
            if t > lim {
                lim
            } else if t < -lim {
                -lim
            } else {
                t
            }
        };
        self.unary(x, squash, Op::Tanh(x))
    }

    /// 2-D cross-correlation, `x: [N, Cin, H, W]`, `w: [Cout, Cin, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out_shape = conv::check_conv2d(
            self.shape(x),
            self.shape(w),
            b.map(|b| self.shape(b)),
            &spec,
        )?;
        let xv = self.value(x);
        let x_shape = [xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]];
        let data = conv::conv2d_forward(
            xv.data(),
            x_shape,
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &spec,
            out_shape,
        );
        let out = Tensor::new(out_shape.to_vec(), data)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let needs = self.needs(&deps);
        self.push(out, Op::Conv2d { x, w, b, spec }, needs)
    }

    /// Length-preserving 1-D correlation along the last axis (`[N, 1, C]`),
    /// zero padded by `(k - 1) / 2`; `w` holds the `k` taps.
    pub fn conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        let k = self.value(w).numel();
        if k % 2 == 0 || self.shape(w).len() != 1 {
            return Err(TensorError::Config(format!(
                "conv1d kernel must be a 1-D odd-length tensor, got shape {:?}",
                self.shape(w)
            )));
        }
        let shape = self.shape(x).to_vec();
        let len = *shape
            .last()
            .ok_or_else(|| TensorError::shape("conv1d", "scalar input"))?;
        let data = conv::conv1d_forward(self.value(x).data(), len, self.value(w).data());
        let out = Tensor::new(shape, data)?;
        let needs = self.needs(&[x, w]);
        self.push(out, Op::Conv1d { x, w }, needs)
    }

    pub fn bicubic_resize(&mut self, x: Var, scale: Scale) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let plan = Rc::new(ResizePlan::new(h, w, scale)?);
        let data = plan.forward(self.value(x).data(), n * c);
        let out = Tensor::new(vec![n, c, plan.out_h, plan.out_w], data)?;
        let needs = self.needs(&[x]);
        self.push(out, Op::Resize { x, plan }, needs)
    }

    /// Spatial mean per channel: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let inv = T::one() / T::of(hw as f64);
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().fold(T::zero(), |a, &v| a + v) * inv)
            .collect();
        let out = Tensor::new(vec![n, c], data)?;
        let needs = self.needs(&[x]);
        self.push(out, Op::GlobalAvgPool(x), needs)
    }

    /// Per-pixel mean across channels: `[N, C, H, W] -> [N, 1, H, W]`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let data = channel_mean(self.value(x).data(), n, c, h * w);
        let out = Tensor::new(vec![n, 1, h, w], data)?;
        let needs = self.needs(&[x]);
        self.push(out, Op::ChannelMean(x), needs)
    }

    /// Per-pixel population variance across channels (divisor `C`):
    /// `[N, C, H, W] -> [N, 1, H, W]`.
    pub fn global_var_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let data = channel_stats(self.value(x).data(), n, c, h * w).1;
        let out = Tensor::new(vec![n, 1, h, w], data)?;
        let needs = self.needs(&[x]);
        self.push(out, Op::ChannelVar(x), needs)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::shape("concat_channels", "no inputs"))?;
        let (n, _, h, w) = self.value(first).dims4()?;
        let mut total_c = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(TensorError::shape(
                    "concat_channels",
                    format!("{:?} vs {:?}", self.shape(first), self.shape(p)),
                ));
            }
            total_c += pc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * total_c * hw);
        for b in 0..n {
            for &p in parts {
                let pc = self.shape(p)[1];
                data.extend_from_slice(&self.value(p).data()[b * pc * hw..(b + 1) * pc * hw]);
            }
        }
        let out = Tensor::new(vec![n, total_c, h, w], data)?;
        let needs = self.needs(parts);
        self.push(out, Op::Concat(parts.to_vec()), needs)
    }

    /// `x[n, c, :, :] * mask[n, c]`.
    pub fn mul_channel(&mut self, x: Var, mask: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let ms = self.shape(mask);
        if ms != [n, c] && ms != [n, 1, c] {
            return Err(TensorError::shape(
                "broadcast_mul_channel",
                format!("mask {ms:?} does not broadcast over {:?}", self.shape(x)),
            ));
        }
        let hw = h * w;
        let m = self.value(mask).data();
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .zip(m)
            .flat_map(|(plane, &s)| plane.iter().map(move |&v| v * s))
            .collect();
        let out = Tensor::new(vec![n, c, h, w], data)?;
        let needs = self.needs(&[x, mask]);
        self.push(out, Op::MulChannel { x, mask }, needs)
    }

    /// `x[n, c, i, j] * mask[n, 0, i, j]`.
    pub fn mul_spatial(&mut self, x: Var, mask: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.shape(mask) != [n, 1, h, w] {
            return Err(TensorError::shape(
                "broadcast_mul_spatial",
                format!("mask {:?} does not broadcast over {:?}", self.shape(mask), self.shape(x)),
            ));
        }
        let hw = h * w;
        let m = self.value(mask).data();
        let mut data = Vec::with_capacity(n * c * hw);
        for (i, plane) in self.value(x).data().chunks(hw).enumerate() {
            let mb = &m[(i / c) * hw..(i / c + 1) * hw];
            data.extend(plane.iter().zip(mb).map(|(&v, &s)| v * s));
        }
        let out = Tensor::new(vec![n, c, h, w], data)?;
        let needs = self.needs(&[x, mask]);
        self.push(out, Op::MulSpatial { x, mask }, needs)
    }

    /// Mean absolute error over every element of the batch.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        same_shape("l1_loss", self.shape(pred), self.shape(target))?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let total = p.iter().zip(t).fold(T::zero(), |a, (&x, &y)| a + (x - y).abs());
        let loss = total / T::of(p.len() as f64);
        let needs = self.needs(&[pred, target]);
        self.push(Tensor::scalar(loss), Op::L1 { pred, target }, needs)
    }

    /// Back-propagates from a scalar loss into every reachable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_impl(loss, None)
    }

    /// Like [`backward`](Self::backward), additionally accumulating parameter
    /// gradients into `params`.
    pub fn backward_into(&mut self, loss: Var, params: &mut ParamStore<T>) -> Result<()> {
        self.backward_impl(loss, Some(params))
    }

    fn backward_impl(&mut self, loss: Var, mut params: Option<&mut ParamStore<T>>) -> Result<()> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if let Op::Leaf { param } = self.nodes[i].op {
                if let (Some(id), Some(store)) = (param, params.as_deref_mut()) {
                    store.get_mut(id).value.accumulate_grad(&g);
                }
                self.nodes[i].value.accumulate_grad(&g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let mut acc = |v: Var, delta: &[T]| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match grads[v.0].as_mut() {
                Some(buf) => add_into(buf, delta),
                None => grads[v.0] = Some(delta.to_vec()),
            }
        };
        let val = |v: Var| nodes[v.0].value.data();
        let needs = |v: Var| nodes[v.0].needs_grad;
        match &nodes[i].op {
            Op::Leaf { .. } => unreachable!("leaves handled by caller"),
            Op::Add(a, b) => {
                acc(*a, g);
                acc(*b, g);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if needs(*a) {
                    acc(*a, &g.iter().zip(vb).map(|(&g, &y)| g * y).collect::<Vec<_>>());
                }
                if needs(*b) {
                    acc(*b, &g.iter().zip(va).map(|(&g, &x)| g * x).collect::<Vec<_>>());
                }
            }
            Op::Sum(x) => acc(*x, &vec![g[0]; val(*x).len()]),
            Op::Reshape(x) => acc(*x, g),
            Op::Relu(x) => {
                let d: Vec<T> = g
                    .iter()
                    .zip(out.data())
                    .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                    .collect();
                acc(*x, &d);
            }
            Op::Sigmoid(x) => {
                let d: Vec<T> = g
                    .iter()
                    .zip(out.data())
                    .map(|(&g, &y)| g * y * (T::one() - y))
                    .collect();
                acc(*x, &d);
            }
            Op::Tanh(x) => {
                let d: Vec<T> = g
                    .iter()
                    .zip(out.data())
                    .map(|(&g, &y)| g * (T::one() - y * y))
                    .collect();
                acc(*x, &d);
            }
            Op::Conv2d { x, w, b, spec } => {
                let xs = nodes[x.0].value.shape();
                let os = out.shape();
                let grads_c = conv::conv2d_backward(
                    val(*x),
                    [xs[0], xs[1], xs[2], xs[3]],
                    val(*w),
                    g,
                    [os[0], os[1], os[2], os[3]],
                    spec,
                    (needs(*x), needs(*w), b.is_some_and(needs)),
                );
                if let Some(dx) = grads_c.dx {
                    acc(*x, &dx);
                }
                if let Some(dw) = grads_c.dw {
                    acc(*w, &dw);
                }
                if let (Some(b), Some(db)) = (b, grads_c.db) {
                    acc(*b, &db);
                }
            }
            Op::Conv1d { x, w } => {
                let len = *out.shape().last().expect("conv1d output rank");
                let (dx, dw) = conv::conv1d_backward(val(*x), len, val(*w), g);
                acc(*x, &dx);
                acc(*w, &dw);
            }
            Op::Resize { x, plan } => {
                let s = nodes[x.0].value.shape();
                acc(*x, &plan.backward(g, s[0] * s[1]));
            }
            Op::GlobalAvgPool(x) => {
                let s = nodes[x.0].value.shape();
                let hw = s[2] * s[3];
                let inv = T::one() / T::of(hw as f64);
                let d: Vec<T> = g.iter().flat_map(|&gv| std::iter::repeat_n(gv * inv, hw)).collect();
                acc(*x, &d);
            }
            Op::ChannelMean(x) => {
                let s = nodes[x.0].value.shape();
                let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                let inv = T::one() / T::of(c as f64);
                let mut d = vec![T::zero(); n * c * hw];
                for b in 0..n {
                    let gb = &g[b * hw..(b + 1) * hw];
                    for ch in 0..c {
                        let dst = &mut d[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                        dst.iter_mut().zip(gb).for_each(|(o, &gv)| *o = gv * inv);
                    }
                }
                acc(*x, &d);
            }
            Op::ChannelVar(x) => {
                let s = nodes[x.0].value.shape();
                let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                let xv = val(*x);
                let mean = channel_stats(xv, n, c, hw).0;
                // d var / d x_c = 2 (x_c - mean) / C
                let two_over_c = T::of(2.0) / T::of(c as f64);
                let mut d = vec![T::zero(); n * c * hw];
                for b in 0..n {
                    let gb = &g[b * hw..(b + 1) * hw];
                    let mb = &mean[b * hw..(b + 1) * hw];
                    for ch in 0..c {
                        let off = (b * c + ch) * hw;
                        for p in 0..hw {
                            d[off + p] = gb[p] * two_over_c * (xv[off + p] - mb[p]);
                        }
                    }
                }
                acc(*x, &d);
            }
            Op::Concat(parts) => {
                let s = out.shape();
                let (n, total_c, hw) = (s[0], s[1], s[2] * s[3]);
                let mut offset = 0;
                for &p in parts {
                    let pc = nodes[p.0].value.shape()[1];
                    if needs(p) {
                        let mut d = Vec::with_capacity(n * pc * hw);
                        for b in 0..n {
                            let start = (b * total_c + offset) * hw;
                            d.extend_from_slice(&g[start..start + pc * hw]);
                        }
                        acc(p, &d);
                    }
                    offset += pc;
                }
            }
            Op::MulChannel { x, mask } => {
                let s = nodes[x.0].value.shape();
                let hw = s[2] * s[3];
                let (xv, mv) = (val(*x), val(*mask));
                if needs(*x) {
                    let d: Vec<T> = g
                        .chunks(hw)
                        .zip(mv)
                        .flat_map(|(gp, &m)| gp.iter().map(move |&gv| gv * m))
                        .collect();
                    acc(*x, &d);
                }
                if needs(*mask) {
                    let d: Vec<T> = g
                        .chunks(hw)
                        .zip(xv.chunks(hw))
                        .map(|(gp, xp)| gp.iter().zip(xp).fold(T::zero(), |a, (&gv, &xv)| a + gv * xv))
                        .collect();
                    acc(*mask, &d);
                }
            }
            Op::MulSpatial { x, mask } => {
                let s = nodes[x.0].value.shape();
                let (c, hw) = (s[1], s[2] * s[3]);
                let (xv, mv) = (val(*x), val(*mask));
                if needs(*x) {
                    let mut d = vec![T::zero(); g.len()];
                    for (i, (dp, gp)) in d.chunks_mut(hw).zip(g.chunks(hw)).enumerate() {
                        let mb = &mv[(i / c) * hw..(i / c + 1) * hw];
                        for ((o, &gv), &m) in dp.iter_mut().zip(gp).zip(mb) {
                            *o = gv * m;
                        }
                    }
                    acc(*x, &d);
                }
                if needs(*mask) {
                    let mut d = vec![T::zero(); mv.len()];
                    for (i, (gp, xp)) in g.chunks(hw).zip(xv.chunks(hw)).enumerate() {
                        let db = &mut d[(i / c) * hw..(i / c + 1) * hw];
                        for ((o, &gv), &xv) in db.iter_mut().zip(gp).zip(xp) {
                            *o = *o + gv * xv;
                        }
                    }
                    acc(*mask, &d);
                }
            }
            Op::L1 { pred, target } => {
                let (p, t) = (val(*pred), val(*target));
                let scale = g[0] / T::of(p.len() as f64);
                let d: Vec<T> = p
                    .iter()
                    .zip(t)
                    .map(|(&a, &b)| {
                        if a > b {
                            scale
                        } else if a < b {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if needs(*target) {
                    acc(*target, &d.iter().map(|&v| -v).collect::<Vec<_>>());
                }
                acc(*pred, &d);
            }
        }
    }
}

/// Per-pixel channel mean and population variance.
///
/// Deviations are taken relative to channel 0 first, so a pixel whose
/// channels are all equal yields exactly zero variance.
fn channel_stats<T: Scalar>(x: &[T], n: usize, c: usize, hw: usize) -> (Vec<T>, Vec<T>) {
    let inv = T::one() / T::of(c as f64);
    let mut mean = vec![T::zero(); n * hw];
    let mut var = vec![T::zero(); n * hw];
    for b in 0..n {
        let base = &x[b * c * hw..(b * c + 1) * hw];
        let mb = &mut mean[b * hw..(b + 1) * hw];
        for ch in 1..c {
            let plane = &x[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            for ((m, &xv), &x0) in mb.iter_mut().zip(plane).zip(base) {
                *m = *m + (xv - x0);
            }
        }
        // mb holds the mean offset from channel 0 for now.
        mb.iter_mut().for_each(|m| *m = *m * inv);
        let vb = &mut var[b * hw..(b + 1) * hw];
        for ch in 0..c {
            let plane = &x[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            for (((v, &xv), &x0), &m) in vb.iter_mut().zip(plane).zip(base).zip(mb.iter()) {
                let d = (xv - x0) - m;
                *v = *v + d * d;
            }
        }
        vb.iter_mut().for_each(|v| *v = *v * inv);
        for (m, &x0) in mb.iter_mut().zip(base) {
            *m = x0 + *m;
        }
    }
    (mean, var)
}

fn channel_mean<T: Scalar>(x: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let inv = T::one() / T::of(c as f64);
    let mut mean = vec![T::zero(); n * hw];
    for b in 0..n {
        let mb = &mut mean[b * hw..(b + 1) * hw];
        for ch in 0..c {
            add_into(mb, &x[(b * c + ch) * hw..(b * c + ch + 1) * hw]);
        }
        mb.iter_mut().for_each(|m| *m = *m * inv);
    }
    mean
}
