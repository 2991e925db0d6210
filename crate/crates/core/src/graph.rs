//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Trainable
//! weights live in a [`ParamStore`] that outlives the graph; binding a
//! parameter into a graph copies its current value into a leaf node that
//! remembers where it came from, so [`ParamStore::accumulate`] can route
//! the gradient back after [`Graph::backward`].
//!
//! ```
//! use sgbnet_core::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let w = g.leaf(Tensor::scalar(3.0));
//! let y = g.mul(w, w).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.wrt(w).data(), &[6.0]);
//! ```

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::ops::{self, ConvGeometry, CropResizePlan};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Handle to a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeometry },
    ConvTranspose2d { x: Var, w: Var, b: Var, geom: ConvGeometry },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Abs(Var),
    LogSigmoid { x: Var, floor: f64 },
    Concat(Vec<Var>),
    ChannelMean(Var),
    BroadcastChannel(Var),
    InstanceNorm { x: Var, inv_std: Vec<f64> },
    Sum(Var),
    Mean(Var),
    BroadcastScalar(Var),
    SpatialMean(Var),
    Reshape(Var),
    Gram(Var),
    MaskedTv { x: Var, mask: Tensor },
    CropResize { x: Var, plan: CropResizePlan },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<(u64, ParamId)>,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar w.r.t. every node of a graph.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient w.r.t. `v`; zero when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn accumulate(slot: &mut Option<Tensor>, t: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += b;
            }
        }
        None => *slot = Some(t),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a stored parameter. Frozen views produce constants.
    pub fn param(&mut self, view: ParamView<'_>, id: ParamId) -> Var {
        let value = view.store.get(id).clone();
        if view.trainable {
            let v = self.push(value, Op::Leaf, true);
            self.nodes[v.0].param = Some((view.store.tag, id));
            v
        } else {
            self.constant(value)
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let geom = ConvGeometry::conv(xv, wv, bv, stride, pad)?;
        let out = ops::conv2d(xv, wv, bv, stride, pad)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, rg))
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let geom = ConvGeometry::transpose(xv, wv, bv, stride, pad)?;
        let out = ops::conv_transpose2d(xv, wv, bv, stride, pad)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::ConvTranspose2d { x, w, b, geom }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = ops::sigmoid(self.value(a));
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = ops::leaky_relu(self.value(a), slope);
        let rg = self.rg(a);
        self.push(out, Op::LeakyRelu(a, slope), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        let rg = self.rg(a);
        self.push(out, Op::Abs(a), rg)
    }

    /// `max(ln σ(x), ln floor)` element-wise.
    pub fn log_sigmoid(&mut self, a: Var, floor: f64) -> Var {
        let lf = floor.ln();
        let out = self.value(a).map(|x| ops::log_sigmoid(x).max(lf));
        let rg = self.rg(a);
        self.push(out, Op::LogSigmoid { x: a, floor }, rg)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ops::concat_channels(&values)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    pub fn channel_mean(&mut self, a: Var) -> Result<Var> {
        let out = ops::channel_mean(self.value(a))?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::ChannelMean(a), rg))
    }

    pub fn broadcast_channel(&mut self, a: Var, k: usize) -> Result<Var> {
        let out = ops::broadcast_channel(self.value(a), k)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::BroadcastChannel(a), rg))
    }

    /// Per-sample, per-channel standardization `(x − μ_c) / sqrt(σ_c² + ε)`.
    pub fn instance_norm(&mut self, a: Var, epsilon: f64) -> Result<Var> {
        let (out, inv_std) = ops::instance_normalize(self.value(a), epsilon)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::InstanceNorm { x: a, inv_std }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg)
    }

    /// Expands a single-element tensor to `shape`.
    pub fn broadcast_scalar(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let s = self.value(a).item()?;
        let out = Tensor::full(shape.to_vec(), s);
        let rg = self.rg(a);
        Ok(self.push(out, Op::BroadcastScalar(a), rg))
    }

    pub fn spatial_mean(&mut self, a: Var) -> Result<Var> {
        let out = ops::spatial_mean(self.value(a))?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SpatialMean(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape.to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn gram(&mut self, a: Var) -> Result<Var> {
        let out = ops::gram(self.value(a))?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Gram(a), rg))
    }

    /// Sum of absolute horizontal and vertical forward differences over
    /// pixel pairs whose both endpoints have `mask == 1`, divided by the
    /// element count of `a`. `mask` is `[N, 1, H, W]`.
    pub fn masked_tv(&mut self, a: Var, mask: &Tensor) -> Result<Var> {
        let x = self.value(a);
        let (n, c, h, w) = x.dims4()?;
        if mask.shape() != [n, 1, h, w] {
            return Err(Error::shape(format!("tv mask {:?} does not match image {:?}", mask.shape(), x.shape())));
        }
        let mut total = 0.0;
        for_each_tv_pair(n, c, h, w, mask, |i, j| total += (x.data()[j] - x.data()[i]).abs());
        let out = Tensor::scalar(total / x.len() as f64);
        let rg = self.rg(a);
        Ok(self.push(out, Op::MaskedTv { x: a, mask: mask.clone() }, rg))
    }

    pub fn crop_resize(&mut self, a: Var, plan: CropResizePlan) -> Result<Var> {
        let out = plan.apply(self.value(a))?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::CropResize { x: a, plan }, rg))
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_val = &self.nodes[output.0].value;
        if out_val.len() != 1 {
            return Err(Error::shape(format!("backward needs a scalar output, got shape {:?}", out_val.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::ones(out_val.shape().to_vec()));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect() })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut send = |v: Var, t: Tensor| {
            if self.nodes[v.0].requires_grad {
                accumulate(&mut grads[v.0], t);
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (gx, gw, gb) = ops::conv2d_backward(geom, val(*x), val(*w), g);
                send(*x, gx);
                send(*w, gw);
                send(*b, gb);
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let (gx, gw, gb) = ops::conv_transpose2d_backward(geom, val(*x), val(*w), g);
                send(*x, gx);
                send(*w, gw);
                send(*b, gb);
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                send(*a, g.zip_map(val(*b), |gv, bv| gv * bv).expect("same shape"));
                send(*b, g.zip_map(val(*a), |gv, av| gv * av).expect("same shape"));
            }
            Op::Scale(a, s) => send(*a, g.map(|v| v * s)),
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::Sigmoid(a) => {
                send(*a, g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y)).expect("same shape"));
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                send(*a, g.zip_map(val(*a), |gv, x| if x > 0.0 { gv } else { s * gv }).expect("same shape"));
            }
            Op::Abs(a) => {
                send(
                    *a,
                    g.zip_map(val(*a), |gv, x| {
                        if x > 0.0 {
                            gv
                        } else if x < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })
                    .expect("same shape"),
                );
            }
            Op::LogSigmoid { x, floor } => {
                let lf = floor.ln();
                send(
                    *x,
                    g.zip_map(
                        val(*x),
                        |gv, xv| {
                            if ops::log_sigmoid(xv) > lf {
                                gv * ops::sigmoid_scalar(-xv)
                            } else {
                                0.0
                            }
                        },
                    )
                    .expect("same shape"),
                );
            }
            Op::Concat(parts) => {
                let counts: Vec<usize> = parts.iter().map(|&p| val(p).shape()[1]).collect();
                for (p, t) in parts.iter().zip(ops::split_channels(g, &counts)) {
                    send(*p, t);
                }
            }
            Op::ChannelMean(a) => {
                let c = val(*a).shape()[1];
                let t = ops::broadcast_channel(g, c).expect("1-channel gradient");
                send(*a, t.map(|v| v / c as f64));
            }
            Op::BroadcastChannel(a) => {
                send(*a, ops::channel_mean(g).expect("4-D").map(|v| v * g.shape()[1] as f64));
            }
            Op::InstanceNorm { x, inv_std } => send(*x, instance_norm_backward(&node.value, inv_std, g)),
            Op::Sum(a) => send(*a, Tensor::full(val(*a).shape().to_vec(), g.data()[0])),
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                send(*a, Tensor::full(val(*a).shape().to_vec(), g.data()[0] / n));
            }
            Op::BroadcastScalar(a) => send(*a, Tensor::scalar(g.sum())),
            Op::SpatialMean(a) => {
                let x = val(*a);
                let (_, _, h, w) = x.dims4().expect("4-D");
                let plane = h * w;
                let inv = 1.0 / plane as f64;
                let data = g.data().iter().flat_map(|&gv| std::iter::repeat_n(gv * inv, plane)).collect();
                send(*a, Tensor::new(x.shape(), data).expect("shape preserved"));
            }
            Op::Reshape(a) => send(*a, g.reshape(val(*a).shape().to_vec()).expect("same size")),
            Op::Gram(a) => send(*a, gram_backward(val(*a), g)),
            Op::MaskedTv { x, mask } => {
                let xv = val(*x);
                let (n, c, h, w) = xv.dims4().expect("4-D");
                let scale = g.data()[0] / xv.len() as f64;
                let mut gx = vec![0.0; xv.len()];
                for_each_tv_pair(n, c, h, w, mask, |i, j| {
                    let d = xv.data()[j] - xv.data()[i];
                    let s = if d > 0.0 {
                        scale
                    } else if d < 0.0 {
                        -scale
                    } else {
                        0.0
                    };
                    gx[j] += s;
                    gx[i] -= s;
                });
                send(*x, Tensor::new(xv.shape(), gx).expect("shape preserved"));
            }
            Op::CropResize { x, plan } => send(*x, plan.adjoint(g)),
        }
    }
}

/// Visits `(from, to)` flat indices of horizontal then vertical neighbour
/// pairs that lie entirely inside the mask.
fn for_each_tv_pair(n: usize, c: usize, h: usize, w: usize, mask: &Tensor, mut f: impl FnMut(usize, usize)) {
    let m = mask.data();
    let plane = h * w;
    for b in 0..n {
        let mb = &m[b * plane..][..plane];
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            for y in 0..h {
                for x in 0..w.saturating_sub(1) {
                    if mb[y * w + x] == 1.0 && mb[y * w + x + 1] == 1.0 {
                        f(base + y * w + x, base + y * w + x + 1);
                    }
                }
            }
            for y in 0..h.saturating_sub(1) {
                for x in 0..w {
                    if mb[y * w + x] == 1.0 && mb[(y + 1) * w + x] == 1.0 {
                        f(base + y * w + x, base + (y + 1) * w + x);
                    }
                }
            }
        }
    }
}

fn instance_norm_backward(y: &Tensor, inv_std: &[f64], g: &Tensor) -> Tensor {
    let (_, _, h, w) = y.dims4().expect("4-D");
    let plane = h * w;
    let inv_n = 1.0 / plane as f64;
    let mut out = Vec::with_capacity(y.len());
    for ((yp, gp), &inv) in y.data().chunks_exact(plane).zip(g.data().chunks_exact(plane)).zip(inv_std) {
        let mean_g = gp.iter().sum::<f64>() * inv_n;
        let mean_gy = gp.iter().zip(yp).map(|(a, b)| a * b).sum::<f64>() * inv_n;
        out.extend(gp.iter().zip(yp).map(|(gv, yv)| inv * (gv - mean_g - yv * mean_gy)));
    }
    Tensor::new(y.shape(), out).expect("shape preserved")
}

fn gram_backward(a: &Tensor, g: &Tensor) -> Tensor {
    let (n, c, h, w) = a.dims4().expect("4-D");
    let plane = h * w;
    let norm = 1.0 / (c * plane) as f64;
    let mut out = vec![0.0; a.len()];
    for b in 0..n {
        let av = &a.data()[b * c * plane..][..c * plane];
        let gv = &g.data()[b * c * c..][..c * c];
        let dst = &mut out[b * c * plane..][..c * plane];
        for i in 0..c {
            for j in 0..c {
                let coef = (gv[i * c + j] + gv[j * c + i]) * norm;
                if coef == 0.0 {
                    continue;
                }
                let rj = &av[j * plane..][..plane];
                for (d, r) in dst[i * plane..][..plane].iter_mut().zip(rj) {
                    *d += coef * r;
                }
            }
        }
    }
    Tensor::new(a.shape(), out).expect("shape preserved")
}

static NEXT_STORE_TAG: AtomicU64 = AtomicU64::new(1);

struct ParamEntry {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// Named trainable tensors with matching gradient accumulators.
pub struct ParamStore {
    tag: u64,
    entries: Vec<ParamEntry>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            tag: NEXT_STORE_TAG.fetch_add(1, Ordering::Relaxed),
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), value: e.value.clone(), grad: e.grad.clone() })
                .collect(),
        }
    }
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("params", &self.entries.len())
            .field("elements", &self.num_elements())
            .finish()
    }
}

/// A store bound either as trainable leaves or as frozen constants.
#[derive(Clone, Copy)]
pub struct ParamView<'a> {
    pub store: &'a ParamStore,
    pub trainable: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        Self { tag: NEXT_STORE_TAG.fetch_add(1, Ordering::Relaxed), entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        let grad = Tensor::zeros(value.shape().to_vec());
        self.entries.push(ParamEntry { name, value, grad });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn trainable(&self) -> ParamView<'_> {
        ParamView { store: self, trainable: true }
    }

    pub fn frozen(&self) -> ParamView<'_> {
        ParamView { store: self, trainable: false }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    /// Replaces a value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        self.entries[id.0].value.expect_same_shape(&value)?;
        self.entries[id.0].value = value;
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].grad
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(0.0);
        }
    }

    /// Adds the gradients of every node bound from this store.
    pub fn accumulate(&mut self, graph: &Graph, grads: &Gradients) {
        for (i, node) in graph.nodes.iter().enumerate() {
            if let Some((tag, id)) = node.param {
                if tag == self.tag {
                    if let Some(g) = &grads.grads[i] {
                        self.entries[id.0].grad.add_assign(g).expect("parameter shape");
                    }
                }
            }
        }
    }

    /// Runs [`Graph::backward`] and accumulates into this store.
    pub fn backward(&mut self, graph: &Graph, output: Var) -> Result<Gradients> {
        let grads = graph.backward(output)?;
        self.accumulate(graph, &grads);
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(3.0)).unwrap();
        let mut g = Graph::new();
        let wv = g.param(store.trainable(), w);
        let y = g.mul(wv, wv).unwrap();
        store.backward(&g, y).unwrap();
        assert_eq!(store.grad(w).data(), &[6.0]);
    }

    #[test]
    fn product_sum_gradient_is_other_operand() {
        let a = Tensor::from_fn([2, 3], |i| i as f64 - 1.5);
        let b = Tensor::from_fn([2, 3], |i| (i as f64).cos());
        let mut g = Graph::new();
        let av = g.leaf(a);
        let bv = g.constant(b.clone());
        let p = g.mul(av, bv).unwrap();
        let s = g.sum(p);
        assert_eq!(g.backward(s).unwrap().wrt(av), b);
    }

    #[test]
    fn unreachable_params_get_zero_and_calls_accumulate() {
        let mut store = ParamStore::new();
        let used = store.add("used", Tensor::scalar(2.0)).unwrap();
        let unused = store.add("unused", Tensor::full([2, 2], 1.0)).unwrap();
        for _ in 0..2 {
            let mut g = Graph::new();
            let u = g.param(store.trainable(), used);
            let _ = g.param(store.trainable(), unused);
            let y = g.scale(u, 5.0);
            store.backward(&g, y).unwrap();
        }
        assert_eq!(store.grad(used).data(), &[10.0]);
        assert_eq!(store.grad(unused), &Tensor::zeros([2, 2]));
        store.zero_grad();
        assert_eq!(store.grad(used).data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros([2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn frozen_view_blocks_gradients() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(3.0)).unwrap();
        let mut g = Graph::new();
        let wv = g.param(store.frozen(), w);
        let x = g.leaf(Tensor::scalar(2.0));
        let y = g.mul(wv, x).unwrap();
        let grads = store.backward(&g, y).unwrap();
        assert_eq!(store.grad(w).data(), &[0.0]);
        assert_eq!(grads.wrt(x).data(), &[3.0]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::scalar(0.0)).unwrap();
        assert!(store.add("a", Tensor::scalar(1.0)).is_err());
    }

    #[test]
    fn separate_stores_do_not_mix() {
        let mut s1 = ParamStore::new();
        let mut s2 = ParamStore::new();
        let a = s1.add("p", Tensor::scalar(2.0)).unwrap();
        let b = s2.add("p", Tensor::scalar(7.0)).unwrap();
        let mut g = Graph::new();
        let av = g.param(s1.trainable(), a);
        let bv = g.param(s2.trainable(), b);
        let y = g.mul(av, bv).unwrap();
        let grads = g.backward(y).unwrap();
        s1.accumulate(&g, &grads);
        s2.accumulate(&g, &grads);
        assert_eq!(s1.grad(a).data(), &[7.0]);
        assert_eq!(s2.grad(b).data(), &[2.0]);
    }
}
