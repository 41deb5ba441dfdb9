//! Recorded-operation reverse-mode differentiation.
//!
//! A [`Graph`] owns every intermediate [`Tensor`]. Each operation appends a
//! node holding its value and the handles of its inputs; [`Graph::backward`]
//! walks the nodes in reverse insertion order, which is a valid reverse
//! topological order because inputs always precede their consumers.

use super::kernels::{axpy, dot};
use super::{NnError, Result, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Linear {
        x: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Column {
        fmap: Var,
        t: usize,
    },
    Stack(Vec<Var>),
    LogSoftmax(Var),
    /// Scalar whose gradient w.r.t. `input` was computed when it was recorded.
    External {
        input: Var,
        grad: Vec<f64>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
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

    /// Trainable leaf; receives a gradient on backward.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn vals(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.values()
    }

    /// Cross-correlation of `x [N, Cin, H, W]` with `kernel [Cout, Cin, kH, kW]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = dims4(self.shape(x), "conv2d input")?;
        let ks = dims4(self.shape(kernel), "conv2d kernel")?;
        let geom = ConvGeom::new(xs, ks, stride, padding)?;
        if self.shape(bias) != [ks[0]] {
            return Err(NnError::ShapeMismatch(format!(
                "conv2d bias shape {:?}, expected [{}]",
                self.shape(bias),
                ks[0]
            )));
        }
        let out = geom.forward(self.vals(x), self.vals(kernel), self.vals(bias));
        let value = Tensor::new(vec![geom.n, geom.cout, geom.oh, geom.ow], out)?;
        let rg = self.needs(&[x, kernel, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    /// Max pooling over `[N, C, H, W]` with first-index tie-breaking.
    pub fn maxpool2d(
        &mut self,
        x: Var,
        window: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Var> {
        let [n, c, h, w] = dims4(self.shape(x), "maxpool2d input")?;
        let (wh, ww) = window;
        let (sh, sw) = stride;
        if wh == 0 || ww == 0 || sh == 0 || sw == 0 || wh > h || ww > w {
            return Err(NnError::ShapeMismatch(format!(
                "pool window {window:?} stride {stride:?} on {h}x{w}"
            )));
        }
        let oh = (h - wh) / sh + 1;
        let ow = (w - ww) / sw + 1;
        let src = self.vals(x);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + i * sh * w + j * sw;
                    for di in 0..wh {
                        for dj in 0..ww {
                            let idx = base + (i * sh + di) * w + j * sw + dj;
                            if src[idx] > src[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::MaxPool2d { x, argmax }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = &self.nodes[x.0].value;
        let value = Tensor::new(src.shape().to_vec(), src.values().iter().map(|&v| f(v)).collect())
            .expect("shape preserved");
        let rg = self.needs(&[x]);
        self.push(value, op, rg)
    }

    /// `x [N, K] · weightᵀ [K, M] + bias [M]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (n, k) = dims2(self.shape(x), "linear input")?;
        let (m, k2) = dims2(self.shape(weight), "linear weight")?;
        if k != k2 {
            return Err(NnError::ShapeMismatch(format!(
                "linear: input width {k} vs weight {m}x{k2}"
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [m] {
                return Err(NnError::ShapeMismatch(format!(
                    "linear bias shape {:?}, expected [{m}]",
                    self.shape(b)
                )));
            }
        }
        let xv = self.vals(x);
        let wv = self.vals(weight);
        let mut out = vec![0.0; n * m];
        for r in 0..n {
            let row = &xv[r * k..(r + 1) * k];
            for c in 0..m {
                out[r * m + c] = dot(row, &wv[c * k..(c + 1) * k]);
            }
        }
        if let Some(b) = bias {
            let bv = self.vals(b);
            for row in out.chunks_exact_mut(m) {
                for (o, bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        let mut deps = vec![x, weight];
        deps.extend(bias);
        let rg = self.needs(&deps);
        Ok(self.push(value, Op::Linear { x, weight, bias }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(NnError::ShapeMismatch(format!(
                "elementwise op on {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out = self
            .vals(a)
            .iter()
            .zip(self.vals(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    /// Concatenates `[N, K_i]` matrices along the second axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::ShapeMismatch("concat of nothing".into()))?;
        let (n, _) = dims2(self.shape(*first), "concat part")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pk) = dims2(self.shape(p), "concat part")?;
            if pn != n {
                return Err(NnError::ShapeMismatch(format!(
                    "concat rows {pn} vs {n}"
                )));
            }
            widths.push(pk);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&p, &k) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.vals(p)[r * k..(r + 1) * k]);
            }
        }
        let value = Tensor::new(vec![n, total], out)?;
        let rg = self.needs(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Column `t` of a `[N, C, H, W]` feature map as an `[N, C·H]` matrix,
    /// channel-major.
    pub fn column(&mut self, fmap: Var, t: usize) -> Result<Var> {
        let [n, c, h, w] = dims4(self.shape(fmap), "feature map")?;
        if t >= w {
            return Err(NnError::ShapeMismatch(format!("column {t} of width {w}")));
        }
        let src = self.vals(fmap);
        let mut out = Vec::with_capacity(n * c * h);
        for plane in 0..n * c {
            for row in 0..h {
                out.push(src[(plane * h + row) * w + t]);
            }
        }
        let value = Tensor::new(vec![n, c * h], out)?;
        let rg = self.needs(&[fmap]);
        Ok(self.push(value, Op::Column { fmap, t }, rg))
    }

    /// Stacks `T` frames of shape `[N, C]` into `[N, T, C]`.
    pub fn stack(&mut self, frames: &[Var]) -> Result<Var> {
        let first = frames.first().ok_or(NnError::EmptySequence)?;
        let (n, c) = dims2(self.shape(*first), "frame")?;
        for &f in frames {
            if self.shape(f) != [n, c] {
                return Err(NnError::ShapeMismatch(format!(
                    "frame shape {:?}, expected [{n}, {c}]",
                    self.shape(f)
                )));
            }
        }
        let t = frames.len();
        let mut out = vec![0.0; n * t * c];
        for (ti, &f) in frames.iter().enumerate() {
            let fv = self.vals(f);
            for r in 0..n {
                out[(r * t + ti) * c..(r * t + ti + 1) * c]
                    .copy_from_slice(&fv[r * c..(r + 1) * c]);
            }
        }
        let value = Tensor::new(vec![n, t, c], out)?;
        let rg = self.needs(frames);
        Ok(self.push(value, Op::Stack(frames.to_vec()), rg))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape
            .last()
            .ok_or_else(|| NnError::ShapeMismatch("log_softmax of a scalar".into()))?;
        let mut out = self.vals(x).to_vec();
        for row in out.chunks_exact_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let value = Tensor::new(shape, out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::LogSoftmax(x), rg))
    }

    /// Records a scalar computed outside the graph together with its
    /// gradient w.r.t. `input`.
    pub fn external_scalar(&mut self, input: Var, value: f64, grad: Vec<f64>) -> Result<Var> {
        if grad.len() != self.nodes[input.0].value.len() {
            return Err(NnError::ShapeMismatch(format!(
                "external gradient has {} entries for a tensor of {}",
                grad.len(),
                self.nodes[input.0].value.len()
            )));
        }
        let rg = self.needs(&[input]);
        Ok(self.push(Tensor::scalar(value), Op::External { input, grad }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.vals(x).iter().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Propagates gradients from the scalar `loss` to every node that
    /// depends on a parameter, storing them on the node tensors.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(NnError::NoRecordedGraph);
        }
        if self.backward_done {
            return Err(NnError::DoubleBackward);
        }
        if loss.0 >= self.nodes.len() || self.nodes[loss.0].value.len() != 1 {
            return Err(NnError::ShapeMismatch("backward needs a scalar loss".into()));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            self.nodes[i].value.set_grad(g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.values();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let xs = dims4(self.shape(*x), "").unwrap();
                let ks = dims4(self.shape(*kernel), "").unwrap();
                let geom = ConvGeom::new(xs, ks, *stride, *padding).unwrap();
                let (xv, kv) = (self.vals(*x), self.vals(*kernel));
                if self.needs(&[*bias]) {
                    let db = slot(grads, *bias, ks[0]);
                    let plane = geom.oh * geom.ow;
                    for (ci, chunk) in g.chunks_exact(plane).enumerate() {
                        db[ci % geom.cout] += chunk.iter().sum::<f64>();
                    }
                }
                if self.needs(&[*kernel]) {
                    let len = kv.len();
                    geom.kernel_grad(xv, g, slot(grads, *kernel, len));
                }
                if self.needs(&[*x]) {
                    let len = xv.len();
                    geom.input_grad(kv, g, slot(grads, *x, len));
                }
            }
            Op::MaxPool2d { x, argmax } => {
                let len = self.nodes[x.0].value.len();
                let dx = slot(grads, *x, len);
                for (&idx, &gv) in argmax.iter().zip(g) {
                    dx[idx] += gv;
                }
            }
            Op::Relu(x) => {
                let dx = slot(grads, *x, g.len());
                for ((d, &gv), &o) in dx.iter_mut().zip(g).zip(out) {
                    if o > 0.0 {
                        *d += gv;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let dx = slot(grads, *x, g.len());
                for ((d, &gv), &o) in dx.iter_mut().zip(g).zip(out) {
                    *d += gv * o * (1.0 - o);
                }
            }
            Op::Tanh(x) => {
                let dx = slot(grads, *x, g.len());
                for ((d, &gv), &o) in dx.iter_mut().zip(g).zip(out) {
                    *d += gv * (1.0 - o * o);
                }
            }
            Op::Linear { x, weight, bias } => {
                let (n, k) = dims2(self.shape(*x), "").unwrap();
                let m = self.shape(*weight)[0];
                let (xv, wv) = (self.vals(*x), self.vals(*weight));
                if let Some(b) = bias {
                    if self.needs(&[*b]) {
                        let db = slot(grads, *b, m);
                        for row in g.chunks_exact(m) {
                            for (d, gv) in db.iter_mut().zip(row) {
                                *d += gv;
                            }
                        }
                    }
                }
                if self.needs(&[*weight]) {
                    let dw = slot(grads, *weight, m * k);
                    for r in 0..n {
                        let xr = &xv[r * k..(r + 1) * k];
                        for c in 0..m {
                            let gv = g[r * m + c];
                            if gv != 0.0 {
                                axpy(gv, xr, &mut dw[c * k..(c + 1) * k]);
                            }
                        }
                    }
                }
                if self.needs(&[*x]) {
                    let dx = slot(grads, *x, n * k);
                    for r in 0..n {
                        let dxr = &mut dx[r * k..(r + 1) * k];
                        for c in 0..m {
                            let gv = g[r * m + c];
                            if gv != 0.0 {
                                axpy(gv, &wv[c * k..(c + 1) * k], dxr);
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.needs(&[*v]) {
                        let d = slot(grads, *v, g.len());
                        axpy(1.0, g, d);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(a, b), (b, a)] {
                    if self.needs(&[*v]) {
                        let ov = self.vals(*other);
                        let d = slot(grads, *v, g.len());
                        for ((dd, &gv), &o) in d.iter_mut().zip(g).zip(ov) {
                            *dd += gv * o;
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let total = node.value.shape()[1];
                let n = node.value.shape()[0];
                let mut offset = 0;
                for &p in parts {
                    let k = self.shape(p)[1];
                    if self.needs(&[p]) {
                        let d = slot(grads, p, n * k);
                        for r in 0..n {
                            axpy(
                                1.0,
                                &g[r * total + offset..r * total + offset + k],
                                &mut d[r * k..(r + 1) * k],
                            );
                        }
                    }
                    offset += k;
                }
            }
            Op::Column { fmap, t } => {
                let [n, c, h, w] = dims4(self.shape(*fmap), "").unwrap();
                let d = slot(grads, *fmap, n * c * h * w);
                let mut gi = g.iter();
                for plane in 0..n * c {
                    for row in 0..h {
                        d[(plane * h + row) * w + t] += gi.next().unwrap();
                    }
                }
            }
            Op::Stack(frames) => {
                let [n, t, c] = [
                    node.value.shape()[0],
                    node.value.shape()[1],
                    node.value.shape()[2],
                ];
                for (ti, &f) in frames.iter().enumerate() {
                    if self.needs(&[f]) {
                        let d = slot(grads, f, n * c);
                        for r in 0..n {
                            axpy(
                                1.0,
                                &g[(r * t + ti) * c..(r * t + ti + 1) * c],
                                &mut d[r * c..(r + 1) * c],
                            );
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let c = *node.value.shape().last().unwrap();
                let d = slot(grads, *x, g.len());
                for ((dr, gr), orow) in d
                    .chunks_exact_mut(c)
                    .zip(g.chunks_exact(c))
                    .zip(out.chunks_exact(c))
                {
                    let gsum: f64 = gr.iter().sum();
                    for ((dd, &gv), &o) in dr.iter_mut().zip(gr).zip(orow) {
                        *dd += gv - o.exp() * gsum;
                    }
                }
            }
            Op::External { input, grad } => {
                let d = slot(grads, *input, grad.len());
                axpy(g[0], grad, d);
            }
            Op::Sum(x) => {
                let d = slot(grads, *x, self.nodes[x.0].value.len());
                d.iter_mut().for_each(|v| *v += g[0]);
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn dims4(shape: &[usize], what: &str) -> Result<[usize; 4]> {
    <[usize; 4]>::try_from(shape)
        .map_err(|_| NnError::ShapeMismatch(format!("{what}: expected 4-D, got {shape:?}")))
}

fn dims2(shape: &[usize], what: &str) -> Result<(usize, usize)> {
    match shape {
        [a, b] => Ok((*a, *b)),
        _ => Err(NnError::ShapeMismatch(format!(
            "{what}: expected 2-D, got {shape:?}"
        ))),
    }
}

/// Shape bookkeeping and loops for 2-D cross-correlation.
struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(xs: [usize; 4], ks: [usize; 4], stride: usize, pad: usize) -> Result<Self> {
        let [n, cin, h, w] = xs;
        let [cout, kcin, kh, kw] = ks;
        if kcin != cin {
            return Err(NnError::ShapeMismatch(format!(
                "conv2d kernel expects {kcin} input channels, input has {cin}"
            )));
        }
        if stride == 0 || kh == 0 || kw == 0 || kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(NnError::ShapeMismatch(format!(
                "conv2d kernel {kh}x{kw} stride {stride} padding {pad} on {h}x{w}"
            )));
        }
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    /// Output columns `ow` whose input column `ow·stride + dx − pad` is in
    /// range, as a half-open interval.
    fn col_range(&self, dx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(dx).div_ceil(self.stride);
        let hi_excl = (self.w + self.pad).saturating_sub(dx); // ow·s < w + pad − dx
        let hi = hi_excl.div_ceil(self.stride).min(self.ow);
        (lo.min(hi), hi)
    }

    fn in_row(&self, oy: usize, dy: usize) -> Option<usize> {
        let r = (oy * self.stride + dy).checked_sub(self.pad)?;
        (r < self.h).then_some(r)
    }

    fn forward(&self, x: &[f64], k: &[f64], b: &[f64]) -> Vec<f64> {
        let plane_out = self.oh * self.ow;
        let mut out = vec![0.0; self.n * self.cout * plane_out];
        for n in 0..self.n {
            for co in 0..self.cout {
                let o = &mut out[(n * self.cout + co) * plane_out..][..plane_out];
                o.iter_mut().for_each(|v| *v = b[co]);
                for ci in 0..self.cin {
                    let xp = &x[(n * self.cin + ci) * self.h * self.w..][..self.h * self.w];
                    for dy in 0..self.kh {
                        for dx in 0..self.kw {
                            let wv = k[((co * self.cin + ci) * self.kh + dy) * self.kw + dx];
                            let (lo, hi) = self.col_range(dx);
                            for oy in 0..self.oh {
                                let Some(iy) = self.in_row(oy, dy) else { continue };
                                let orow = &mut o[oy * self.ow..(oy + 1) * self.ow];
                                let xrow = &xp[iy * self.w..(iy + 1) * self.w];
                                if self.stride == 1 {
                                    let start = lo + dx - self.pad;
                                    axpy(wv, &xrow[start..start + hi - lo], &mut orow[lo..hi]);
                                } else {
                                    for ox in lo..hi {
                                        orow[ox] += wv * xrow[ox * self.stride + dx - self.pad];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn kernel_grad(&self, x: &[f64], g: &[f64], dk: &mut [f64]) {
        let plane_out = self.oh * self.ow;
        for n in 0..self.n {
            for co in 0..self.cout {
                let gp = &g[(n * self.cout + co) * plane_out..][..plane_out];
                for ci in 0..self.cin {
                    let xp = &x[(n * self.cin + ci) * self.h * self.w..][..self.h * self.w];
                    for dy in 0..self.kh {
                        for dx in 0..self.kw {
                            let (lo, hi) = self.col_range(dx);
                            let mut acc = 0.0;
                            for oy in 0..self.oh {
                                let Some(iy) = self.in_row(oy, dy) else { continue };
                                let grow = &gp[oy * self.ow..(oy + 1) * self.ow];
                                let xrow = &xp[iy * self.w..(iy + 1) * self.w];
                                if self.stride == 1 {
                                    let start = lo + dx - self.pad;
                                    acc += dot(&grow[lo..hi], &xrow[start..start + hi - lo]);
                                } else {
                                    for ox in lo..hi {
                                        acc += grow[ox] * xrow[ox * self.stride + dx - self.pad];
                                    }
                                }
                            }
                            dk[((co * self.cin + ci) * self.kh + dy) * self.kw + dx] += acc;
                        }
                    }
                }
            }
        }
    }

    fn input_grad(&self, k: &[f64], g: &[f64], dxs: &mut [f64]) {
        let plane_out = self.oh * self.ow;
        for n in 0..self.n {
            for co in 0..self.cout {
                let gp = &g[(n * self.cout + co) * plane_out..][..plane_out];
                for ci in 0..self.cin {
                    let dp = &mut dxs[(n * self.cin + ci) * self.h * self.w..][..self.h * self.w];
                    for dy in 0..self.kh {
                        for dx in 0..self.kw {
                            let wv = k[((co * self.cin + ci) * self.kh + dy) * self.kw + dx];
                            let (lo, hi) = self.col_range(dx);
                            for oy in 0..self.oh {
                                let Some(iy) = self.in_row(oy, dy) else { continue };
                                let grow = &gp[oy * self.ow..(oy + 1) * self.ow];
                                let drow = &mut dp[iy * self.w..(iy + 1) * self.w];
                                if self.stride == 1 {
                                    let start = lo + dx - self.pad;
                                    axpy(wv, &grow[lo..hi], &mut drow[start..start + hi - lo]);
                                } else {
                                    for ox in lo..hi {
                                        drow[ox * self.stride + dx - self.pad] += wv * grow[ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
