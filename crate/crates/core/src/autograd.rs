//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s in execution
//! order; [`Var::backward`] walks it in reverse. Leaves created with
//! [`Tape::constant`] never receive gradients, which is how frozen networks
//! (the perceptual extractor, the discriminator during a generator step) are
//! kept out of the update path.

use std::cell::RefCell;
use std::ops::{Add, Mul, Sub};

use crate::tensor::{col2im, gemm, im2col, ConvGeom, Real, Tensor};

/// Added to the mean square before the root in [`Var::pixel_norm`].
pub const PIXEL_NORM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug)]
enum Unary<T> {
    LeakyRelu(T),
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Sqrt,
    Abs,
    Square,
}

enum Op<T> {
    Leaf,
    Conv2d { x: usize, w: usize, b: Option<usize>, geom: ConvGeom, cols: Vec<T> },
    Linear { x: usize, w: usize, b: Option<usize> },
    Upsample2x { x: usize },
    /// Each spatial position's channel vector divided by its RMS.
    PixelNorm { x: usize },
    Cat { parts: Vec<usize>, axis: usize },
    Reshape { x: usize },
    Unary { x: usize, f: Unary<T> },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: T },
    AddScalar { x: usize },
    SumAll { x: usize },
    MeanAll { x: usize },
    /// Squared Euclidean distances between the rows of an `[N, D]` input.
    PairwiseSqDist { x: usize },
    /// Row-wise log-softmax of an `[N, N]` input, ignoring the diagonal.
    LogSoftmaxOffDiag { x: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// A trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }
}

macro_rules! with_values {
    ($tape:expr; $($v:ident = $id:expr),+; $body:expr) => {{
        let nodes = $tape.nodes.borrow();
        $(let $v = &nodes[$id].value;)+
        $body
    }};
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Scalar value of a one-element variable, widened to `f64`.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item().as_f64()
    }

    /// A gradient-free copy of this value on the same tape.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant(self.value())
    }

    fn unary(self, f: Unary<T>) -> Self {
        let out = with_values!(self.tape; x = self.id; {
            x.map(|v| match f {
                Unary::LeakyRelu(s) => {
                    if v > T::zero() {
                        v
                    } else {
                        v * s
                    }
                }
                Unary::Sigmoid => T::one() / (T::one() + (-v).exp()),
                Unary::Tanh => v.tanh(),
                Unary::Exp => v.exp(),
                Unary::Log => v.ln(),
                Unary::Sqrt => v.sqrt(),
                Unary::Abs => v.abs(),
                Unary::Square => v * v,
            })
        });
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(out, Op::Unary { x: self.id, f }, rg)
    }

    pub fn leaky_relu(self, slope: f64) -> Self {
        self.unary(Unary::LeakyRelu(T::lit(slope)))
    }
    pub fn relu(self) -> Self {
        self.unary(Unary::LeakyRelu(T::zero()))
    }
    pub fn sigmoid(self) -> Self {
        self.unary(Unary::Sigmoid)
    }
    pub fn tanh(self) -> Self {
        self.unary(Unary::Tanh)
    }
    pub fn exp(self) -> Self {
        self.unary(Unary::Exp)
    }
    pub fn ln(self) -> Self {
        self.unary(Unary::Log)
    }
    pub fn sqrt(self) -> Self {
        self.unary(Unary::Sqrt)
    }
    pub fn abs(self) -> Self {
        self.unary(Unary::Abs)
    }
    pub fn square(self) -> Self {
        self.unary(Unary::Square)
    }

    pub fn scale(self, c: f64) -> Self {
        let c = T::lit(c);
        let out = with_values!(self.tape; x = self.id; x.map(|v| v * c));
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(out, Op::Scale { x: self.id, c }, rg)
    }

    pub fn add_scalar(self, c: f64) -> Self {
        let c = T::lit(c);
        let out = with_values!(self.tape; x = self.id; x.map(|v| v + c));
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(out, Op::AddScalar { x: self.id }, rg)
    }

    fn binary(self, other: Self, f: impl Fn(T, T) -> T, op: Op<T>) -> Self {
        let out = with_values!(self.tape; a = self.id, b = other.id; {
            assert_eq!(a.shape(), b.shape(), "elementwise op shape mismatch");
            a.zip_map(b, &f)
        });
        let rg = self.tape.requires(&[self.id, other.id]);
        self.tape.push(out, op, rg)
    }

    pub fn sum_all(self) -> Self {
        let out = with_values!(self.tape; x = self.id; Tensor::scalar(x.sum()));
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(out, Op::SumAll { x: self.id }, rg)
    }

    pub fn mean_all(self) -> Self {
        let out = with_values!(self.tape; x = self.id; {
            assert!(!x.is_empty(), "mean of empty tensor");
            Tensor::scalar(x.sum() / T::lit(x.len() as f64))
        });
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(out, Op::MeanAll { x: self.id }, rg)
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Self {
        let out = with_values!(self.tape; x = self.id; x.clone().reshape(shape));
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(out, Op::Reshape { x: self.id }, rg)
    }

    /// 2-d convolution of `[N,C,H,W]` by `[O,C,k,k]` with zero padding.
    pub fn conv2d(self, w: Self, b: Option<Self>, stride: usize, pad: usize) -> Self {
        let (out, geom, cols) = with_values!(self.tape; x = self.id, wv = w.id; {
            let (wo_c, wc, k, k2) = wv.dims4();
            assert_eq!(k, k2, "square kernels only");
            let geom = ConvGeom::new(x.dims4(), k, stride, pad);
            assert_eq!(wc, geom.c, "conv input channels");
            let cols = im2col(x.data(), &geom);
            let plane = geom.ho * geom.wo;
            let mut y = vec![T::zero(); wo_c * geom.cols()];
            gemm(wo_c, geom.rows(), geom.cols(), wv.data(), false, &cols, false, T::zero(), &mut y);
            // [O, N·plane] -> [N, O, plane]
            let mut out = vec![T::zero(); y.len()];
            let bias = b.map(|b| self.tape.nodes.borrow()[b.id].value.data().to_vec());
            for o in 0..wo_c {
                let bo = bias.as_ref().map_or(T::zero(), |bb| bb[o]);
                for n in 0..geom.n {
                    let src = &y[o * geom.cols() + n * plane..o * geom.cols() + (n + 1) * plane];
                    let dst = &mut out[(n * wo_c + o) * plane..(n * wo_c + o + 1) * plane];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = s + bo;
                    }
                }
            }
            (Tensor::new(vec![geom.n, wo_c, geom.ho, geom.wo], out), geom, cols)
        });
        let mut ids = vec![self.id, w.id];
        ids.extend(b.map(|b| b.id));
        let rg = self.tape.requires(&ids);
        self.tape.push(out, Op::Conv2d { x: self.id, w: w.id, b: b.map(|b| b.id), geom, cols }, rg)
    }

    /// `x [N, in] · wᵀ [in, out] + b`.
    pub fn linear(self, w: Self, b: Option<Self>) -> Self {
        let out = with_values!(self.tape; x = self.id, wv = w.id; {
            let (n, din) = (x.shape()[0], x.shape()[1]);
            let dout = wv.shape()[0];
            assert_eq!(wv.shape()[1], din, "linear input width");
            let mut y = vec![T::zero(); n * dout];
            gemm(n, din, dout, x.data(), false, wv.data(), true, T::zero(), &mut y);
            if let Some(b) = b {
                let bias = self.tape.nodes.borrow()[b.id].value.data().to_vec();
                for row in y.chunks_mut(dout) {
                    for (v, &bb) in row.iter_mut().zip(&bias) {
                        *v += bb;
                    }
                }
            }
            Tensor::new(vec![n, dout], y)
        });
        let mut ids = vec![self.id, w.id];
        ids.extend(b.map(|b| b.id));
        let rg = self.tape.requires(&ids);
        self.tape.push(out, Op::Linear { x: self.id, w: w.id, b: b.map(|b| b.id) }, rg)
    }

    /// Nearest-neighbour upsampling by 2 along both spatial axes.
    pub fn upsample2x(self) -> Self {
        let out = with_values!(self.tape; x = self.id; {
            let (n, c, h, w) = x.dims4();
            let mut out = vec![T::zero(); n * c * 4 * h * w];
            let src = x.data();
            for p in 0..n * c {
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        out[(p * 2 * h + y) * 2 * w + xx] = src[(p * h + y / 2) * w + xx / 2];
                    }
                }
            }
            Tensor::new(vec![n, c, 2 * h, 2 * w], out)
        });
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(out, Op::Upsample2x { x: self.id }, rg)
    }

    /// `x / sqrt(mean_c(x^2) + eps)` over the channel axis of `[N, C, H, W]`.
    pub fn pixel_norm(self) -> Self {
        let out = with_values!(self.tape; x = self.id; {
            let (n, c, h, w) = x.dims4();
            let hw = h * w;
            let v = x.data();
            let mut out = vec![T::zero(); v.len()];
            for b in 0..n {
                for p in 0..hw {
                    let base = b * c * hw + p;
                    let ms = (0..c).map(|k| v[base + k * hw] * v[base + k * hw]).sum::<T>() / T::lit(c as f64);
                    let r = (ms + T::lit(PIXEL_NORM_EPS)).sqrt().recip();
                    for k in 0..c {
                        out[base + k * hw] = v[base + k * hw] * r;
                    }
                }
            }
            Tensor::new(vec![n, c, h, w], out)
        });
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(out, Op::PixelNorm { x: self.id }, rg)
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn cat(parts: &[Self], axis: usize) -> Self {
        assert!(!parts.is_empty(), "cat of nothing");
        let tape = parts[0].tape;
        let out = {
            let nodes = tape.nodes.borrow();
            let first = nodes[parts[0].id].value.shape().to_vec();
            let outer: usize = first[..axis].iter().product();
            let mut shape = first.clone();
            shape[axis] = 0;
            let mut chunks = Vec::new();
            for p in parts {
                let s = nodes[p.id].value.shape();
                assert_eq!(s.len(), first.len(), "cat rank mismatch");
                for (d, (&a, &b)) in s.iter().zip(&first).enumerate() {
                    assert!(d == axis || a == b, "cat extent mismatch on axis {d}");
                }
                shape[axis] += s[axis];
                chunks.push(nodes[p.id].value.len() / outer);
            }
            let mut data = Vec::with_capacity(shape.iter().product());
            for o in 0..outer {
                for (p, &ch) in parts.iter().zip(&chunks) {
                    data.extend_from_slice(&nodes[p.id].value.data()[o * ch..(o + 1) * ch]);
                }
            }
            Tensor::new(shape, data)
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = tape.requires(&ids);
        tape.push(out, Op::Cat { parts: ids, axis }, rg)
    }

    pub fn pairwise_sq_dist(self) -> Self {
        let out = with_values!(self.tape; x = self.id; {
            let (n, d) = (x.shape()[0], x.shape()[1]);
            let v = x.data();
            let mut out = vec![T::zero(); n * n];
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        out[i * n + j] = (0..d)
                            .map(|k| {
                                let e = v[i * d + k] - v[j * d + k];
                                e * e
                            })
                            .sum();
                    }
                }
            }
            Tensor::new(vec![n, n], out)
        });
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(out, Op::PairwiseSqDist { x: self.id }, rg)
    }

    /// Log-softmax over each row of an `[N, N]` matrix, excluding the
    /// diagonal entry (set to zero in the output).
    pub fn log_softmax_offdiag(self) -> Self {
        let out = with_values!(self.tape; x = self.id; {
            let n = x.shape()[0];
            assert_eq!(x.shape(), &[n, n], "square input required");
            let v = x.data();
            let mut out = vec![T::zero(); n * n];
            for i in 0..n {
                let row = &v[i * n..(i + 1) * n];
                let max = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(T::neg_infinity(), T::max);
                let lse = max
                    + (0..n).filter(|&j| j != i).map(|j| (row[j] - max).exp()).sum::<T>().ln();
                for j in (0..n).filter(|&j| j != i) {
                    out[i * n + j] = row[j] - lse;
                }
            }
            Tensor::new(vec![n, n], out)
        });
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(out, Op::LogSoftmaxOffDiag { x: self.id }, rg)
    }

    /// Gradients of this one-element variable with respect to every node.
    pub fn backward(&self) -> Gradients<T> {
        let nodes = self.tape.nodes.borrow();
        assert_eq!(nodes[self.id].value.len(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[self.id] = Some(Tensor::full(nodes[self.id].value.shape().to_vec(), T::one()));
        for id in (0..=self.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], nodes: &[Node<T>], id: usize, g: Tensor<T>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn backprop_node<T: Real>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let val = |i: usize| &nodes[i].value;
    let rg = |i: usize| nodes[i].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Unary { x, f } => {
            let xv = val(*x);
            let y = &node.value;
            let dx: Vec<T> = g
                .data()
                .iter()
                .zip(xv.data())
                .zip(y.data())
                .map(|((&gi, &xi), &yi)| {
                    gi * match *f {
                        Unary::LeakyRelu(s) => {
                            if xi > T::zero() {
                                T::one()
                            } else {
                                s
                            }
                        }
                        Unary::Sigmoid => yi * (T::one() - yi),
                        Unary::Tanh => T::one() - yi * yi,
                        Unary::Exp => yi,
                        Unary::Log => T::one() / xi,
                        Unary::Sqrt => T::lit(0.5) / yi,
                        Unary::Abs => {
                            if xi > T::zero() {
                                T::one()
                            } else if xi < T::zero() {
                                -T::one()
                            } else {
                                T::zero()
                            }
                        }
                        Unary::Square => T::lit(2.0) * xi,
                    }
                })
                .collect();
            accumulate(grads, nodes, *x, Tensor::new(xv.shape().to_vec(), dx));
        }
        Op::Add { a, b } => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.clone());
        }
        Op::Sub { a, b } => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.map(|v| -v));
        }
        Op::Mul { a, b } => {
            if rg(*a) {
                accumulate(grads, nodes, *a, g.zip_map(val(*b), |gi, bi| gi * bi));
            }
            if rg(*b) {
                accumulate(grads, nodes, *b, g.zip_map(val(*a), |gi, ai| gi * ai));
            }
        }
        Op::Scale { x, c } => accumulate(grads, nodes, *x, g.map(|v| v * *c)),
        Op::AddScalar { x } => accumulate(grads, nodes, *x, g.clone()),
        Op::SumAll { x } => {
            accumulate(grads, nodes, *x, Tensor::full(val(*x).shape().to_vec(), g.item()))
        }
        Op::MeanAll { x } => {
            let n = T::lit(val(*x).len() as f64);
            accumulate(grads, nodes, *x, Tensor::full(val(*x).shape().to_vec(), g.item() / n))
        }
        Op::Reshape { x } => {
            accumulate(grads, nodes, *x, g.clone().reshape(val(*x).shape().to_vec()))
        }
        Op::Upsample2x { x } => {
            let (n, c, h, w) = val(*x).dims4();
            let mut dx = vec![T::zero(); n * c * h * w];
            let gd = g.data();
            for p in 0..n * c {
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        dx[(p * h + y / 2) * w + xx / 2] += gd[(p * 2 * h + y) * 2 * w + xx];
                    }
                }
            }
            accumulate(grads, nodes, *x, Tensor::new(vec![n, c, h, w], dx));
        }
        Op::PixelNorm { x } => {
            let xv = val(*x);
            let (n, c, h, w) = xv.dims4();
            let hw = h * w;
            let (v, gd) = (xv.data(), g.data());
            let mut dx = vec![T::zero(); v.len()];
            let cf = T::lit(c as f64);
            for b in 0..n {
                for p in 0..hw {
                    let base = b * c * hw + p;
                    let ms = (0..c).map(|k| v[base + k * hw] * v[base + k * hw]).sum::<T>() / cf;
                    let r = (ms + T::lit(PIXEL_NORM_EPS)).sqrt().recip();
                    let dot = (0..c).map(|k| gd[base + k * hw] * v[base + k * hw]).sum::<T>();
                    let k3 = r * r * r * dot / cf;
                    for k in 0..c {
                        dx[base + k * hw] = r * gd[base + k * hw] - v[base + k * hw] * k3;
                    }
                }
            }
            accumulate(grads, nodes, *x, Tensor::new(vec![n, c, h, w], dx));
        }
        Op::Cat { parts, axis } => {
            let outer: usize = node.value.shape()[..*axis].iter().product();
            let total = node.value.len() / outer;
            let mut offset = 0;
            for &p in parts {
                let ch = val(p).len() / outer;
                if rg(p) {
                    let mut d = Vec::with_capacity(val(p).len());
                    for o in 0..outer {
                        d.extend_from_slice(&g.data()[o * total + offset..o * total + offset + ch]);
                    }
                    accumulate(grads, nodes, p, Tensor::new(val(p).shape().to_vec(), d));
                }
                offset += ch;
            }
        }
        Op::Linear { x, w, b } => {
            let xv = val(*x);
            let wv = val(*w);
            let (n, din) = (xv.shape()[0], xv.shape()[1]);
            let dout = wv.shape()[0];
            if rg(*x) {
                let mut dx = vec![T::zero(); n * din];
                gemm(n, dout, din, g.data(), false, wv.data(), false, T::zero(), &mut dx);
                accumulate(grads, nodes, *x, Tensor::new(vec![n, din], dx));
            }
            if rg(*w) {
                let mut dw = vec![T::zero(); dout * din];
                gemm(dout, n, din, g.data(), true, xv.data(), false, T::zero(), &mut dw);
                accumulate(grads, nodes, *w, Tensor::new(vec![dout, din], dw));
            }
            if let Some(b) = b {
                if rg(*b) {
                    let mut db = vec![T::zero(); dout];
                    for row in g.data().chunks(dout) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(grads, nodes, *b, Tensor::new(vec![dout], db));
                }
            }
        }
        Op::Conv2d { x, w, b, geom, cols } => {
            let wv = val(*w);
            let out_c = wv.shape()[0];
            let plane = geom.ho * geom.wo;
            // [N, O, plane] -> [O, N·plane]
            let mut gy = vec![T::zero(); g.len()];
            for n in 0..geom.n {
                for o in 0..out_c {
                    let src = &g.data()[(n * out_c + o) * plane..(n * out_c + o + 1) * plane];
                    gy[o * geom.cols() + n * plane..o * geom.cols() + (n + 1) * plane]
                        .copy_from_slice(src);
                }
            }
            if rg(*w) {
                let mut dw = vec![T::zero(); wv.len()];
                gemm(out_c, geom.cols(), geom.rows(), &gy, false, cols, true, T::zero(), &mut dw);
                accumulate(grads, nodes, *w, Tensor::new(wv.shape().to_vec(), dw));
            }
            if let Some(b) = b {
                if rg(*b) {
                    let db: Vec<T> =
                        gy.chunks(geom.cols()).map(|row| row.iter().copied().sum()).collect();
                    accumulate(grads, nodes, *b, Tensor::new(vec![out_c], db));
                }
            }
            if rg(*x) {
                let mut dcol = vec![T::zero(); geom.rows() * geom.cols()];
                gemm(geom.rows(), out_c, geom.cols(), wv.data(), true, &gy, false, T::zero(), &mut dcol);
                let dx = col2im(&dcol, geom);
                accumulate(grads, nodes, *x, Tensor::new(val(*x).shape().to_vec(), dx));
            }
        }
        Op::PairwiseSqDist { x } => {
            let xv = val(*x);
            let (n, d) = (xv.shape()[0], xv.shape()[1]);
            let v = xv.data();
            let gd = g.data();
            let mut dx = vec![T::zero(); n * d];
            let two = T::lit(2.0);
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    let gij = two * (gd[i * n + j] + gd[j * n + i]);
                    for k in 0..d {
                        dx[i * d + k] += gij * (v[i * d + k] - v[j * d + k]);
                    }
                }
            }
            accumulate(grads, nodes, *x, Tensor::new(vec![n, d], dx));
        }
        Op::LogSoftmaxOffDiag { x } => {
            let n = node.value.shape()[0];
            let y = node.value.data();
            let gd = g.data();
            let mut dx = vec![T::zero(); n * n];
            for i in 0..n {
                let gsum: T = (0..n).filter(|&j| j != i).map(|j| gd[i * n + j]).sum();
                for j in (0..n).filter(|&j| j != i) {
                    dx[i * n + j] = gd[i * n + j] - y[i * n + j].exp() * gsum;
                }
            }
            accumulate(grads, nodes, *x, Tensor::new(vec![n, n], dx));
        }
    }
}

/// Result of [`Var::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: &Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of `shape` if nothing flowed into it.
    pub fn get_or_zeros(&self, v: &Var<'_, T>, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

impl<'t, T: Real> Add for Var<'t, T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, |a, b| a + b, Op::Add { a: self.id, b: rhs.id })
    }
}

impl<'t, T: Real> Sub for Var<'t, T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, |a, b| a - b, Op::Sub { a: self.id, b: rhs.id })
    }
}

impl<'t, T: Real> Mul for Var<'t, T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, |a, b| a * b, Op::Mul { a: self.id, b: rhs.id })
    }
}

impl<'t, T: Real> Mul<f64> for Var<'t, T> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.scale(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Compare the analytic gradient of `sum(f(x) * r)` with central differences.
    fn check(shape: &[usize], f: impl for<'t> Fn(Var<'t, f64>) -> Var<'t, f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = rand_tensor(&mut rng, shape);
        let probe = {
            let tape = Tape::new();
            f(tape.constant(x0.clone())).shape()
        };
        let r = rand_tensor(&mut rng, &probe);
        let eval = |x: &Tensor<f64>| {
            let tape = Tape::new();
            let y = f(tape.constant(x.clone()));
            (y * tape.constant(r.clone())).sum_all().item()
        };
        let tape = Tape::new();
        let x = tape.param(x0.clone());
        let g = (f(x) * tape.constant(r.clone())).sum_all().backward();
        let analytic = g.get(&x).expect("gradient").clone();
        let h = 1e-6;
        for i in 0..x0.len() {
            let mut xp = x0.clone();
            xp.data_mut()[i] += h;
            let mut xm = x0.clone();
            xm.data_mut()[i] -= h;
            let numeric = (eval(&xp) - eval(&xm)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!(
                (a - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                "element {i}: analytic {a} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn unary_gradients() {
        check(&[3, 4], |x| x.leaky_relu(0.2));
        check(&[3, 4], |x| x.sigmoid());
        check(&[3, 4], |x| x.tanh());
        check(&[3, 4], |x| x.exp());
        check(&[3, 4], |x| x.square().add_scalar(0.5).ln());
        check(&[3, 4], |x| x.square().add_scalar(0.5).sqrt());
        check(&[3, 4], |x| x.abs());
        check(&[3, 4], |x| x.scale(-1.5).mean_all());
    }

    #[test]
    fn binary_gradients() {
        check(&[2, 5], |x| x * x.sigmoid());
        check(&[2, 5], |x| x - x.square());
        check(&[2, 5], |x| (x + x.tanh()).sum_all());
    }

    #[test]
    fn conv_gradients_wrt_input_and_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
        let b = rand_tensor(&mut rng, &[3]);
        let (w2, b2) = (w.clone(), b.clone());
        check(&[2, 2, 6, 6], move |x| {
            let tape = x.tape;
            x.conv2d(tape.constant(w.clone()), Some(tape.constant(b.clone())), 2, 1)
        });
        let x = rand_tensor(&mut rng, &[2, 2, 5, 5]);
        check(&[3, 2, 3, 3], move |wv| {
            let tape = wv.tape;
            tape.constant(x.clone()).conv2d(wv, Some(tape.constant(b2.clone())), 1, 1)
        });
        let _ = w2;
    }

    #[test]
    fn stride_two_kernel_four_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = rand_tensor(&mut rng, &[2, 3, 4, 4]);
        check(&[1, 3, 8, 8], move |x| x.conv2d(x.tape.constant(w.clone()), None, 2, 1));
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = rand_tensor(&mut rng, &[4, 3]);
        let b = rand_tensor(&mut rng, &[4]);
        check(&[2, 3], move |x| x.linear(x.tape.constant(w.clone()), Some(x.tape.constant(b.clone()))));
        let x = rand_tensor(&mut rng, &[5, 3]);
        check(&[4, 3], move |w| w.tape.constant(x.clone()).linear(w, None));
    }

    #[test]
    fn shape_op_gradients() {
        check(&[1, 2, 3, 3], |x| x.upsample2x());
        check(&[2, 3, 2, 2], |x| x.pixel_norm());
        check(&[2, 2, 2, 2], |x| Var::cat(&[x, x.square()], 1));
        check(&[2, 2, 2, 2], |x| Var::cat(&[x.sigmoid(), x], 0));
        check(&[2, 6], |x| x.reshape(vec![3, 4]).tanh());
    }

    #[test]
    fn distance_softmax_gradients() {
        check(&[4, 3], |x| x.pairwise_sq_dist());
        check(&[4, 3], |x| x.pairwise_sq_dist().add_scalar(1e-3).sqrt().scale(-1.0).log_softmax_offdiag());
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::full(vec![2], 2.0));
        let p = tape.param(Tensor::full(vec![2], 3.0));
        let g = (c * p).sum_all().backward();
        assert!(g.get(&c).is_none());
        assert_eq!(g.get(&p).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(vec![3, 3], &[0.0, 1.0, 2.0, 3.0, 0.0, -1.0, 0.5, 0.5, 0.0]));
        let y = x.log_softmax_offdiag().value();
        for i in 0..3 {
            let s: f64 = (0..3).filter(|&j| j != i).map(|j| y.data()[i * 3 + j].exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert_eq!(y.data()[i * 3 + i], 0.0);
        }
    }
}
