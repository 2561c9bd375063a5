//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients
//! into every node that transitively depends on a trainable leaf.

use super::kernels::{self, ConvGeom};
use super::tensor::{Real, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
}

impl Activation {
    const LEAK: f64 = 0.1;

    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu => {
                if x > T::zero() {
                    x
                } else {
                    x * T::lit(Self::LEAK)
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::lit(Self::LEAK)
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Act(Var, Activation),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    AvgPool2(Var),
    Upsample2(Var),
    PixelShuffle2(Var),
    GlobalAvgPool(Var),
    Concat(Vec<Var>),
    Rows(Var, usize),
    Reshape(Var),
    Mean(Var),
    Mse(Var, Var),
    BceLogits(Var, Vec<T>),
    L2Normalize(Var, Vec<T>),
    SupCon { feat: Var, anchors: Vec<bool>, tau: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    grad: Option<Tensor<T>>,
}

pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        assert_eq!(v.shape(), self.value(b).shape(), "add: shape mismatch");
        v.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub: shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x - y).collect();
        let v = Tensor::new(va.shape(), data);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul: shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let v = Tensor::new(va.shape(), data);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    pub fn act(&mut self, a: Var, kind: Activation) -> Var {
        let v = self.value(a).map(|x| kind.apply(x));
        let ng = self.ng(a);
        self.push(v, Op::Act(a, kind), ng)
    }

    /// `x: [n, k]`, `w: [m, k]`, `b: [m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        assert_eq!(xs.len(), 2, "linear: input must be 2-d, got {xs:?}");
        assert_eq!(xs[1], ws[1], "linear: {xs:?} x {ws:?}");
        let (n, k, m) = (xs[0], xs[1], ws[0]);
        let y = kernels::linear_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            n,
            k,
            m,
        );
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(Tensor::new(&[n, m], y), Op::Linear { x, w, b }, ng)
    }

    /// `x: [n, c, h, w]`, `w: [co, c, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        assert_eq!(xs.len(), 4, "conv2d: input must be 4-d, got {xs:?}");
        assert_eq!(xs[1], ws[1], "conv2d: channel mismatch {xs:?} vs {ws:?}");
        let geom = ConvGeom {
            batch: xs[0],
            in_ch: xs[1],
            out_ch: ws[0],
            in_h: xs[2],
            in_w: xs[3],
            kernel: ws[2],
            stride,
            pad,
        };
        let y = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let shape = [geom.batch, geom.out_ch, geom.out_h(), geom.out_w()];
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(Tensor::new(&shape, y), Op::Conv2d { x, w, b, geom }, ng)
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.shape().to_vec();
        let (oh, ow) = (s[2] / 2, s[3] / 2);
        let mut out = vec![T::zero(); s[0] * s[1] * oh * ow];
        let q = T::lit(0.25);
        for p in 0..s[0] * s[1] {
            let src = &xv.data()[p * s[2] * s[3]..];
            for y in 0..oh {
                for xx in 0..ow {
                    let i = 2 * y * s[3] + 2 * xx;
                    out[p * oh * ow + y * ow + xx] = q * (src[i] + src[i + 1] + src[i + s[3]] + src[i + s[3] + 1]);
                }
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::new(&[s[0], s[1], oh, ow], out), Op::AvgPool2(x), ng)
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.shape().to_vec();
        let (oh, ow) = (s[2] * 2, s[3] * 2);
        let mut out = vec![T::zero(); s[0] * s[1] * oh * ow];
        for p in 0..s[0] * s[1] {
            let src = &xv.data()[p * s[2] * s[3]..][..s[2] * s[3]];
            let dst = &mut out[p * oh * ow..][..oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    dst[y * ow + xx] = src[(y / 2) * s[3] + xx / 2];
                }
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::new(&[s[0], s[1], oh, ow], out), Op::Upsample2(x), ng)
    }

    /// Depth-to-space: `[n, 4c, h, w] -> [n, c, 2h, 2w]`.
    pub fn pixel_shuffle2(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.shape().to_vec();
        assert_eq!(s[1] % 4, 0, "pixel_shuffle2: channels must be a multiple of 4");
        let c = s[1] / 4;
        let (h, w) = (s[2], s[3]);
        let mut out = vec![T::zero(); xv.len()];
        for n in 0..s[0] {
            for ch in 0..c {
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        let sub = (y % 2) * 2 + xx % 2;
                        let src = ((n * s[1] + ch * 4 + sub) * h + y / 2) * w + xx / 2;
                        out[((n * c + ch) * 2 * h + y) * 2 * w + xx] = xv.data()[src];
                    }
                }
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::new(&[s[0], c, 2 * h, 2 * w], out), Op::PixelShuffle2(x), ng)
    }

    /// `[n, c, h, w] -> [n, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.shape().to_vec();
        let plane = s[2] * s[3];
        let inv = T::one() / T::from_usize(plane).unwrap();
        let out = xv
            .data()
            .chunks(plane)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let ng = self.ng(x);
        self.push(Tensor::new(&[s[0], s[1]], out), Op::GlobalAvgPool(x), ng)
    }

    /// Concatenate 2-d tensors along axis 1.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.value(parts[0]).shape()[0];
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let s = self.value(p).shape();
                assert_eq!(s.len(), 2, "concat: 2-d inputs only");
                assert_eq!(s[0], n, "concat: row count mismatch");
                s[1]
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..][..w]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::new(&[n, total], out), Op::Concat(parts.to_vec()), ng)
    }

    /// Leading-axis slice `start..end`.
    pub fn rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let v = self.value(x).rows(start, end);
        let ng = self.ng(x);
        self.push(v, Op::Rows(x, start), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.value(x).clone().reshaped(shape);
        let ng = self.ng(x);
        self.push(v, Op::Reshape(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.data().iter().copied().sum::<T>() / T::from_usize(xv.len()).unwrap();
        let ng = self.ng(x);
        self.push(Tensor::scalar(m), Op::Mean(x), ng)
    }

    /// Mean squared error between equally sized tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "mse: size mismatch");
        let s = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>()
            / T::from_usize(va.len()).unwrap();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::scalar(s), Op::Mse(a, b), ng)
    }

    /// Mean binary cross-entropy on logits against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.len(), targets.len(), "bce: size mismatch");
        let s = lv
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (T::one() + (-z.abs()).exp()).ln())
            .sum::<T>()
            / T::from_usize(targets.len()).unwrap();
        let ng = self.ng(logits);
        self.push(Tensor::scalar(s), Op::BceLogits(logits, targets.to_vec()), ng)
    }

    /// Row-wise L2 normalization of a 2-d tensor.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.shape().to_vec();
        let d = s[1];
        let eps = T::lit(1e-12);
        let mut norms = Vec::with_capacity(s[0]);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(d) {
            let nrm = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(eps);
            norms.push(nrm);
            out.extend(row.iter().map(|&v| v / nrm));
        }
        let ng = self.ng(x);
        self.push(Tensor::new(&s, out), Op::L2Normalize(x, norms), ng)
    }

    /// Supervised contrastive loss over rows of `feat` (assumed unit norm).
    /// Rows flagged in `anchors` form the positive class: each anchor is
    /// pulled toward the other anchors and pushed away from every other row.
    pub fn supcon(&mut self, feat: Var, anchors: &[bool], tau: T) -> Var {
        let fv = self.value(feat);
        assert_eq!(fv.shape()[0], anchors.len());
        let loss = supcon_value(fv, anchors, tau);
        let ng = self.ng(feat);
        self.push(
            Tensor::scalar(loss),
            Op::SupCon {
                feat,
                anchors: anchors.to_vec(),
                tau,
            },
            ng,
        )
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.nodes[v.0].grad {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Backpropagate from a scalar node.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.value(loss).len(), 1, "backward: loss must be scalar");
        self.nodes[loss.0].grad = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.clone() else { continue };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backward_op(i, &op, &g);
            self.nodes[i].op = op;
        }
    }

    fn backward_op(&mut self, i: usize, op: &Op<T>, g: &Tensor<T>) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, g.clone());
                if self.ng(*b) {
                    self.accumulate(*b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.ng(a) {
                    let vb = self.value(b);
                    let d = g.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
                    let t = Tensor::new(g.shape(), d);
                    self.accumulate(a, t);
                }
                if self.ng(b) {
                    let va = self.value(a);
                    let d = g.data().iter().zip(va.data()).map(|(&x, &y)| x * y).collect();
                    let t = Tensor::new(g.shape(), d);
                    self.accumulate(b, t);
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(*a, g.map(|x| x * s));
            }
            Op::Act(a, kind) => {
                let (xv, yv) = (self.value(*a), &self.nodes[i].value);
                let d = g
                    .data()
                    .iter()
                    .zip(xv.data().iter().zip(yv.data()))
                    .map(|(&gv, (&x, &y))| gv * kind.derivative(x, y))
                    .collect();
                let t = Tensor::new(g.shape(), d);
                self.accumulate(*a, t);
            }
            Op::Linear { x, w, b } => {
                let xs = self.value(*x).shape();
                let (n, k) = (xs[0], xs[1]);
                let m = self.value(*w).shape()[0];
                if self.ng(*x) {
                    let gx = kernels::linear_backward_input(g.data(), self.value(*w).data(), n, k, m);
                    self.accumulate(*x, Tensor::new(&[n, k], gx));
                }
                if self.ng(*w) || b.is_some_and(|b| self.ng(b)) {
                    let (gw, gb) = kernels::linear_backward_params(g.data(), self.value(*x).data(), n, k, m);
                    self.accumulate(*w, Tensor::new(&[m, k], gw));
                    if let Some(b) = b {
                        self.accumulate(*b, Tensor::new(&[m], gb));
                    }
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                if self.ng(*x) {
                    let gx = kernels::conv2d_backward_input(geom, g.data(), self.value(*w).data());
                    let shape = self.value(*x).shape().to_vec();
                    self.accumulate(*x, Tensor::new(&shape, gx));
                }
                if self.ng(*w) || b.is_some_and(|b| self.ng(b)) {
                    let (gw, gb) = kernels::conv2d_backward_params(geom, g.data(), self.value(*x).data());
                    let shape = self.value(*w).shape().to_vec();
                    self.accumulate(*w, Tensor::new(&shape, gw));
                    if let Some(b) = b {
                        self.accumulate(*b, Tensor::new(&[geom.out_ch], gb));
                    }
                }
            }
            Op::AvgPool2(x) => {
                let s = self.value(*x).shape().to_vec();
                let (oh, ow) = (s[2] / 2, s[3] / 2);
                let mut gx = vec![T::zero(); s.iter().product()];
                let q = T::lit(0.25);
                for p in 0..s[0] * s[1] {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let gv = g.data()[p * oh * ow + y * ow + xx] * q;
                            let base = p * s[2] * s[3] + 2 * y * s[3] + 2 * xx;
                            gx[base] += gv;
                            gx[base + 1] += gv;
                            gx[base + s[3]] += gv;
                            gx[base + s[3] + 1] += gv;
                        }
                    }
                }
                self.accumulate(*x, Tensor::new(&s, gx));
            }
            Op::Upsample2(x) => {
                let s = self.value(*x).shape().to_vec();
                let (oh, ow) = (s[2] * 2, s[3] * 2);
                let mut gx = vec![T::zero(); s.iter().product()];
                for p in 0..s[0] * s[1] {
                    for y in 0..oh {
                        for xx in 0..ow {
                            gx[p * s[2] * s[3] + (y / 2) * s[3] + xx / 2] += g.data()[p * oh * ow + y * ow + xx];
                        }
                    }
                }
                self.accumulate(*x, Tensor::new(&s, gx));
            }
            Op::PixelShuffle2(x) => {
                let s = self.value(*x).shape().to_vec();
                let c = s[1] / 4;
                let (h, w) = (s[2], s[3]);
                let mut gx = vec![T::zero(); s.iter().product()];
                for n in 0..s[0] {
                    for ch in 0..c {
                        for y in 0..2 * h {
                            for xx in 0..2 * w {
                                let sub = (y % 2) * 2 + xx % 2;
                                let src = ((n * s[1] + ch * 4 + sub) * h + y / 2) * w + xx / 2;
                                gx[src] = g.data()[((n * c + ch) * 2 * h + y) * 2 * w + xx];
                            }
                        }
                    }
                }
                self.accumulate(*x, Tensor::new(&s, gx));
            }
            Op::GlobalAvgPool(x) => {
                let s = self.value(*x).shape().to_vec();
                let plane = s[2] * s[3];
                let inv = T::one() / T::from_usize(plane).unwrap();
                let mut gx = Vec::with_capacity(s.iter().product());
                for &gv in g.data() {
                    gx.extend(std::iter::repeat_n(gv * inv, plane));
                }
                self.accumulate(*x, Tensor::new(&s, gx));
            }
            Op::Concat(parts) => {
                let n = g.shape()[0];
                let total = g.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    if self.ng(p) {
                        let mut gp = Vec::with_capacity(n * w);
                        for r in 0..n {
                            gp.extend_from_slice(&g.data()[r * total + offset..][..w]);
                        }
                        self.accumulate(p, Tensor::new(&[n, w], gp));
                    }
                    offset += w;
                }
            }
            Op::Rows(x, start) => {
                let s = self.value(*x).shape().to_vec();
                let row: usize = s[1..].iter().product();
                let mut gx = vec![T::zero(); s.iter().product()];
                gx[start * row..][..g.len()].copy_from_slice(g.data());
                self.accumulate(*x, Tensor::new(&s, gx));
            }
            Op::Reshape(x) => {
                let s = self.value(*x).shape().to_vec();
                self.accumulate(*x, g.clone().reshaped(&s));
            }
            Op::Mean(x) => {
                let s = self.value(*x).shape().to_vec();
                let n = T::from_usize(s.iter().product()).unwrap();
                self.accumulate(*x, Tensor::full(&s, g.item() / n));
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let scale = T::lit(2.0) * g.item() / T::from_usize(va.len()).unwrap();
                let d: Vec<T> = va.data().iter().zip(vb.data()).map(|(&x, &y)| scale * (x - y)).collect();
                let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
                if self.ng(*b) {
                    let neg = d.iter().map(|&x| -x).collect();
                    self.accumulate(*b, Tensor::new(&sb, neg));
                }
                self.accumulate(*a, Tensor::new(&sa, d));
            }
            Op::BceLogits(x, targets) => {
                let xv = self.value(*x);
                let scale = g.item() / T::from_usize(targets.len()).unwrap();
                let d = xv
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&z, &t)| scale * (sigmoid(z) - t))
                    .collect();
                let s = xv.shape().to_vec();
                self.accumulate(*x, Tensor::new(&s, d));
            }
            Op::L2Normalize(x, norms) => {
                let y = &self.nodes[i].value;
                let d = y.shape()[1];
                let mut gx = Vec::with_capacity(y.len());
                for (r, &nrm) in norms.iter().enumerate() {
                    let yr = &y.data()[r * d..][..d];
                    let gr = &g.data()[r * d..][..d];
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    gx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| (gv - yv * dot) / nrm));
                }
                let s = y.shape().to_vec();
                self.accumulate(*x, Tensor::new(&s, gx));
            }
            Op::SupCon { feat, anchors, tau } => {
                let gx = supcon_grad(self.value(*feat), anchors, *tau, g.item());
                self.accumulate(*feat, gx);
            }
        }
    }
}

fn similarity<T: Real>(f: &Tensor<T>, tau: T) -> Vec<T> {
    let (n, d) = (f.shape()[0], f.shape()[1]);
    let mut s = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            let dot: T = f.data()[i * d..][..d]
                .iter()
                .zip(&f.data()[j * d..][..d])
                .map(|(&a, &b)| a * b)
                .sum();
            s[i * n + j] = dot / tau;
        }
    }
    s
}

/// Log-softmax denominators per anchor row (over all columns except the diagonal).
fn row_softmax<T: Real>(s: &[T], n: usize, i: usize) -> Vec<T> {
    let row = &s[i * n..][..n];
    let mx = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(T::neg_infinity(), T::max);
    let z: T = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| (v - mx).exp())
        .sum();
    row.iter()
        .enumerate()
        .map(|(j, &v)| if j == i { T::zero() } else { (v - mx).exp() / z })
        .collect()
}

fn supcon_value<T: Real>(f: &Tensor<T>, anchors: &[bool], tau: T) -> T {
    let n = f.shape()[0];
    let s = similarity(f, tau);
    let n_anchor = anchors.iter().filter(|&&a| a).count();
    let mut total = T::zero();
    for i in (0..n).filter(|&i| anchors[i]) {
        let p = row_softmax(&s, n, i);
        let pos: Vec<usize> = (0..n).filter(|&j| j != i && anchors[j]).collect();
        let li = pos.iter().map(|&j| -p[j].ln()).sum::<T>() / T::from_usize(pos.len()).unwrap();
        total += li;
    }
    total / T::from_usize(n_anchor).unwrap()
}

fn supcon_grad<T: Real>(f: &Tensor<T>, anchors: &[bool], tau: T, upstream: T) -> Tensor<T> {
    let (n, d) = (f.shape()[0], f.shape()[1]);
    let s = similarity(f, tau);
    let n_anchor = T::from_usize(anchors.iter().filter(|&&a| a).count()).unwrap();
    // dL/ds_ij for anchor rows.
    let mut gs = vec![T::zero(); n * n];
    for i in (0..n).filter(|&i| anchors[i]) {
        let p = row_softmax(&s, n, i);
        let n_pos = T::from_usize((0..n).filter(|&j| j != i && anchors[j]).count()).unwrap();
        for j in (0..n).filter(|&j| j != i) {
            let pos = if anchors[j] { T::one() / n_pos } else { T::zero() };
            gs[i * n + j] = upstream * (p[j] - pos) / n_anchor;
        }
    }
    let mut gx = vec![T::zero(); n * d];
    for k in 0..n {
        for j in 0..n {
            let c = (gs[k * n + j] + gs[j * n + k]) / tau;
            if c == T::zero() {
                continue;
            }
            for t in 0..d {
                gx[k * d + t] += c * f.data()[j * d + t];
            }
        }
    }
    Tensor::new(&[n, d], gx)
}
