//! Reverse-mode autodiff over a flat tape of rank-4 tensors.
//!
//! A [`Graph`] is built per forward pass: leaves are inputs or leased
//! parameters, interior nodes record which op produced them, and
//! [`Graph::backward`] walks the tape in reverse. Every forward op validates
//! that its output is finite so a diverging run aborts at the op that
//! produced the first NaN/Inf.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{conv2d_backward, conv2d_forward, ConvDims};
use crate::error::{Result, TensorError};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Step {
    Leaf { param: Option<String> },
    Conv2d { input: NodeId, weight: NodeId, bias: Option<NodeId>, dims: ConvDims },
    MaxPool2 { input: NodeId, argmax: Vec<u32> },
    Upsample2 { input: NodeId },
    Relu { input: NodeId },
    Sigmoid { input: NodeId },
    SoftmaxChannels { input: NodeId },
    /// `mask` holds the scaled keep mask; `None` means identity (eval mode or p = 0).
    Dropout { input: NodeId, mask: Option<Vec<f32>> },
    ConcatChannels { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Div { a: NodeId, b: NodeId },
    AddScalar { input: NodeId },
    MulScalar { input: NodeId, c: f32 },
    Abs { input: NodeId },
    SqrtEps { input: NodeId },
    HuberElem { input: NodeId, delta: f32 },
    MeanAll { input: NodeId },
    ReplicatePad { input: NodeId, pad: usize },
    Reshape { input: NodeId },
    /// Scalar-valued op with a caller-supplied gradient w.r.t. its input.
    CustomScalar { input: NodeId, grad_coeff: Vec<f32> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f32>>,
    step: Step,
    needs_grad: bool,
}

#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    training: bool,
    rng: ChaCha8Rng,
}

impl Graph {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn eval() -> Self {
        Graph { nodes: Vec::new(), training: false, rng: ChaCha8Rng::seed_from_u64(0) }
    }

    /// Training-mode graph. Dropout masks are drawn from a counter-based RNG
    /// keyed on (seed, stream), so a (seed, epoch, batch) triple fully
    /// determines every mask.
    pub fn train(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Graph { nodes: Vec::new(), training: true, rng }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f32]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, step: Step, needs_grad: bool, op: &'static str) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, grad: None, step, needs_grad });
        Ok(id)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Constant input; gradients never flow into it.
    pub fn input(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(value, Step::Leaf { param: None }, false, "input")
    }

    /// Named parameter leaf. After `backward`, its gradient can be collected
    /// with [`Graph::take_param_grads`]. Pass `trainable = false` to lease a
    /// frozen parameter (no gradient is computed through it).
    pub fn param(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<NodeId> {
        self.push(value, Step::Leaf { param: Some(name.into()) }, trainable, "param")
    }

    /// Differentiable anonymous leaf, useful for gradient checks on inputs.
    pub fn variable(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(value, Step::Leaf { param: None }, true, "variable")
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let dims = ConvDims::infer(
            self.value(input).shape(),
            self.value(weight).shape(),
            stride,
            padding,
        )?;
        if let Some(b) = bias {
            let bs = self.value(b).shape();
            if bs != [1, dims.co, 1, 1] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    detail: format!("bias shape {bs:?}, expected [1, {}, 1, 1]", dims.co),
                });
            }
        }
        let mut out = vec![0.0f32; dims.n * dims.co * dims.oh * dims.ow];
        conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &dims,
            &mut out,
        );
        let value = Tensor::new([dims.n, dims.co, dims.oh, dims.ow], out)?;
        let needs = self.needs(input) || self.needs(weight) || bias.map_or(false, |b| self.needs(b));
        self.push(value, Step::Conv2d { input, weight, bias, dims }, needs, "conv2d")
    }

    /// 2x2 max pooling with stride 2. Spatial dims must be even.
    pub fn maxpool2(&mut self, input: NodeId) -> Result<NodeId> {
        let [n, c, h, w] = self.value(input).shape();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::OddDims { h, w });
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = vec![0.0f32; n * c * oh * ow];
        let mut argmax = vec![0u32; n * c * oh * ow];
        for img in 0..n {
            for ch in 0..c {
                let plane = (img * c + ch) * h * w;
                let oplane = (img * c + ch) * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best_idx = plane + (2 * oy) * w + 2 * ox;
                        let mut best = x[best_idx];
                        for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                            let idx = plane + (2 * oy + dy) * w + 2 * ox + dx;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                        out[oplane + oy * ow + ox] = best;
                        argmax[oplane + oy * ow + ox] = best_idx as u32;
                    }
                }
            }
        }
        let needs = self.needs(input);
        let value = Tensor::new([n, c, oh, ow], out)?;
        self.push(value, Step::MaxPool2 { input, argmax }, needs, "maxpool2")
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample2(&mut self, input: NodeId) -> Result<NodeId> {
        let [n, c, h, w] = self.value(input).shape();
        let (oh, ow) = (h * 2, w * 2);
        let x = self.value(input).data();
        let mut out = vec![0.0f32; n * c * oh * ow];
        for img in 0..n {
            for ch in 0..c {
                let plane = (img * c + ch) * h * w;
                let oplane = (img * c + ch) * oh * ow;
                for y in 0..h {
                    for xx in 0..w {
                        let v = x[plane + y * w + xx];
                        let base = oplane + (2 * y) * ow + 2 * xx;
                        out[base] = v;
                        out[base + 1] = v;
                        out[base + ow] = v;
                        out[base + ow + 1] = v;
                    }
                }
            }
        }
        let needs = self.needs(input);
        let value = Tensor::new([n, c, oh, ow], out)?;
        self.push(value, Step::Upsample2 { input }, needs, "upsample2")
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let v: Vec<f32> = self.value(input).data().iter().map(|&x| x.max(0.0)).collect();
        let value = Tensor::new(self.value(input).shape(), v)?;
        let needs = self.needs(input);
        self.push(value, Step::Relu { input }, needs, "relu")
    }

    pub fn sigmoid(&mut self, input: NodeId) -> Result<NodeId> {
        let v: Vec<f32> =
            self.value(input).data().iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
        let value = Tensor::new(self.value(input).shape(), v)?;
        let needs = self.needs(input);
        self.push(value, Step::Sigmoid { input }, needs, "sigmoid")
    }

    /// Softmax across the channel dim, per (batch, y, x) position.
    pub fn softmax_channels(&mut self, input: NodeId) -> Result<NodeId> {
        let [n, c, h, w] = self.value(input).shape();
        let x = self.value(input).data();
        let mut out = vec![0.0f32; x.len()];
        let plane = h * w;
        for img in 0..n {
            for pix in 0..plane {
                let at = |ch: usize| (img * c + ch) * plane + pix;
                let mut maxv = f32::NEG_INFINITY;
                for ch in 0..c {
                    maxv = maxv.max(x[at(ch)]);
                }
                let mut denom = 0.0f32;
                for ch in 0..c {
                    let e = (x[at(ch)] - maxv).exp();
                    out[at(ch)] = e;
                    denom += e;
                }
                for ch in 0..c {
                    out[at(ch)] /= denom;
                }
            }
        }
        let needs = self.needs(input);
        let value = Tensor::new([n, c, h, w], out)?;
        self.push(value, Step::SoftmaxChannels { input }, needs, "softmax_channels")
    }

    /// Inverted dropout: in training mode each activation is zeroed with
    /// probability `p` and survivors are scaled by 1/(1-p); identity in eval.
    pub fn dropout(&mut self, input: NodeId, p: f32) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument(format!("dropout probability {p}")));
        }
        let needs = self.needs(input);
        if !self.training || p == 0.0 {
            let value = self.value(input).clone();
            return self.push(value, Step::Dropout { input, mask: None }, needs, "dropout");
        }
        let scale = 1.0 / (1.0 - p);
        let n = self.value(input).numel();
        let mask: Vec<f32> =
            (0..n).map(|_| if self.rng.gen::<f32>() < p { 0.0 } else { scale }).collect();
        let v: Vec<f32> =
            self.value(input).data().iter().zip(mask.iter()).map(|(x, m)| x * m).collect();
        let value = Tensor::new(self.value(input).shape(), v)?;
        self.push(value, Step::Dropout { input, mask: Some(mask) }, needs, "dropout")
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let [na, ca, ha, wa] = self.value(a).shape();
        let [nb, cb, hb, wb] = self.value(b).shape();
        if na != nb || ha != hb || wa != wb {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                detail: format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            });
        }
        let plane = ha * wa;
        let mut out = vec![0.0f32; na * (ca + cb) * plane];
        let av = self.value(a).data();
        let bv = self.value(b).data();
        for img in 0..na {
            let dst = img * (ca + cb) * plane;
            out[dst..dst + ca * plane]
                .copy_from_slice(&av[img * ca * plane..(img + 1) * ca * plane]);
            out[dst + ca * plane..dst + (ca + cb) * plane]
                .copy_from_slice(&bv[img * cb * plane..(img + 1) * cb * plane]);
        }
        let needs = self.needs(a) || self.needs(b);
        let value = Tensor::new([na, ca + cb, ha, wa], out)?;
        self.push(value, Step::ConcatChannels { a, b }, needs, "concat_channels")
    }

    fn binary_elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        op: &'static str,
        f: impl Fn(f32, f32) -> f32,
        step: Step,
    ) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            });
        }
        let v: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data().iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        let value = Tensor::new(self.value(a).shape(), v)?;
        self.push(value, step, needs, op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, "add", |x, y| x + y, Step::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, "sub", |x, y| x - y, Step::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, "mul", |x, y| x * y, Step::Mul { a, b })
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, "div", |x, y| x / y, Step::Div { a, b })
    }

    pub fn add_scalar(&mut self, input: NodeId, c: f32) -> Result<NodeId> {
        let v: Vec<f32> = self.value(input).data().iter().map(|&x| x + c).collect();
        let needs = self.needs(input);
        let value = Tensor::new(self.value(input).shape(), v)?;
        self.push(value, Step::AddScalar { input }, needs, "add_scalar")
    }

    pub fn mul_scalar(&mut self, input: NodeId, c: f32) -> Result<NodeId> {
        let v: Vec<f32> = self.value(input).data().iter().map(|&x| x * c).collect();
        let needs = self.needs(input);
        let value = Tensor::new(self.value(input).shape(), v)?;
        self.push(value, Step::MulScalar { input, c }, needs, "mul_scalar")
    }

    pub fn abs(&mut self, input: NodeId) -> Result<NodeId> {
        let v: Vec<f32> = self.value(input).data().iter().map(|&x| x.abs()).collect();
        let needs = self.needs(input);
        let value = Tensor::new(self.value(input).shape(), v)?;
        self.push(value, Step::Abs { input }, needs, "abs")
    }

    /// sqrt(x + eps), defined for x >= -eps; keeps the gradient bounded at x = 0.
    pub fn sqrt_eps(&mut self, input: NodeId, eps: f32) -> Result<NodeId> {
        let v: Vec<f32> = self.value(input).data().iter().map(|&x| (x + eps).sqrt()).collect();
        let needs = self.needs(input);
        let value = Tensor::new(self.value(input).shape(), v)?;
        self.push(value, Step::SqrtEps { input }, needs, "sqrt_eps")
    }

    /// Elementwise Huber penalty of the input residual.
    pub fn huber_elem(&mut self, input: NodeId, delta: f32) -> Result<NodeId> {
        if !(delta > 0.0) {
            return Err(TensorError::InvalidArgument(format!("huber delta {delta}")));
        }
        let v: Vec<f32> = self
            .value(input)
            .data()
            .iter()
            .map(|&e| {
                if e.abs() <= delta {
                    0.5 * e * e
                } else {
                    delta * (e.abs() - 0.5 * delta)
                }
            })
            .collect();
        let needs = self.needs(input);
        let value = Tensor::new(self.value(input).shape(), v)?;
        self.push(value, Step::HuberElem { input, delta }, needs, "huber_elem")
    }

    /// Mean over all elements, as a scalar node. The sum is accumulated in
    /// f64 so reductions stay stable on large tensors.
    pub fn mean_all(&mut self, input: NodeId) -> Result<NodeId> {
        let data = self.value(input).data();
        let sum: f64 = data.iter().map(|&x| x as f64).sum();
        let mean = (sum / data.len() as f64) as f32;
        let needs = self.needs(input);
        self.push(Tensor::scalar(mean), Step::MeanAll { input }, needs, "mean_all")
    }

    /// Pad spatially by replicating edge pixels.
    pub fn replicate_pad(&mut self, input: NodeId, pad: usize) -> Result<NodeId> {
        let [n, c, h, w] = self.value(input).shape();
        let (oh, ow) = (h + 2 * pad, w + 2 * pad);
        let x = self.value(input).data();
        let mut out = vec![0.0f32; n * c * oh * ow];
        for img in 0..n {
            for ch in 0..c {
                let plane = (img * c + ch) * h * w;
                let oplane = (img * c + ch) * oh * ow;
                for oy in 0..oh {
                    let sy = (oy as isize - pad as isize).clamp(0, h as isize - 1) as usize;
                    for ox in 0..ow {
                        let sx = (ox as isize - pad as isize).clamp(0, w as isize - 1) as usize;
                        out[oplane + oy * ow + ox] = x[plane + sy * w + sx];
                    }
                }
            }
        }
        let needs = self.needs(input);
        let value = Tensor::new([n, c, oh, ow], out)?;
        self.push(value, Step::ReplicatePad { input, pad }, needs, "replicate_pad")
    }

    pub fn reshape(&mut self, input: NodeId, shape: Shape) -> Result<NodeId> {
        let value = self.value(input).reshaped(shape)?;
        let needs = self.needs(input);
        self.push(value, Step::Reshape { input }, needs, "reshape")
    }

    /// Scalar op with a caller-computed value and gradient: backward adds
    /// `dy * grad_coeff` to the input. Lets higher layers define losses whose
    /// closed-form input gradient is known (e.g. soft Dice over class sums).
    pub fn custom_scalar(
        &mut self,
        input: NodeId,
        value: f32,
        grad_coeff: Vec<f32>,
    ) -> Result<NodeId> {
        if grad_coeff.len() != self.value(input).numel() {
            return Err(TensorError::ShapeMismatch {
                op: "custom_scalar",
                detail: format!(
                    "grad_coeff has {} values for input of {}",
                    grad_coeff.len(),
                    self.value(input).numel()
                ),
            });
        }
        if grad_coeff.iter().any(|g| !g.is_finite()) {
            return Err(TensorError::NonFinite { op: "custom_scalar" });
        }
        let needs = self.needs(input);
        self.push(
            Tensor::scalar(value),
            Step::CustomScalar { input, grad_coeff },
            needs,
            "custom_scalar",
        )
    }

    /// Reverse pass from a finite scalar loss. Gradients accumulate on every
    /// node that (transitively) depends on a trainable leaf.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let value = self.value(loss);
        let v = value.scalar_value()?;
        if !v.is_finite() {
            return Err(TensorError::NonFinite { op: "backward" });
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            if self.nodes[id].grad.is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let deltas = self.parent_grads(id)?;
            for (pid, delta) in deltas {
                self.accumulate(pid, delta);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: usize, delta: Vec<f32>) {
        match &mut self.nodes[id].grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta.iter()) {
                    *gi += di;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Compute the gradient contribution for each parent of `id` that needs one.
    fn parent_grads(&self, id: usize) -> Result<Vec<(usize, Vec<f32>)>> {
        let node = &self.nodes[id];
        let dy = node.grad.as_ref().expect("caller checked");
        let mut out: Vec<(usize, Vec<f32>)> = Vec::new();
        match &node.step {
            Step::Leaf { .. } => {}
            Step::Conv2d { input, weight, bias, dims } => {
                let want_dx = self.needs(*input);
                let want_dw = self.needs(*weight);
                let want_db = bias.map_or(false, |b| self.needs(b));
                let grads = conv2d_backward(
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    dy,
                    dims,
                    want_dx,
                    want_dw,
                    want_db,
                );
                if let Some(dx) = grads.dx {
                    out.push((input.0, dx));
                }
                if let Some(dw) = grads.dw {
                    out.push((weight.0, dw));
                }
                if let Some(db) = grads.db {
                    out.push((bias.unwrap().0, db));
                }
            }
            Step::MaxPool2 { input, argmax } => {
                if self.needs(*input) {
                    let mut dx = vec![0.0f32; self.value(*input).numel()];
                    for (o, &src) in argmax.iter().enumerate() {
                        dx[src as usize] += dy[o];
                    }
                    out.push((input.0, dx));
                }
            }
            Step::Upsample2 { input } => {
                if self.needs(*input) {
                    let [n, c, h, w] = self.value(*input).shape();
                    let (oh, ow) = (h * 2, w * 2);
                    let mut dx = vec![0.0f32; n * c * h * w];
                    for img in 0..n {
                        for ch in 0..c {
                            let plane = (img * c + ch) * h * w;
                            let oplane = (img * c + ch) * oh * ow;
                            for y in 0..h {
                                for x in 0..w {
                                    let base = oplane + (2 * y) * ow + 2 * x;
                                    dx[plane + y * w + x] = dy[base]
                                        + dy[base + 1]
                                        + dy[base + ow]
                                        + dy[base + ow + 1];
                                }
                            }
                        }
                    }
                    out.push((input.0, dx));
                }
            }
            Step::Relu { input } => {
                if self.needs(*input) {
                    let x = self.value(*input).data();
                    let dx: Vec<f32> =
                        x.iter().zip(dy.iter()).map(|(&x, &g)| if x > 0.0 { g } else { 0.0 }).collect();
                    out.push((input.0, dx));
                }
            }
            Step::Sigmoid { input } => {
                if self.needs(*input) {
                    let y = node.value.data();
                    let dx: Vec<f32> =
                        y.iter().zip(dy.iter()).map(|(&y, &g)| g * y * (1.0 - y)).collect();
                    out.push((input.0, dx));
                }
            }
            Step::SoftmaxChannels { input } => {
                if self.needs(*input) {
                    let [n, c, h, w] = node.value.shape();
                    let y = node.value.data();
                    let plane = h * w;
                    let mut dx = vec![0.0f32; y.len()];
                    for img in 0..n {
                        for pix in 0..plane {
                            let at = |ch: usize| (img * c + ch) * plane + pix;
                            let mut dot = 0.0f32;
                            for ch in 0..c {
                                dot += dy[at(ch)] * y[at(ch)];
                            }
                            for ch in 0..c {
                                dx[at(ch)] = y[at(ch)] * (dy[at(ch)] - dot);
                            }
                        }
                    }
                    out.push((input.0, dx));
                }
            }
            Step::Dropout { input, mask } => {
                if self.needs(*input) {
                    let dx = match mask {
                        Some(mask) => dy.iter().zip(mask.iter()).map(|(&g, &m)| g * m).collect(),
                        None => dy.clone(),
                    };
                    out.push((input.0, dx));
                }
            }
            Step::ConcatChannels { a, b } => {
                let [n, ca, h, w] = self.value(*a).shape();
                let cb = self.value(*b).shape()[1];
                let plane = h * w;
                if self.needs(*a) {
                    let mut da = vec![0.0f32; n * ca * plane];
                    for img in 0..n {
                        let src = img * (ca + cb) * plane;
                        da[img * ca * plane..(img + 1) * ca * plane]
                            .copy_from_slice(&dy[src..src + ca * plane]);
                    }
                    out.push((a.0, da));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0f32; n * cb * plane];
                    for img in 0..n {
                        let src = img * (ca + cb) * plane + ca * plane;
                        db[img * cb * plane..(img + 1) * cb * plane]
                            .copy_from_slice(&dy[src..src + cb * plane]);
                    }
                    out.push((b.0, db));
                }
            }
            Step::Add { a, b } => {
                if self.needs(*a) {
                    out.push((a.0, dy.clone()));
                }
                if self.needs(*b) {
                    out.push((b.0, dy.clone()));
                }
            }
            Step::Sub { a, b } => {
                if self.needs(*a) {
                    out.push((a.0, dy.clone()));
                }
                if self.needs(*b) {
                    out.push((b.0, dy.iter().map(|g| -g).collect()));
                }
            }
            Step::Mul { a, b } => {
                if self.needs(*a) {
                    let bv = self.value(*b).data();
                    out.push((a.0, dy.iter().zip(bv.iter()).map(|(&g, &y)| g * y).collect()));
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    out.push((b.0, dy.iter().zip(av.iter()).map(|(&g, &x)| g * x).collect()));
                }
            }
            Step::Div { a, b } => {
                let bv = self.value(*b).data();
                if self.needs(*a) {
                    out.push((a.0, dy.iter().zip(bv.iter()).map(|(&g, &y)| g / y).collect()));
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    let db: Vec<f32> = dy
                        .iter()
                        .zip(av.iter())
                        .zip(bv.iter())
                        .map(|((&g, &x), &y)| -g * x / (y * y))
                        .collect();
                    out.push((b.0, db));
                }
            }
            Step::AddScalar { input } => {
                if self.needs(*input) {
                    out.push((input.0, dy.clone()));
                }
            }
            Step::MulScalar { input, c } => {
                if self.needs(*input) {
                    out.push((input.0, dy.iter().map(|g| g * c).collect()));
                }
            }
            Step::Abs { input } => {
                if self.needs(*input) {
                    let x = self.value(*input).data();
                    let dx: Vec<f32> = x
                        .iter()
                        .zip(dy.iter())
                        .map(|(&x, &g)| if x > 0.0 { g } else if x < 0.0 { -g } else { 0.0 })
                        .collect();
                    out.push((input.0, dx));
                }
            }
            Step::SqrtEps { input } => {
                if self.needs(*input) {
                    let y = node.value.data();
                    let dx: Vec<f32> =
                        y.iter().zip(dy.iter()).map(|(&y, &g)| g * 0.5 / y).collect();
                    out.push((input.0, dx));
                }
            }
            Step::HuberElem { input, delta } => {
                if self.needs(*input) {
                    let x = self.value(*input).data();
                    let dx: Vec<f32> = x
                        .iter()
                        .zip(dy.iter())
                        .map(|(&e, &g)| g * e.clamp(-delta, *delta))
                        .collect();
                    out.push((input.0, dx));
                }
            }
            Step::MeanAll { input } => {
                if self.needs(*input) {
                    let n = self.value(*input).numel();
                    let g = dy[0] / n as f32;
                    out.push((input.0, vec![g; n]));
                }
            }
            Step::ReplicatePad { input, pad } => {
                if self.needs(*input) {
                    let [n, c, h, w] = self.value(*input).shape();
                    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
                    let mut dx = vec![0.0f32; n * c * h * w];
                    for img in 0..n {
                        for ch in 0..c {
                            let plane = (img * c + ch) * h * w;
                            let oplane = (img * c + ch) * oh * ow;
                            for oy in 0..oh {
                                let sy =
                                    (oy as isize - *pad as isize).clamp(0, h as isize - 1) as usize;
                                for ox in 0..ow {
                                    let sx = (ox as isize - *pad as isize)
                                        .clamp(0, w as isize - 1)
                                        as usize;
                                    dx[plane + sy * w + sx] += dy[oplane + oy * ow + ox];
                                }
                            }
                        }
                    }
                    out.push((input.0, dx));
                }
            }
            Step::Reshape { input } => {
                if self.needs(*input) {
                    out.push((input.0, dy.clone()));
                }
            }
            Step::CustomScalar { input, grad_coeff } => {
                if self.needs(*input) {
                    let g = dy[0];
                    out.push((input.0, grad_coeff.iter().map(|&c| c * g).collect()));
                }
            }
        }
        Ok(out)
    }

    /// Collect (name, gradient) pairs for every named parameter leaf that
    /// received a gradient. Ordered by node creation.
    pub fn take_param_grads(&mut self) -> Vec<(String, Vec<f32>)> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            if let Step::Leaf { param: Some(name) } = &node.step {
                if let Some(grad) = node.grad.take() {
                    out.push((name.clone(), grad));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(shape: Shape, data: Vec<f32>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn maxpool_picks_window_max() {
        let mut g = Graph::eval();
        let x = g.input(tensor([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        let y = g.maxpool2(x).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        let mut g = Graph::eval();
        let x = g.input(Tensor::zeros([1, 1, 3, 4])).unwrap();
        assert!(matches!(g.maxpool2(x), Err(TensorError::OddDims { h: 3, w: 4 })));
    }

    #[test]
    fn upsample_then_maxpool_is_identity_for_distinct_values() {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut vals: Vec<f32> = (0..48).map(|i| i as f32 * 0.25 - 6.0).collect();
        vals.shuffle(&mut rng);
        let t = tensor([1, 3, 4, 4], vals);
        let mut g = Graph::eval();
        let x = g.input(t.clone()).unwrap();
        let up = g.upsample2(x).unwrap();
        let back = g.maxpool2(up).unwrap();
        assert_eq!(g.value(back).data(), t.data());
    }

    #[test]
    fn dropout_p0_and_eval_mode_are_identity() {
        let t = tensor([1, 1, 2, 2], vec![1.0, -2.0, 3.0, -4.0]);
        let mut g = Graph::train(1, 0);
        let x = g.input(t.clone()).unwrap();
        let y = g.dropout(x, 0.0).unwrap();
        assert!(g.value(y).bit_eq(&t));

        let mut g = Graph::eval();
        let x = g.input(t.clone()).unwrap();
        let y = g.dropout(x, 0.5).unwrap();
        assert!(g.value(y).bit_eq(&t));
    }

    #[test]
    fn dropout_training_scales_survivors_deterministically() {
        let t = Tensor::full([1, 1, 16, 16], 1.0);
        let run = |seed, stream| {
            let mut g = Graph::train(seed, stream);
            let x = g.input(t.clone()).unwrap();
            let y = g.dropout(x, 0.25).unwrap();
            g.value(y).data().to_vec()
        };
        let a = run(7, 3);
        let b = run(7, 3);
        assert_eq!(a, b);
        let c = run(7, 4);
        assert_ne!(a, c);
        for v in &a {
            assert!(*v == 0.0 || (*v - 1.0 / 0.75).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts() {
        let mut g = Graph::eval();
        let logits = tensor([1, 3, 2, 2], (0..12).map(|i| (i as f32) * 0.3 - 1.0).collect());
        let x = g.input(logits.clone()).unwrap();
        let s = g.softmax_channels(x).unwrap();
        let sv = g.value(s).data().to_vec();
        for pix in 0..4 {
            let total: f32 = (0..3).map(|c| sv[c * 4 + pix]).sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
        // additive shift per pixel leaves the softmax unchanged
        let mut shifted = logits.clone();
        for c in 0..3 {
            for pix in 0..4 {
                shifted.data_mut()[c * 4 + pix] += 5.0;
            }
        }
        let x2 = g.input(shifted).unwrap();
        let s2 = g.softmax_channels(x2).unwrap();
        for (a, b) in g.value(s).data().iter().zip(g.value(s2).data().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_loss_gradient_is_exact() {
        // loss = mean(w * x) with x constant: dloss/dw = x / numel
        let mut g = Graph::eval();
        let x_t = tensor([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let w = g.param("w", Tensor::full([1, 1, 2, 2], 0.5), true).unwrap();
        let x = g.input(x_t.clone()).unwrap();
        let prod = g.mul(w, x).unwrap();
        let loss = g.mean_all(prod).unwrap();
        g.backward(loss).unwrap();
        let grads = g.take_param_grads();
        assert_eq!(grads.len(), 1);
        let (name, grad) = &grads[0];
        assert_eq!(name, "w");
        for (gi, xi) in grad.iter().zip(x_t.data().iter()) {
            assert_eq!(*gi, xi / 4.0);
        }
    }

    #[test]
    fn non_finite_forward_aborts() {
        let mut g = Graph::eval();
        let a = g.input(Tensor::scalar(1.0)).unwrap();
        let b = g.input(Tensor::scalar(0.0)).unwrap();
        assert!(matches!(g.div(a, b), Err(TensorError::NonFinite { op: "div" })));
    }

    #[test]
    fn frozen_param_gets_no_grad() {
        let mut g = Graph::eval();
        let w = g.param("enc.w", Tensor::scalar(2.0), false).unwrap();
        let v = g.param("dec.w", Tensor::scalar(3.0), true).unwrap();
        let prod = g.mul(w, v).unwrap();
        let loss = g.mean_all(prod).unwrap();
        g.backward(loss).unwrap();
        let grads = g.take_param_grads();
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0].0, "dec.w");
    }
}
