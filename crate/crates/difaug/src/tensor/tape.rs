//! Wengert tape: op recording and reverse-mode gradients.

use crate::error::{DifaugError, Result};

use super::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    LeakyRelu(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Sum(usize),
    Mean(usize),
    /// Mean absolute difference between two same-shape tensors.
    L1(usize, usize),
    Matmul(usize, usize),
    Conv2d { input: usize, kernel: usize, stride: usize, pad: usize },
    BiasAdd { input: usize, bias: usize },
    UpsampleNearest2(usize),
    PixelShuffle { input: usize, factor: usize },
    /// Mean of numerically stable binary cross entropy over all elements,
    /// single hard target shared by the whole tensor.
    BceWithLogits { logit: usize, target: f64 },
    /// Same data, new shape (row-major layout is unchanged).
    Reshape(usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients w.r.t. every differentiable node of one backward pass.
pub struct Grads {
    adj: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn get(&self, var: VarId) -> Option<&[f64]> {
        self.adj[var.0].as_deref()
    }
}

pub const LEAKY_SLOPE: f64 = 0.2;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Operation tape for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: VarId) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> VarId {
        self.nodes.push(Node { op, value, requires_grad });
        VarId(self.nodes.len() - 1)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    /// Record an input tensor. Its `requires_grad` flag decides whether
    /// backward produces a gradient for it.
    pub fn leaf(&mut self, t: Tensor) -> VarId {
        let rg = t.requires_grad;
        self.push(Op::Leaf, t, rg)
    }

    fn binary_same_shape(&mut self, a: VarId, b: VarId, name: &str) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        if ta.shape() != tb.shape() {
            return Err(DifaugError::Shape(format!(
                "{name}: shapes {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        Ok((ta.shape().to_vec(), ta.data().to_vec(), tb.data().to_vec()))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (shape, da, db) = self.binary_same_shape(a, b, "add")?;
        let out: Vec<f64> = da.iter().zip(&db).map(|(x, y)| x + y).collect();
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(Op::Add(a.0, b.0), Tensor::from_vec(shape, out)?, rg))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (shape, da, db) = self.binary_same_shape(a, b, "sub")?;
        let out: Vec<f64> = da.iter().zip(&db).map(|(x, y)| x - y).collect();
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(Op::Sub(a.0, b.0), Tensor::from_vec(shape, out)?, rg))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (shape, da, db) = self.binary_same_shape(a, b, "mul")?;
        let out: Vec<f64> = da.iter().zip(&db).map(|(x, y)| x * y).collect();
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(Op::Mul(a.0, b.0), Tensor::from_vec(shape, out)?, rg))
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let ta = &self.nodes[a.0].value;
        let out: Vec<f64> = ta.data().iter().map(|x| x * c).collect();
        let value = Tensor::from_vec(ta.shape().to_vec(), out).expect("same shape");
        let rg = self.requires(a.0);
        self.push(Op::Scale(a.0, c), value, rg)
    }

    fn unary(&mut self, a: VarId, op: Op, f: impl Fn(f64) -> f64) -> VarId {
        let ta = &self.nodes[a.0].value;
        let out: Vec<f64> = ta.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::from_vec(ta.shape().to_vec(), out).expect("same shape");
        let rg = self.requires(a.0);
        self.push(op, value, rg)
    }

    pub fn leaky_relu(&mut self, a: VarId) -> VarId {
        self.unary(a, Op::LeakyRelu(a.0), |x| if x > 0.0 { x } else { LEAKY_SLOPE * x })
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        self.unary(a, Op::Sigmoid(a.0), sigmoid)
    }

    pub fn exp(&mut self, a: VarId) -> VarId {
        self.unary(a, Op::Exp(a.0), f64::exp)
    }

    pub fn log(&mut self, a: VarId) -> VarId {
        self.unary(a, Op::Log(a.0), f64::ln)
    }

    pub fn sum(&mut self, a: VarId) -> VarId {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        let rg = self.requires(a.0);
        self.push(Op::Sum(a.0), Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, a: VarId) -> VarId {
        let d = self.nodes[a.0].value.data();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.requires(a.0);
        self.push(Op::Mean(a.0), Tensor::scalar(m), rg)
    }

    /// Mean absolute difference (scalar).
    pub fn l1(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (_, da, db) = self.binary_same_shape(a, b, "l1")?;
        let m = da.iter().zip(&db).map(|(x, y)| (x - y).abs()).sum::<f64>() / da.len() as f64;
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(Op::L1(a.0, b.0), Tensor::scalar(m), rg))
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(DifaugError::Shape(format!(
                "matmul: {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let n = tb.shape()[1];
        let mut out = vec![0.0; m * n];
        matmul_into(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(Op::Matmul(a.0, b.0), Tensor::from_vec(vec![m, n], out)?, rg))
    }

    /// 2-D cross-correlation (no kernel flip), zero padding.
    /// input [C_in,H,W], kernel [C_out,C_in,kH,kW].
    pub fn conv2d(&mut self, input: VarId, kernel: VarId, stride: usize, pad: usize) -> Result<VarId> {
        let ti = &self.nodes[input.0].value;
        let tk = &self.nodes[kernel.0].value;
        let geom = ConvGeom::check(ti.shape(), tk.shape(), stride, pad)?;
        let mut out = vec![0.0; geom.c_out * geom.oh * geom.ow];
        conv2d_forward(ti.data(), tk.data(), &mut out, &geom);
        let rg = self.requires(input.0) || self.requires(kernel.0);
        Ok(self.push(
            Op::Conv2d { input: input.0, kernel: kernel.0, stride, pad },
            Tensor::from_vec(vec![geom.c_out, geom.oh, geom.ow], out)?,
            rg,
        ))
    }

    /// Broadcast a per-channel bias [C] over an image tensor [C,H,W].
    pub fn bias_add(&mut self, input: VarId, bias: VarId) -> Result<VarId> {
        let ti = &self.nodes[input.0].value;
        let tb = &self.nodes[bias.0].value;
        if ti.shape().len() != 3 || tb.shape().len() != 1 || tb.shape()[0] != ti.shape()[0] {
            return Err(DifaugError::Shape(format!(
                "bias_add: input {:?}, bias {:?}",
                ti.shape(),
                tb.shape()
            )));
        }
        let (c, h, w) = (ti.shape()[0], ti.shape()[1], ti.shape()[2]);
        let mut out = ti.data().to_vec();
        for ch in 0..c {
            let b = tb.data()[ch];
            for v in &mut out[ch * h * w..(ch + 1) * h * w] {
                *v += b;
            }
        }
        let rg = self.requires(input.0) || self.requires(bias.0);
        Ok(self.push(
            Op::BiasAdd { input: input.0, bias: bias.0 },
            Tensor::from_vec(vec![c, h, w], out)?,
            rg,
        ))
    }

    /// Nearest-neighbor ×2 upsample of [C,H,W].
    pub fn upsample_nearest2(&mut self, input: VarId) -> Result<VarId> {
        let ti = &self.nodes[input.0].value;
        if ti.shape().len() != 3 {
            return Err(DifaugError::Shape(format!(
                "upsample_nearest2: expected [C,H,W], got {:?}",
                ti.shape()
            )));
        }
        let (c, h, w) = (ti.shape()[0], ti.shape()[1], ti.shape()[2]);
        let mut out = vec![0.0; c * 4 * h * w];
        let (oh, ow) = (2 * h, 2 * w);
        for ch in 0..c {
            for y in 0..oh {
                let src = &ti.data()[ch * h * w + (y / 2) * w..][..w];
                let dst = &mut out[ch * oh * ow + y * ow..][..ow];
                for x in 0..ow {
                    dst[x] = src[x / 2];
                }
            }
        }
        let rg = self.requires(input.0);
        Ok(self.push(
            Op::UpsampleNearest2(input.0),
            Tensor::from_vec(vec![c, oh, ow], out)?,
            rg,
        ))
    }

    /// Depth-to-space: [C·r²,H,W] -> [C,rH,rW].
    pub fn pixel_shuffle(&mut self, input: VarId, factor: usize) -> Result<VarId> {
        let ti = &self.nodes[input.0].value;
        let r2 = factor * factor;
        if ti.shape().len() != 3 || ti.shape()[0] % r2 != 0 {
            return Err(DifaugError::Shape(format!(
                "pixel_shuffle: input {:?} not divisible into factor {factor}",
                ti.shape()
            )));
        }
        let (c_in, h, w) = (ti.shape()[0], ti.shape()[1], ti.shape()[2]);
        let c_out = c_in / r2;
        let (oh, ow) = (factor * h, factor * w);
        let mut out = vec![0.0; c_in * h * w];
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y, ry) = (oy / factor, oy % factor);
                    let (x, rx) = (ox / factor, ox % factor);
                    let ci = co * r2 + ry * factor + rx;
                    out[co * oh * ow + oy * ow + ox] = ti.data()[ci * h * w + y * w + x];
                }
            }
        }
        let rg = self.requires(input.0);
        Ok(self.push(
            Op::PixelShuffle { input: input.0, factor },
            Tensor::from_vec(vec![c_out, oh, ow], out)?,
            rg,
        ))
    }

    /// Mean stable BCE over all logits against one hard target.
    pub fn bce_with_logits(&mut self, logit: VarId, target: f64) -> Result<VarId> {
        if target != 0.0 && target != 1.0 {
            return Err(DifaugError::InvalidArgument(format!(
                "bce_with_logits: target must be 0 or 1, got {target}"
            )));
        }
        let d = self.nodes[logit.0].value.data();
        let loss = d.iter().map(|&z| softplus(z) - target * z).sum::<f64>() / d.len() as f64;
        let rg = self.requires(logit.0);
        Ok(self.push(
            Op::BceWithLogits { logit: logit.0, target },
            Tensor::scalar(loss),
            rg,
        ))
    }

    pub fn reshape(&mut self, a: VarId, shape: Vec<usize>) -> Result<VarId> {
        let ta = &self.nodes[a.0].value;
        let numel: usize = shape.iter().product();
        if numel != ta.numel() {
            return Err(DifaugError::Shape(format!(
                "reshape: {:?} to {shape:?}",
                ta.shape()
            )));
        }
        let value = Tensor::from_vec(shape, ta.data().to_vec())?;
        let rg = self.requires(a.0);
        Ok(self.push(Op::Reshape(a.0), value, rg))
    }

    /// Reverse pass from a scalar loss. Repeated calls return fresh gradient
    /// sets; accumulation into parameters happens in [`super::ParamStore`].
    pub fn backward(&self, loss: VarId) -> Result<Grads> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(DifaugError::Shape(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(out_adj) = adj[id].take() else { continue };
            self.propagate(id, &out_adj, &mut adj);
            adj[id] = Some(out_adj);
        }
        Ok(Grads { adj })
    }

    fn accumulate(&self, adj: &mut Vec<Option<Vec<f64>>>, id: usize, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[id].requires_grad {
            return;
        }
        let buf = adj[id].get_or_insert_with(|| vec![0.0; self.nodes[id].value.numel()]);
        f(buf);
    }

    fn propagate(&self, id: usize, g: &[f64], adj: &mut Vec<Option<Vec<f64>>>) {
        match self.nodes[id].op.clone() {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(adj, a, |d| axpy(d, g, 1.0));
                self.accumulate(adj, b, |d| axpy(d, g, 1.0));
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, a, |d| axpy(d, g, 1.0));
                self.accumulate(adj, b, |d| axpy(d, g, -1.0));
            }
            Op::Mul(a, b) => {
                let da = self.nodes[a].value.data().to_vec();
                let db = self.nodes[b].value.data().to_vec();
                self.accumulate(adj, a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * db[i];
                    }
                });
                self.accumulate(adj, b, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * da[i];
                    }
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(adj, a, |d| axpy(d, g, c));
            }
            Op::LeakyRelu(a) => {
                let input = self.nodes[a].value.data().to_vec();
                self.accumulate(adj, a, |d| {
                    for i in 0..d.len() {
                        // subgradient at 0 is the negative-side slope
                        let s = if input[i] > 0.0 { 1.0 } else { LEAKY_SLOPE };
                        d[i] += g[i] * s;
                    }
                });
            }
            Op::Sigmoid(a) => {
                let out = self.nodes[id].value.data().to_vec();
                self.accumulate(adj, a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                });
            }
            Op::Exp(a) => {
                let out = self.nodes[id].value.data().to_vec();
                self.accumulate(adj, a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * out[i];
                    }
                });
            }
            Op::Log(a) => {
                let input = self.nodes[a].value.data().to_vec();
                self.accumulate(adj, a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] / input[i];
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = g[0];
                self.accumulate(adj, a, |d| d.iter_mut().for_each(|v| *v += g0));
            }
            Op::Mean(a) => {
                let n = self.nodes[a].value.numel() as f64;
                let g0 = g[0] / n;
                self.accumulate(adj, a, |d| d.iter_mut().for_each(|v| *v += g0));
            }
            Op::L1(a, b) => {
                let da = self.nodes[a].value.data().to_vec();
                let db = self.nodes[b].value.data().to_vec();
                let n = da.len() as f64;
                let g0 = g[0] / n;
                let signs: Vec<f64> = da
                    .iter()
                    .zip(&db)
                    .map(|(x, y)| {
                        let diff = x - y;
                        if diff > 0.0 {
                            1.0
                        } else if diff < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(adj, a, |d| {
                    for i in 0..d.len() {
                        d[i] += g0 * signs[i];
                    }
                });
                self.accumulate(adj, b, |d| {
                    for i in 0..d.len() {
                        d[i] -= g0 * signs[i];
                    }
                });
            }
            Op::Matmul(a, b) => {
                let ta = self.nodes[a].value.clone();
                let tb = self.nodes[b].value.clone();
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                // dA = G · Bᵀ
                self.accumulate(adj, a, |d| {
                    for i in 0..m {
                        for j in 0..k {
                            let mut acc = 0.0;
                            for p in 0..n {
                                acc += g[i * n + p] * tb.data()[j * n + p];
                            }
                            d[i * k + j] += acc;
                        }
                    }
                });
                // dB = Aᵀ · G
                self.accumulate(adj, b, |d| {
                    for j in 0..k {
                        for p in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += ta.data()[i * k + j] * g[i * n + p];
                            }
                            d[j * n + p] += acc;
                        }
                    }
                });
            }
            Op::Conv2d { input, kernel, stride, pad } => {
                let ti = self.nodes[input].value.clone();
                let tk = self.nodes[kernel].value.clone();
                let geom = ConvGeom::check(ti.shape(), tk.shape(), stride, pad)
                    .expect("validated at forward");
                self.accumulate(adj, input, |d| conv2d_backward_input(tk.data(), g, d, &geom));
                self.accumulate(adj, kernel, |d| conv2d_backward_kernel(ti.data(), g, d, &geom));
            }
            Op::BiasAdd { input, bias } => {
                let shape = self.nodes[input].value.shape().to_vec();
                let (c, hw) = (shape[0], shape[1] * shape[2]);
                self.accumulate(adj, input, |d| axpy(d, g, 1.0));
                self.accumulate(adj, bias, |d| {
                    for ch in 0..c {
                        d[ch] += g[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
                    }
                });
            }
            Op::UpsampleNearest2(a) => {
                let shape = self.nodes[a].value.shape().to_vec();
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (2 * h, 2 * w);
                self.accumulate(adj, a, |d| {
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                d[ch * h * w + (oy / 2) * w + ox / 2] +=
                                    g[ch * oh * ow + oy * ow + ox];
                            }
                        }
                    }
                });
            }
            Op::PixelShuffle { input, factor } => {
                let shape = self.nodes[input].value.shape().to_vec();
                let r2 = factor * factor;
                let (c_in, h, w) = (shape[0], shape[1], shape[2]);
                let c_out = c_in / r2;
                let (oh, ow) = (factor * h, factor * w);
                self.accumulate(adj, input, |d| {
                    for co in 0..c_out {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let (y, ry) = (oy / factor, oy % factor);
                                let (x, rx) = (ox / factor, ox % factor);
                                let ci = co * r2 + ry * factor + rx;
                                d[ci * h * w + y * w + x] += g[co * oh * ow + oy * ow + ox];
                            }
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                self.accumulate(adj, a, |d| axpy(d, g, 1.0));
            }
            Op::BceWithLogits { logit, target } => {
                let z = self.nodes[logit].value.data().to_vec();
                let n = z.len() as f64;
                let g0 = g[0] / n;
                self.accumulate(adj, logit, |d| {
                    for i in 0..d.len() {
                        d[i] += g0 * (sigmoid(z[i]) - target);
                    }
                });
            }
        }
    }

    /// Scan all recorded values; reports the first non-finite node.
    pub fn check_finite(&self) -> Result<()> {
        for (id, node) in self.nodes.iter().enumerate() {
            if !node.value.is_finite() {
                return Err(DifaugError::NonFinite {
                    op_id: id,
                    detail: format!("{:?}", node.op),
                });
            }
        }
        Ok(())
    }

    /// Recompute every non-leaf value from its recorded inputs. Used by tests
    /// to assert the tape replays bit-identically.
    pub fn replay_values(&self) -> Vec<Tensor> {
        let mut replay = Tape::new();
        for node in &self.nodes {
            match node.op {
                Op::Leaf => {
                    replay.leaf(node.value.clone());
                }
                Op::Add(a, b) => {
                    replay.add(VarId(a), VarId(b)).unwrap();
                }
                Op::Sub(a, b) => {
                    replay.sub(VarId(a), VarId(b)).unwrap();
                }
                Op::Mul(a, b) => {
                    replay.mul(VarId(a), VarId(b)).unwrap();
                }
                Op::Scale(a, c) => {
                    replay.scale(VarId(a), c);
                }
                Op::LeakyRelu(a) => {
                    replay.leaky_relu(VarId(a));
                }
                Op::Sigmoid(a) => {
                    replay.sigmoid(VarId(a));
                }
                Op::Exp(a) => {
                    replay.exp(VarId(a));
                }
                Op::Log(a) => {
                    replay.log(VarId(a));
                }
                Op::Sum(a) => {
                    replay.sum(VarId(a));
                }
                Op::Mean(a) => {
                    replay.mean(VarId(a));
                }
                Op::L1(a, b) => {
                    replay.l1(VarId(a), VarId(b)).unwrap();
                }
                Op::Matmul(a, b) => {
                    replay.matmul(VarId(a), VarId(b)).unwrap();
                }
                Op::Conv2d { input, kernel, stride, pad } => {
                    replay.conv2d(VarId(input), VarId(kernel), stride, pad).unwrap();
                }
                Op::BiasAdd { input, bias } => {
                    replay.bias_add(VarId(input), VarId(bias)).unwrap();
                }
                Op::UpsampleNearest2(a) => {
                    replay.upsample_nearest2(VarId(a)).unwrap();
                }
                Op::PixelShuffle { input, factor } => {
                    replay.pixel_shuffle(VarId(input), factor).unwrap();
                }
                Op::BceWithLogits { logit, target } => {
                    replay.bce_with_logits(VarId(logit), target).unwrap();
                }
                Op::Reshape(a) => {
                    replay.reshape(VarId(a), node.value.shape().to_vec()).unwrap();
                }
            }
        }
        replay.nodes.into_iter().map(|n| n.value).collect()
    }
}

fn axpy(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// Validated convolution geometry.
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn check(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
        if input.len() != 3 || kernel.len() != 4 {
            return Err(DifaugError::Shape(format!(
                "conv2d: input must be [C,H,W] and kernel [O,C,kH,kW], got {input:?} / {kernel:?}"
            )));
        }
        let (c_in, h, w) = (input[0], input[1], input[2]);
        let (c_out, kc, kh, kw) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if kc != c_in {
            return Err(DifaugError::Shape(format!(
                "conv2d: input has {c_in} channels but kernel expects {kc}"
            )));
        }
        if kh == 0 || kw == 0 {
            return Err(DifaugError::InvalidArgument("conv2d: empty kernel".into()));
        }
        if stride == 0 {
            return Err(DifaugError::InvalidArgument("conv2d: stride must be positive".into()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(DifaugError::Shape(format!(
                "conv2d: padded input {}x{} smaller than kernel {kh}x{kw}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Ok(ConvGeom { c_in, h, w, c_out, kh, kw, stride, pad, oh, ow })
    }

    /// Valid output ranges for one kernel offset along an axis of length
    /// `len`: all o with 0 <= o·stride + k − pad < len.
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let lo = if k >= self.pad {
            0
        } else {
            (self.pad - k).div_ceil(self.stride)
        };
        let hi_incl = (len + self.pad - 1 - k) / self.stride;
        (lo, hi_incl.min(out_len.saturating_sub(1)))
    }
}

fn conv2d_forward(input: &[f64], kernel: &[f64], out: &mut [f64], g: &ConvGeom) {
    for o in 0..g.c_out {
        for ic in 0..g.c_in {
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.oh);
                for kx in 0..g.kw {
                    let w = kernel[((o * g.c_in + ic) * g.kh + ky) * g.kw + kx];
                    if w == 0.0 {
                        continue;
                    }
                    let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.ow);
                    for oy in oy_lo..=oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let irow = &input[(ic * g.h + iy) * g.w..][..g.w];
                        let orow = &mut out[(o * g.oh + oy) * g.ow..][..g.ow];
                        for ox in ox_lo..=ox_hi {
                            let ix = ox * g.stride + kx - g.pad;
                            orow[ox] += w * irow[ix];
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_backward_input(kernel: &[f64], g_out: &[f64], d_in: &mut [f64], g: &ConvGeom) {
    for o in 0..g.c_out {
        for ic in 0..g.c_in {
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.oh);
                for kx in 0..g.kw {
                    let w = kernel[((o * g.c_in + ic) * g.kh + ky) * g.kw + kx];
                    if w == 0.0 {
                        continue;
                    }
                    let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.ow);
                    for oy in oy_lo..=oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &g_out[(o * g.oh + oy) * g.ow..][..g.ow];
                        let drow = &mut d_in[(ic * g.h + iy) * g.w..][..g.w];
                        for ox in ox_lo..=ox_hi {
                            let ix = ox * g.stride + kx - g.pad;
                            drow[ix] += w * grow[ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_backward_kernel(input: &[f64], g_out: &[f64], d_kernel: &mut [f64], g: &ConvGeom) {
    for o in 0..g.c_out {
        for ic in 0..g.c_in {
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.oh);
                for kx in 0..g.kw {
                    let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.ow);
                    let mut acc = 0.0;
                    for oy in oy_lo..=oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let irow = &input[(ic * g.h + iy) * g.w..][..g.w];
                        let grow = &g_out[(o * g.oh + oy) * g.ow..][..g.ow];
                        for ox in ox_lo..=ox_hi {
                            let ix = ox * g.stride + kx - g.pad;
                            acc += irow[ix] * grow[ox];
                        }
                    }
                    d_kernel[((o * g.c_in + ic) * g.kh + ky) * g.kw + kx] += acc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, shape: Vec<usize>, data: Vec<f64>) -> VarId {
        tape.leaf(Tensor::from_vec(shape, data).unwrap().with_grad())
    }

    #[test]
    fn mean_square_grad() {
        // loss = mean(x·x), x = [3] → grad [6]
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1], vec![3.0]);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.mean(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn sigmoid_grad_at_zero() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1], vec![0.0]);
        let s = tape.sigmoid(x);
        let loss = tape.sum(s);
        let grads = tape.backward(loss).unwrap();
        assert!((grads.get(x).unwrap()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn conv2d_scaling_identity() {
        // all-ones 1×3×3, 1×1×1×1 kernel [2.0] → all 2.0
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1, 3, 3], vec![1.0; 9]);
        let k = leaf(&mut tape, vec![1, 1, 1, 1], vec![2.0]);
        let y = tape.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 3, 3]);
        assert!(tape.value(y).data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv2d_hand_cross_correlation() {
        // [[1,2],[3,4]] ⋆ [[1,0],[0,1]] → 1·1 + 4·1 = 5
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let k = leaf(&mut tape, vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let y = tape.conv2d(x, k, 1, 0).unwrap();
        let v = tape.value(y);
        assert_eq!(v.shape(), &[1, 1, 1]);
        assert_eq!(v.data()[0], 5.0);
    }

    #[test]
    fn conv2d_shape_formula() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![3, 8, 8], vec![0.5; 3 * 64]);
        let k = leaf(&mut tape, vec![16, 3, 3, 3], vec![0.1; 16 * 27]);
        let y = tape.conv2d(x, k, 2, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[16, 4, 4]);
    }

    #[test]
    fn conv2d_channel_mismatch_rejected() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![3, 4, 4], vec![0.0; 48]);
        let k = leaf(&mut tape, vec![8, 2, 3, 3], vec![0.0; 8 * 2 * 9]);
        let err = tape.conv2d(x, k, 1, 1).unwrap_err();
        assert!(err.to_string().contains("channels"));
    }

    #[test]
    fn bce_trivial_values() {
        let mut tape = Tape::new();
        let z0 = leaf(&mut tape, vec![1], vec![0.0]);
        let l = tape.bce_with_logits(z0, 1.0).unwrap();
        assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);

        let z50 = leaf(&mut tape, vec![1], vec![50.0]);
        let l = tape.bce_with_logits(z50, 1.0).unwrap();
        let v = tape.value(l).data()[0];
        assert!(v.is_finite() && v < 1e-20);

        // logit ln 3, target 0 → ln 4
        let z = leaf(&mut tape, vec![1], vec![3f64.ln()]);
        let l = tape.bce_with_logits(z, 0.0).unwrap();
        assert!((tape.value(l).data()[0] - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_rejects_soft_target() {
        let mut tape = Tape::new();
        let z = leaf(&mut tape, vec![1], vec![0.0]);
        assert!(tape.bce_with_logits(z, 0.3).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![2], vec![1.0, 2.0]);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn l1_sign_grads() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![2], vec![2.0, -3.0]);
        let zero = tape.leaf(Tensor::from_vec(vec![2], vec![0.0, 0.0]).unwrap());
        let l = tape.l1(x, zero).unwrap();
        // scale by numel so the mean becomes a plain sum of |x_i|
        let loss = tape.scale(l, 2.0);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0, -1.0]);
    }

    #[test]
    fn backward_linearity() {
        // grad(a·f + b·g) == a·grad(f) + b·grad(g)
        let build = |a: f64, b: f64| -> (Vec<f64>, Vec<f64>) {
            let mut tape = Tape::new();
            let x = leaf(&mut tape, vec![3], vec![0.4, -1.2, 2.5]);
            let sig = tape.sigmoid(x);
            let f = tape.mean(sig);
            let sq = tape.mul(x, x).unwrap();
            let g = tape.sum(sq);
            let fa = tape.scale(f, a);
            let gb = tape.scale(g, b);
            let loss = tape.add(fa, gb).unwrap();
            let grads = tape.backward(loss).unwrap();
            let gx = grads.get(x).unwrap().to_vec();
            (gx, vec![])
        };
        let (g_f, _) = build(1.0, 0.0);
        let (g_g, _) = build(0.0, 1.0);
        let (g_mix, _) = build(2.5, -0.75);
        for i in 0..3 {
            let expect = 2.5 * g_f[i] - 0.75 * g_g[i];
            assert!((g_mix[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1, 4, 4], (0..16).map(|i| i as f64 * 0.17 - 1.0).collect());
        let k = leaf(&mut tape, vec![2, 1, 3, 3], (0..18).map(|i| (i as f64).sin()).collect());
        let c = tape.conv2d(x, k, 1, 1).unwrap();
        let r = tape.leaky_relu(c);
        let m = tape.mean(r);
        let _ = tape.bce_with_logits(m, 1.0).unwrap();
        let replayed = tape.replay_values();
        for (i, t) in replayed.iter().enumerate() {
            assert_eq!(t.data(), tape.nodes[i].value.data(), "node {i} differs");
        }
    }

    #[test]
    fn pixel_shuffle_roundtrip_shape() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![4, 2, 2], (0..16).map(|i| i as f64).collect());
        let y = tape.pixel_shuffle(x, 2).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 4, 4]);
        // depth-to-space layout: out[0][0..2][0..2] from channels 0..4 at (0,0)
        let v = tape.value(y).data();
        assert_eq!(&v[0..2], &[0.0, 4.0]);
        assert_eq!(&v[4..6], &[8.0, 12.0]);
    }

    #[test]
    fn upsample_nearest_duplicates() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1, 1, 2], vec![1.0, 2.0]);
        let y = tape.upsample_nearest2(x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }
}
