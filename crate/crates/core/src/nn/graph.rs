//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation together with its output value. Calling
//! [`Graph::backward`] walks the tape in reverse, producing gradients for every
//! node that depends on a parameter or on an input marked `requires_grad`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::param::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::ShapeError;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding; output shrinks by `k - 1`.
    Valid,
    /// Zero padding keeping `ceil(in / stride)` outputs.
    Same,
    /// Clamp-to-edge padding keeping `ceil(in / stride)` outputs.
    SameReplicate,
}

pub const BATCHNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    b: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
    padding: Padding,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn rows(&self) -> usize {
        self.b * self.oh * self.ow
    }

    /// Source pixel for output `(oy, ox)` and kernel tap `(ky, kx)`, or `None`
    /// when the tap falls in zero padding.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
        let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
        let inside = iy >= 0 && ix >= 0 && (iy as usize) < self.h && (ix as usize) < self.w;
        if inside {
            return Some((iy as usize, ix as usize));
        }
        match self.padding {
            Padding::SameReplicate => Some((
                iy.clamp(0, self.h as isize - 1) as usize,
                ix.clamp(0, self.w as isize - 1) as usize,
            )),
            _ => None,
        }
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Relu(Var),
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        /// Batch statistics (train mode) or fixed running statistics.
        batch_stats: bool,
    },
    Concat {
        a: Var,
        b: Var,
    },
    SliceChannels {
        input: Var,
        start: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sqrt(Var),
    Sum(Var),
    SoftmaxPair(Var),
    /// Scalar whose gradient w.r.t. `input` was computed during the forward pass.
    Scalar {
        input: Var,
        local_grad: Vec<f64>,
        kinks: u64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics produced by a train-mode batchnorm, to be folded into the
/// running averages by the caller.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant or input tensor.
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.input(value, false)
    }

    /// Snapshot of a parameter's current value. Gradients flow back to the
    /// store in [`Graph::backward`], for frozen parameters too.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id), true)
    }

    /// Cross-correlation of a `B x H x W x Cin` input with a `kh x kw x Cin x Cout`
    /// kernel plus optional bias of length `Cout`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var, ShapeError> {
        let (b, h, w, cin) = self.value(input).dims4()?;
        let (kh, kw, kcin, cout) = match self.value(kernel).shape()[..] {
            [kh, kw, ci, co] => (kh, kw, ci, co),
            _ => {
                return Err(ShapeError::mismatch(
                    "conv2d",
                    "kh x kw x Cin x Cout kernel",
                    self.value(kernel).shape(),
                ))
            }
        };
        if kcin != cin {
            return Err(ShapeError::mismatch(
                "conv2d",
                format!("input with {kcin} channels"),
                self.value(input).shape(),
            ));
        }
        if let Some(bv) = bias {
            if self.value(bv).len() != cout {
                return Err(ShapeError::mismatch(
                    "conv2d",
                    format!("bias of length {cout}"),
                    self.value(bv).shape(),
                ));
            }
        }
        if stride == 0 {
            return Err(ShapeError::mismatch("conv2d", "stride >= 1", &[stride]));
        }
        let (oh, ow, pad_top, pad_left) = match padding {
            Padding::Valid => {
                if h < kh || w < kw {
                    return Err(ShapeError::mismatch(
                        "conv2d",
                        format!("spatial dims >= {kh}x{kw}"),
                        self.value(input).shape(),
                    ));
                }
                ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
            }
            Padding::Same | Padding::SameReplicate => {
                let oh = h.div_ceil(stride);
                let ow = w.div_ceil(stride);
                let pad_h = ((oh - 1) * stride + kh).saturating_sub(h);
                let pad_w = ((ow - 1) * stride + kw).saturating_sub(w);
                (oh, ow, pad_h / 2, pad_w / 2)
            }
        };
        let geom = ConvGeom {
            b,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            stride,
            oh,
            ow,
            pad_top,
            pad_left,
            padding,
        };
        let cols = im2col(self.value(input).data(), &geom);
        let mut out = vec![0.0; geom.rows() * cout];
        if let Some(bv) = bias {
            let bias = self.value(bv).data();
            for row in out.chunks_exact_mut(cout) {
                row.copy_from_slice(bias);
            }
        }
        gemm_acc(&cols, self.value(kernel).data(), &mut out, geom.k(), cout);
        let rg = self.rg(input) || self.rg(kernel) || bias.is_some_and(|b| self.rg(b));
        let value = Tensor::new(&[b, oh, ow, cout], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
            rg,
        ))
    }

    /// 2x2 max pooling with stride 2. Ties go to the first element in
    /// row-major window order.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var, ShapeError> {
        let (b, h, w, c) = self.value(input).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(ShapeError::OddSpatial {
                op: "maxpool2",
                h,
                w,
            });
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(b * oh * ow * c);
        let mut argmax = Vec::with_capacity(b * oh * ow * c);
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best = usize::MAX;
                        let mut best_v = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let idx = ((bi * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                                if best == usize::MAX || x[idx] > best_v {
                                    best = idx;
                                    best_v = x[idx];
                                }
                            }
                        }
                        out.push(best_v);
                        argmax.push(best);
                    }
                }
            }
        }
        let value = Tensor::new(&[b, oh, ow, c], out)?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::MaxPool { input, argmax }, rg))
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(x.shape(), data).expect("same shape");
        let rg = self.rg(input);
        self.push(value, Op::Relu(input), rg)
    }

    /// Train-mode batchnorm over the batch and spatial axes. Returns the output
    /// and the batch statistics (biased variance).
    pub fn batchnorm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
    ) -> Result<(Var, BatchStats), ShapeError> {
        let c = self.check_bn(input, gamma, beta)?;
        let x = self.value(input).data();
        let n = (x.len() / c) as f64;
        let mut mean = vec![0.0; c];
        for row in x.chunks_exact(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for row in x.chunks_exact(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
        let v = self.bn_apply(input, gamma, beta, &mean, inv_std, true)?;
        Ok((v, BatchStats { mean, var }))
    }

    /// Inference-mode batchnorm with fixed statistics.
    pub fn batchnorm_infer(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
    ) -> Result<Var, ShapeError> {
        let c = self.check_bn(input, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(ShapeError::mismatch(
                "batchnorm",
                format!("running stats of length {c}"),
                &[mean.len(), var.len()],
            ));
        }
        let inv_std = var.iter().map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
        self.bn_apply(input, gamma, beta, mean, inv_std, false)
    }

    fn check_bn(&self, input: Var, gamma: Var, beta: Var) -> Result<usize, ShapeError> {
        let (_, _, _, c) = self.value(input).dims4()?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(ShapeError::mismatch(
                "batchnorm",
                format!("gamma/beta of length {c}"),
                self.value(gamma).shape(),
            ));
        }
        Ok(c)
    }

    fn bn_apply(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        batch_stats: bool,
    ) -> Result<Var, ShapeError> {
        let x = self.value(input);
        let shape = x.shape().to_vec();
        let c = mean.len();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = Vec::with_capacity(x.len());
        let mut out = Vec::with_capacity(x.len());
        for row in x.data().chunks_exact(c) {
            for ch in 0..c {
                let xh = (row[ch] - mean[ch]) * inv_std[ch];
                xhat.push(xh);
                out.push(g[ch] * xh + bt[ch]);
            }
        }
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        ))
    }

    /// Concatenates along the last axis: channels of `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let (ba, ha, wa, ca) = self.value(a).dims4()?;
        let (bb, hb, wb, cb) = self.value(b).dims4()?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(ShapeError::mismatch(
                "concat_channels",
                format!("{ba}x{ha}x{wa}xC"),
                self.value(b).shape(),
            ));
        }
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(xa.len() + xb.len());
        let pixels = ba * ha * wa;
        for p in 0..pixels {
            out.extend_from_slice(&xa[p * ca..(p + 1) * ca]);
            out.extend_from_slice(&xb[p * cb..(p + 1) * cb]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(&[ba, ha, wa, ca + cb], out)?,
            Op::Concat { a, b },
            rg,
        ))
    }

    /// Channels `start..start + len` of a rank-4 tensor.
    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var, ShapeError> {
        let (b, h, w, c) = self.value(input).dims4()?;
        if start + len > c {
            return Err(ShapeError::mismatch(
                "slice_channels",
                format!("at least {} channels", start + len),
                self.value(input).shape(),
            ));
        }
        let x = self.value(input).data();
        let out: Vec<f64> = x
            .chunks_exact(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let rg = self.rg(input);
        Ok(self.push(
            Tensor::new(&[b, h, w, len], out)?,
            Op::SliceChannels { input, start },
            rg,
        ))
    }

    fn binary(&mut self, a: Var, b: Var, op: &'static str) -> Result<(), ShapeError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(ShapeError::mismatch(
                op,
                format!("{:?}", self.value(a).shape()),
                self.value(b).shape(),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary(a, b, "add")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(data, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary(a, b, "mul")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(data, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let t = map(self.value(a), |x| k * x);
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, k), rg)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let t = map(self.value(a), |x| x + k);
        let rg = self.rg(a);
        self.push(t, Op::AddScalar(a), rg)
    }

    /// Elementwise square root; inputs must be positive where gradients are
    /// needed.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let t = map(self.value(a), f64::sqrt);
        let rg = self.rg(a);
        self.push(t, Op::Sqrt(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Max-subtracted softmax over a trailing axis of length 2.
    pub fn softmax_pair(&mut self, a: Var) -> Result<Var, ShapeError> {
        let x = self.value(a);
        if x.shape().last() != Some(&2) {
            return Err(ShapeError::mismatch("softmax_pair", "last dim 2", x.shape()));
        }
        let mut out = Vec::with_capacity(x.len());
        for pair in x.data().chunks_exact(2) {
            let (p0, p1) = softmax2(pair[0], pair[1]);
            out.push(p0);
            out.push(p1);
        }
        let t = Tensor::new(x.shape(), out)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::SoftmaxPair(a), rg))
    }

    /// Scalar node whose gradient with respect to `input` is supplied directly.
    /// `kinks` fingerprints any piecewise decisions taken while computing it.
    pub fn scalar_with_grad(
        &mut self,
        input: Var,
        value: f64,
        local_grad: Vec<f64>,
        kinks: u64,
    ) -> Result<Var, ShapeError> {
        if local_grad.len() != self.value(input).len() {
            return Err(ShapeError::mismatch(
                "scalar_with_grad",
                format!("{} gradient entries", self.value(input).len()),
                &[local_grad.len()],
            ));
        }
        let rg = self.rg(input);
        Ok(self.push(
            Tensor::scalar(value),
            Op::Scalar {
                input,
                local_grad,
                kinks,
            },
            rg,
        ))
    }

    /// Hash of every piecewise-linear decision in the graph (ReLU signs,
    /// max-pool winners, custom scalar kinks). Finite-difference checks use it
    /// to discard perturbations that cross a kink.
    pub fn kink_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for &v in self.value(*x).data() {
                        (v > 0.0).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                Op::Scalar { kinks, .. } => kinks.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse pass from scalar `out`. Parameter gradients are accumulated
    /// into `store`; all node gradients are returned.
    pub fn backward(&self, out: Var, store: &mut ParamStore) -> Gradients {
        let n = out.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(vec![1.0; self.value(out).len()]);
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.backprop_node(node, &g, &mut grads, store);
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(e, c)| *e += c),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let len = self.value(v).len();
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        store: &mut ParamStore,
    ) {
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                let p = store.get_mut(*id);
                p.grad
                    .data_mut()
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, b)| *a += b);
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let cout = geom.cout;
                if let Some(b) = bias {
                    self.acc_with(grads, *b, |db| {
                        for row in g.chunks_exact(cout) {
                            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                        }
                    });
                }
                self.acc_with(grads, *kernel, |dk| gemm_at_b_acc(cols, g, dk, geom.k(), cout));
                if self.rg(*input) {
                    let mut dcols = vec![0.0; cols.len()];
                    gemm_a_bt(g, self.value(*kernel).data(), &mut dcols, geom.k(), cout);
                    self.acc_with(grads, *input, |dx| col2im_acc(&dcols, geom, dx));
                }
            }
            Op::MaxPool { input, argmax } => {
                self.acc_with(grads, *input, |dx| {
                    for (&idx, &gv) in argmax.iter().zip(g) {
                        dx[idx] += gv;
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let d = xv
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                self.acc(grads, *x, d);
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let c = inv_std.len();
                let n = (g.len() / c) as f64;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (grow, xrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for ch in 0..c {
                        sum_g[ch] += grow[ch];
                        sum_gx[ch] += grow[ch] * xrow[ch];
                    }
                }
                self.acc(grads, *beta, sum_g.clone());
                self.acc(grads, *gamma, sum_gx.clone());
                if self.rg(*input) {
                    let gm = self.value(*gamma).data();
                    let mut dx = Vec::with_capacity(g.len());
                    for (grow, xrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for ch in 0..c {
                            let k = gm[ch] * inv_std[ch];
                            if *batch_stats {
                                dx.push(
                                    k * (grow[ch] - sum_g[ch] / n - xrow[ch] * sum_gx[ch] / n),
                                );
                            } else {
                                dx.push(k * grow[ch]);
                            }
                        }
                    }
                    self.acc(grads, *input, dx);
                }
            }
            Op::Concat { a, b } => {
                let ca = self.value(*a).shape()[3];
                let cb = self.value(*b).shape()[3];
                let c = ca + cb;
                if self.rg(*a) {
                    let d = g.chunks_exact(c).flat_map(|r| r[..ca].iter().copied()).collect();
                    self.acc(grads, *a, d);
                }
                if self.rg(*b) {
                    let d = g.chunks_exact(c).flat_map(|r| r[ca..].iter().copied()).collect();
                    self.acc(grads, *b, d);
                }
            }
            Op::SliceChannels { input, start } => {
                let c = self.value(*input).shape()[3];
                let len = node.value.shape()[3];
                let start = *start;
                self.acc_with(grads, *input, |dx| {
                    for (drow, grow) in dx.chunks_exact_mut(c).zip(g.chunks_exact(len)) {
                        drow[start..start + len]
                            .iter_mut()
                            .zip(grow)
                            .for_each(|(d, v)| *d += v);
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.to_vec());
                self.acc(grads, *b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    self.acc(grads, *a, g.iter().zip(vb).map(|(x, y)| x * y).collect());
                }
                if self.rg(*b) {
                    self.acc(grads, *b, g.iter().zip(va).map(|(x, y)| x * y).collect());
                }
            }
            Op::Scale(a, k) => self.acc(grads, *a, g.iter().map(|v| k * v).collect()),
            Op::AddScalar(a) => self.acc(grads, *a, g.to_vec()),
            Op::Sqrt(a) => {
                let y = node.value.data();
                self.acc(grads, *a, g.iter().zip(y).map(|(gv, yv)| gv / (2.0 * yv)).collect());
            }
            Op::Sum(a) => {
                let len = self.value(*a).len();
                self.acc(grads, *a, vec![g[0]; len]);
            }
            Op::SoftmaxPair(a) => {
                let y = node.value.data();
                let mut d = Vec::with_capacity(y.len());
                for (yp, gp) in y.chunks_exact(2).zip(g.chunks_exact(2)) {
                    let dot = yp[0] * gp[0] + yp[1] * gp[1];
                    d.push(yp[0] * (gp[0] - dot));
                    d.push(yp[1] * (gp[1] - dot));
                }
                self.acc(grads, *a, d);
            }
            Op::Scalar {
                input, local_grad, ..
            } => {
                self.acc(grads, *input, local_grad.iter().map(|v| g[0] * v).collect());
            }
        }
    }
}

/// Numerically stable two-way softmax.
#[inline]
pub fn softmax2(a: f64, b: f64) -> (f64, f64) {
    let m = a.max(b);
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    let s = ea + eb;
    (ea / s, eb / s)
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let k = g.k();
    let mut cols = vec![0.0; g.rows() * k];
    let mut r = 0;
    for b in 0..g.b {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = &mut cols[r * k..(r + 1) * k];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        if let Some((iy, ix)) = g.source(oy, ox, ky, kx) {
                            let src = ((b * g.h + iy) * g.w + ix) * g.cin;
                            let dst = (ky * g.kw + kx) * g.cin;
                            row[dst..dst + g.cin].copy_from_slice(&x[src..src + g.cin]);
                        }
                    }
                }
                r += 1;
            }
        }
    }
    cols
}

fn col2im_acc(dcols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let k = g.k();
    let mut r = 0;
    for b in 0..g.b {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = &dcols[r * k..(r + 1) * k];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        if let Some((iy, ix)) = g.source(oy, ox, ky, kx) {
                            let dst = ((b * g.h + iy) * g.w + ix) * g.cin;
                            let src = (ky * g.kw + kx) * g.cin;
                            dx[dst..dst + g.cin]
                                .iter_mut()
                                .zip(&row[src..src + g.cin])
                                .for_each(|(d, v)| *d += v);
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

/// `out (P x N) += a (P x K) * b (K x N)`.
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize) {
    for (arow, orow) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, bv)| *o += av * bv);
        }
    }
}

/// `out (K x N) += a^T * g` with `a: P x K`, `g: P x N`.
fn gemm_at_b_acc(a: &[f64], g: &[f64], out: &mut [f64], k: usize, n: usize) {
    for (arow, grow) in a.chunks_exact(k).zip(g.chunks_exact(n)) {
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[kk * n..(kk + 1) * n];
            orow.iter_mut().zip(grow).for_each(|(o, gv)| *o += av * gv);
        }
    }
}

/// `out (P x K) = g (P x N) * b^T` with `b: K x N`.
fn gemm_a_bt(g: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize) {
    for (grow, orow) in g.chunks_exact(n).zip(out.chunks_exact_mut(k)) {
        for (kk, o) in orow.iter_mut().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            *o = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
}
