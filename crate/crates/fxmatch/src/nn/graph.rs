//! Define-by-run reverse-mode autodiff on a flat tape.
//!
//! Each forward call appends nodes; `backward` (or `backward_from` with an
//! explicit cotangent, used to splice in zeroth-order gradient estimates)
//! sweeps the tape in reverse and accumulates gradients into every node that
//! transitively depends on a parameter leaf.

use std::collections::BTreeMap;

use super::array::{matmul_acc, matmul_at_acc, matmul_bt_acc, Array, Scalar};
use super::store::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

const K: usize = 3; // all convolutions are 3x3
const STRIDE: usize = 2;
const PAD: usize = 1;

pub fn conv_out_len(n: usize) -> usize {
    (n - 1) / STRIDE + 1
}

#[derive(Debug, Clone)]
enum Op<T: Scalar> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddScalar(NodeId),
    MulScalar(NodeId, T),
    Exp(NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, T),
    Sigmoid(NodeId),
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Conv2d { x: NodeId, w: NodeId, b: NodeId },
    ConvT2d { x: NodeId, w: NodeId, b: NodeId },
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId },
    ChannelAffine { x: NodeId, scale: Vec<T> },
    Reshape(NodeId),
    Concat(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
}

#[derive(Debug, Clone)]
struct NormAux<T: Scalar> {
    xhat: Array<T>,
    inv_std: Vec<T>,
}

struct Node<T: Scalar> {
    op: Op<T>,
    value: Array<T>,
    grad: Option<Array<T>>,
    needs_grad: bool,
    param: Option<String>,
    aux: Option<NormAux<T>>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op<T>, value: Array<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            needs_grad,
            param: None,
            aux: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn value(&self, id: NodeId) -> &Array<T> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Array<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Constant input; gradients are not propagated into it.
    pub fn input(&mut self, value: Array<T>) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Trainable leaf bound to a named store entry.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> NodeId {
        let value = store.get(name).clone();
        let trainable = store.is_trainable(name);
        let id = self.push(Op::Leaf, value, trainable);
        self.nodes[id.0].param = Some(name.to_string());
        id
    }

    /// Input that still receives a gradient (used to read d(loss)/d(input)).
    pub fn input_tracked(&mut self, value: Array<T>) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), v, ng)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Sub(a, b), v, ng)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), v, ng)
    }

    pub fn add_scalar(&mut self, a: NodeId, s: T) -> NodeId {
        let v = self.value(a).map(|x| x + s);
        let ng = self.needs(a);
        self.push(Op::AddScalar(a), v, ng)
    }

    pub fn mul_scalar(&mut self, a: NodeId, s: T) -> NodeId {
        let v = self.value(a).map(|x| x * s);
        let ng = self.needs(a);
        self.push(Op::MulScalar(a, s), v, ng)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.exp());
        let ng = self.needs(a);
        self.push(Op::Exp(a), v, ng)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let ng = self.needs(a);
        self.push(Op::Relu(a), v, ng)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: T) -> NodeId {
        let v = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { x * slope });
        let ng = self.needs(a);
        self.push(Op::LeakyRelu(a, slope), v, ng)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let one = T::one();
        let v = self.value(a).map(|x| one / (one + (-x).exp()));
        let ng = self.needs(a);
        self.push(Op::Sigmoid(a), v, ng)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let v = self.value(a).reshaped(shape);
        let ng = self.needs(a);
        self.push(Op::Reshape(a), v, ng)
    }

    /// Concatenate two [B, D1] and [B, D2] matrices along dim 1.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        assert_eq!(sa.len(), 2, "concat expects 2-d inputs");
        assert_eq!(sa[0], sb[0], "concat batch mismatch");
        let (bsz, d1, d2) = (sa[0], sa[1], sb[1]);
        let mut out = Array::zeros(&[bsz, d1 + d2]);
        for i in 0..bsz {
            out.data_mut()[i * (d1 + d2)..i * (d1 + d2) + d1]
                .copy_from_slice(&va.data()[i * d1..(i + 1) * d1]);
            out.data_mut()[i * (d1 + d2) + d1..(i + 1) * (d1 + d2)]
                .copy_from_slice(&vb.data()[i * d2..(i + 1) * d2]);
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Concat(a, b), out, ng)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().fold(T::zero(), |acc, &v| acc + v);
        let ng = self.needs(a);
        self.push(Op::Sum(a), Array::scalar(s), ng)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = T::from_usize(self.value(a).numel());
        let s = self.value(a).data().iter().fold(T::zero(), |acc, &v| acc + v);
        let ng = self.needs(a);
        self.push(Op::Mean(a), Array::scalar(s / n), ng)
    }

    /// y = x @ w + b with x [B, In], w [In, Out], b [Out].
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let (bsz, din) = (vx.shape()[0], vx.shape()[1]);
        assert_eq!(vw.shape()[0], din, "linear weight shape mismatch");
        let dout = vw.shape()[1];
        assert_eq!(vb.numel(), dout, "linear bias shape mismatch");
        let mut out = Array::zeros(&[bsz, dout]);
        for i in 0..bsz {
            out.data_mut()[i * dout..(i + 1) * dout].copy_from_slice(vb.data());
        }
        matmul_acc(vx.data(), vw.data(), bsz, din, dout, out.data_mut());
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(Op::Linear { x, w, b }, out, ng)
    }

    /// 3x3 stride-2 pad-1 convolution. x [B,Ci,H,W], w [Co,Ci,3,3], b [Co].
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let [bsz, ci, h, wd] = four(vx.shape());
        let [co, ci2, kh, kw] = four(vw.shape());
        assert_eq!(ci, ci2, "conv2d channel mismatch");
        assert_eq!((kh, kw), (K, K));
        assert_eq!(vb.numel(), co);
        let (ho, wo) = (conv_out_len(h), conv_out_len(wd));
        let mut out = Array::zeros(&[bsz, co, ho, wo]);
        conv2d_fwd(
            vx.data(),
            vw.data(),
            vb.data(),
            out.data_mut(),
            bsz,
            ci,
            h,
            wd,
            co,
            ho,
            wo,
        );
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(Op::Conv2d { x, w, b }, out, ng)
    }

    /// Transposed 3x3 stride-2 pad-1 convolution onto an explicit target
    /// spatial size. x [B,Ci,H,W], w [Ci,Co,3,3], b [Co]. The target must
    /// satisfy conv_out_len(target) == input size, i.e. 2H-1 or 2H.
    pub fn conv_t2d(&mut self, x: NodeId, w: NodeId, b: NodeId, out_hw: (usize, usize)) -> NodeId {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let [bsz, ci, h, wd] = four(vx.shape());
        let [ci2, co, kh, kw] = four(vw.shape());
        assert_eq!(ci, ci2, "conv_t2d channel mismatch");
        assert_eq!((kh, kw), (K, K));
        assert_eq!(vb.numel(), co);
        let (ho, wo) = out_hw;
        assert_eq!(conv_out_len(ho), h, "conv_t2d target height {ho} invalid for input {h}");
        assert_eq!(conv_out_len(wo), wd, "conv_t2d target width {wo} invalid for input {wd}");
        let mut out = Array::zeros(&[bsz, co, ho, wo]);
        convt2d_fwd(
            vx.data(),
            vw.data(),
            vb.data(),
            out.data_mut(),
            bsz,
            ci,
            h,
            wd,
            co,
            ho,
            wo,
        );
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(Op::ConvT2d { x, w, b }, out, ng)
    }

    /// Training-mode batch norm over (B,H,W) per channel. Returns the node
    /// plus the batch mean and biased variance so callers can maintain
    /// running statistics.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: T,
    ) -> (NodeId, Vec<T>, Vec<T>) {
        let vx = self.value(x);
        let [bsz, c, h, w] = four(vx.shape());
        let plane = h * w;
        let n = T::from_usize(bsz * plane);

        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for bi in 0..bsz {
            for ci in 0..c {
                let base = (bi * c + ci) * plane;
                let s = vx.data()[base..base + plane]
                    .iter()
                    .fold(T::zero(), |acc, &v| acc + v);
                mean[ci] += s;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        for bi in 0..bsz {
            for ci in 0..c {
                let base = (bi * c + ci) * plane;
                let m = mean[ci];
                let s = vx.data()[base..base + plane]
                    .iter()
                    .fold(T::zero(), |acc, &v| acc + (v - m) * (v - m));
                var[ci] += s;
            }
        }
        for v in &mut var {
            *v /= n;
        }

        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = Array::zeros(vx.shape());
        for bi in 0..bsz {
            for ci in 0..c {
                let base = (bi * c + ci) * plane;
                let (m, is) = (mean[ci], inv_std[ci]);
                for k in 0..plane {
                    xhat.data_mut()[base + k] = (vx.data()[base + k] - m) * is;
                }
            }
        }

        let (vg, vb2) = (self.value(gamma), self.value(beta));
        assert_eq!(vg.numel(), c);
        assert_eq!(vb2.numel(), c);
        let mut out = Array::zeros(xhat.shape());
        for bi in 0..bsz {
            for ci in 0..c {
                let base = (bi * c + ci) * plane;
                let (g, b2) = (vg.data()[ci], vb2.data()[ci]);
                for k in 0..plane {
                    out.data_mut()[base + k] = g * xhat.data()[base + k] + b2;
                }
            }
        }

        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let id = self.push(Op::BatchNorm { x, gamma, beta }, out, ng);
        self.nodes[id.0].aux = Some(NormAux { xhat, inv_std: inv_std.clone() });
        (id, mean, var)
    }

    /// Per-channel affine y = x * scale[c] + shift[c]; used for
    /// inference-mode batch norm with folded running statistics.
    pub fn channel_affine(&mut self, x: NodeId, scale: Vec<T>, shift: Vec<T>) -> NodeId {
        let vx = self.value(x);
        let [bsz, c, h, w] = four(vx.shape());
        assert_eq!(scale.len(), c);
        assert_eq!(shift.len(), c);
        let plane = h * w;
        let mut out = Array::zeros(vx.shape());
        for bi in 0..bsz {
            for ci in 0..c {
                let base = (bi * c + ci) * plane;
                let (s, t) = (scale[ci], shift[ci]);
                for k in 0..plane {
                    out.data_mut()[base + k] = vx.data()[base + k] * s + t;
                }
            }
        }
        let ng = self.needs(x);
        self.push(Op::ChannelAffine { x, scale }, out, ng)
    }

    /// Layer norm over the last dim of x [B, D] with gamma/beta [D].
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: T) -> NodeId {
        let vx = self.value(x);
        assert_eq!(vx.shape().len(), 2, "layer_norm expects [B, D]");
        let (bsz, d) = (vx.shape()[0], vx.shape()[1]);
        let dn = T::from_usize(d);
        let mut xhat = Array::zeros(vx.shape());
        let mut inv_std = vec![T::zero(); bsz];
        for i in 0..bsz {
            let row = &vx.data()[i * d..(i + 1) * d];
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / dn;
            let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for (o, &v) in xhat.data_mut()[i * d..(i + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let (vg, vb) = (self.value(gamma), self.value(beta));
        assert_eq!(vg.numel(), d);
        assert_eq!(vb.numel(), d);
        let mut out = Array::zeros(vx.shape());
        for i in 0..bsz {
            for j in 0..d {
                out.data_mut()[i * d + j] = vg.data()[j] * xhat.data()[i * d + j] + vb.data()[j];
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let id = self.push(Op::LayerNorm { x, gamma, beta }, out, ng);
        self.nodes[id.0].aux = Some(NormAux { xhat, inv_std });
        id
    }

    /// Backward from a scalar node with seed gradient 1.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(self.nodes[loss.0].value.numel(), 1, "backward needs a scalar");
        let seed = Array::filled(self.nodes[loss.0].value.shape(), T::one());
        self.backward_from(loss, seed);
    }

    /// Backward seeded with an explicit cotangent at `node`.
    pub fn backward_from(&mut self, node: NodeId, cotangent: Array<T>) {
        assert_eq!(
            cotangent.shape(),
            self.nodes[node.0].value.shape(),
            "cotangent shape mismatch"
        );
        self.accumulate(node, cotangent);
        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let g = self.nodes[i].grad.take().unwrap();
            self.step_backward(i, &g);
            self.nodes[i].grad = Some(g);
        }
    }

    fn accumulate(&mut self, id: NodeId, g: Array<T>) {
        match &mut self.nodes[id.0].grad {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn step_backward(&mut self, i: usize, g: &Array<T>) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.needs(a) {
                    self.accumulate(a, g.clone());
                }
                if self.needs(b) {
                    self.accumulate(b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(a) {
                    self.accumulate(a, g.clone());
                }
                if self.needs(b) {
                    self.accumulate(b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let da = g.zip_map(self.value(b), |gv, bv| gv * bv);
                    self.accumulate(a, da);
                }
                if self.needs(b) {
                    let db = g.zip_map(self.value(a), |gv, av| gv * av);
                    self.accumulate(b, db);
                }
            }
            Op::AddScalar(a) => {
                if self.needs(a) {
                    self.accumulate(a, g.clone());
                }
            }
            Op::MulScalar(a, s) => {
                if self.needs(a) {
                    self.accumulate(a, g.map(|v| v * s));
                }
            }
            Op::Exp(a) => {
                if self.needs(a) {
                    let da = g.zip_map(&self.nodes[i].value, |gv, yv| gv * yv);
                    self.accumulate(a, da);
                }
            }
            Op::Relu(a) => {
                if self.needs(a) {
                    let da = g.zip_map(self.value(a), |gv, xv| {
                        if xv > T::zero() {
                            gv
                        } else {
                            T::zero()
                        }
                    });
                    self.accumulate(a, da);
                }
            }
            Op::LeakyRelu(a, slope) => {
                if self.needs(a) {
                    let da = g.zip_map(self.value(a), |gv, xv| {
                        if xv > T::zero() {
                            gv
                        } else {
                            gv * slope
                        }
                    });
                    self.accumulate(a, da);
                }
            }
            Op::Sigmoid(a) => {
                if self.needs(a) {
                    let one = T::one();
                    let da = g.zip_map(&self.nodes[i].value, |gv, yv| gv * yv * (one - yv));
                    self.accumulate(a, da);
                }
            }
            Op::Reshape(a) => {
                if self.needs(a) {
                    self.accumulate(a, g.reshaped(self.value(a).shape()));
                }
            }
            Op::Concat(a, b) => {
                let d1 = self.value(a).shape()[1];
                let d2 = self.value(b).shape()[1];
                let bsz = self.value(a).shape()[0];
                if self.needs(a) {
                    let mut da = Array::zeros(&[bsz, d1]);
                    for r in 0..bsz {
                        da.data_mut()[r * d1..(r + 1) * d1]
                            .copy_from_slice(&g.data()[r * (d1 + d2)..r * (d1 + d2) + d1]);
                    }
                    self.accumulate(a, da);
                }
                if self.needs(b) {
                    let mut db = Array::zeros(&[bsz, d2]);
                    for r in 0..bsz {
                        db.data_mut()[r * d2..(r + 1) * d2]
                            .copy_from_slice(&g.data()[r * (d1 + d2) + d1..(r + 1) * (d1 + d2)]);
                    }
                    self.accumulate(b, db);
                }
            }
            Op::Sum(a) => {
                if self.needs(a) {
                    let gv = g.item();
                    self.accumulate(a, Array::filled(self.value(a).shape(), gv));
                }
            }
            Op::Mean(a) => {
                if self.needs(a) {
                    let n = T::from_usize(self.value(a).numel());
                    let gv = g.item() / n;
                    self.accumulate(a, Array::filled(self.value(a).shape(), gv));
                }
            }
            Op::Linear { x, w, b } => {
                let (bsz, din) = (self.value(x).shape()[0], self.value(x).shape()[1]);
                let dout = self.value(w).shape()[1];
                if self.needs(x) {
                    let mut dx = Array::zeros(&[bsz, din]);
                    matmul_bt_acc(g.data(), self.value(w).data(), bsz, dout, din, dx.data_mut());
                    self.accumulate(x, dx);
                }
                if self.needs(w) {
                    let mut dw = Array::zeros(&[din, dout]);
                    matmul_at_acc(self.value(x).data(), g.data(), din, bsz, dout, dw.data_mut());
                    self.accumulate(w, dw);
                }
                if self.needs(b) {
                    let mut db = Array::zeros(&[dout]);
                    for r in 0..bsz {
                        for j in 0..dout {
                            db.data_mut()[j] += g.data()[r * dout + j];
                        }
                    }
                    self.accumulate(b, db);
                }
            }
            Op::Conv2d { x, w, b } => {
                let [bsz, ci, h, wd] = four(self.value(x).shape());
                let [co, _, _, _] = four(self.value(w).shape());
                let (ho, wo) = (conv_out_len(h), conv_out_len(wd));
                if self.needs(x) {
                    let mut dx = Array::zeros(self.value(x).shape());
                    conv2d_bwd_x(
                        self.value(w).data(),
                        g.data(),
                        dx.data_mut(),
                        bsz,
                        ci,
                        h,
                        wd,
                        co,
                        ho,
                        wo,
                    );
                    self.accumulate(x, dx);
                }
                if self.needs(w) {
                    let mut dw = Array::zeros(self.value(w).shape());
                    conv2d_bwd_w(
                        self.value(x).data(),
                        g.data(),
                        dw.data_mut(),
                        bsz,
                        ci,
                        h,
                        wd,
                        co,
                        ho,
                        wo,
                    );
                    self.accumulate(w, dw);
                }
                if self.needs(b) {
                    let mut db = Array::zeros(&[co]);
                    bias_grad(g.data(), db.data_mut(), bsz, co, ho * wo);
                    self.accumulate(b, db);
                }
            }
            Op::ConvT2d { x, w, b } => {
                let [bsz, ci, h, wd] = four(self.value(x).shape());
                let [_, co, ho, wo] = four(self.nodes[i].value.shape());
                // dx of convT is a regular strided conv of dy with the same
                // kernel; dw gathers products of input activations and dy
                if self.needs(x) {
                    let mut dx = Array::zeros(self.value(x).shape());
                    convt2d_bwd_x(
                        self.value(w).data(),
                        g.data(),
                        dx.data_mut(),
                        bsz,
                        ci,
                        h,
                        wd,
                        co,
                        ho,
                        wo,
                    );
                    self.accumulate(x, dx);
                }
                if self.needs(w) {
                    let mut dw = Array::zeros(self.value(w).shape());
                    convt2d_bwd_w(
                        self.value(x).data(),
                        g.data(),
                        dw.data_mut(),
                        bsz,
                        ci,
                        h,
                        wd,
                        co,
                        ho,
                        wo,
                    );
                    self.accumulate(w, dw);
                }
                if self.needs(b) {
                    let mut db = Array::zeros(&[co]);
                    bias_grad(g.data(), db.data_mut(), bsz, co, ho * wo);
                    self.accumulate(b, db);
                }
            }
            Op::BatchNorm { x, gamma, beta } => {
                let aux = self.nodes[i].aux.clone().expect("batch norm aux missing");
                let [bsz, c, h, w] = four(self.value(x).shape());
                let plane = h * w;
                let n = T::from_usize(bsz * plane);

                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for bi in 0..bsz {
                    for ci2 in 0..c {
                        let base = (bi * c + ci2) * plane;
                        for k in 0..plane {
                            let gv = g.data()[base + k];
                            dbeta[ci2] += gv;
                            dgamma[ci2] += gv * aux.xhat.data()[base + k];
                        }
                    }
                }
                if self.needs(x) {
                    let vg = self.value(gamma).data().to_vec();
                    let mut dx = Array::zeros(self.value(x).shape());
                    for bi in 0..bsz {
                        for ci2 in 0..c {
                            let base = (bi * c + ci2) * plane;
                            let scale = vg[ci2] * aux.inv_std[ci2];
                            let mg = dbeta[ci2] / n;
                            let mgx = dgamma[ci2] / n;
                            for k in 0..plane {
                                let gv = g.data()[base + k];
                                let xh = aux.xhat.data()[base + k];
                                dx.data_mut()[base + k] = scale * (gv - mg - xh * mgx);
                            }
                        }
                    }
                    self.accumulate(x, dx);
                }
                if self.needs(gamma) {
                    self.accumulate(gamma, Array::from_vec(dgamma, &[c]));
                }
                if self.needs(beta) {
                    self.accumulate(beta, Array::from_vec(dbeta, &[c]));
                }
            }
            Op::LayerNorm { x, gamma, beta } => {
                let aux = self.nodes[i].aux.clone().expect("layer norm aux missing");
                let (bsz, d) = (self.value(x).shape()[0], self.value(x).shape()[1]);
                let dn = T::from_usize(d);
                let vg = self.value(gamma).data().to_vec();

                if self.needs(gamma) || self.needs(beta) {
                    let mut dgamma = vec![T::zero(); d];
                    let mut dbeta = vec![T::zero(); d];
                    for r in 0..bsz {
                        for j in 0..d {
                            let gv = g.data()[r * d + j];
                            dbeta[j] += gv;
                            dgamma[j] += gv * aux.xhat.data()[r * d + j];
                        }
                    }
                    if self.needs(gamma) {
                        self.accumulate(gamma, Array::from_vec(dgamma, &[d]));
                    }
                    if self.needs(beta) {
                        self.accumulate(beta, Array::from_vec(dbeta, &[d]));
                    }
                }
                if self.needs(x) {
                    let mut dx = Array::zeros(self.value(x).shape());
                    for r in 0..bsz {
                        let mut sum_gg = T::zero();
                        let mut sum_ggx = T::zero();
                        for j in 0..d {
                            let gg = g.data()[r * d + j] * vg[j];
                            sum_gg += gg;
                            sum_ggx += gg * aux.xhat.data()[r * d + j];
                        }
                        let (mg, mgx) = (sum_gg / dn, sum_ggx / dn);
                        for j in 0..d {
                            let gg = g.data()[r * d + j] * vg[j];
                            let xh = aux.xhat.data()[r * d + j];
                            dx.data_mut()[r * d + j] = aux.inv_std[r] * (gg - mg - xh * mgx);
                        }
                    }
                    self.accumulate(x, dx);
                }
            }
            Op::ChannelAffine { x, scale } => {
                if self.needs(x) {
                    let [bsz, c, h, w] = four(self.value(x).shape());
                    let plane = h * w;
                    let mut dx = Array::zeros(self.value(x).shape());
                    for bi in 0..bsz {
                        for ci2 in 0..c {
                            let base = (bi * c + ci2) * plane;
                            let s = scale[ci2];
                            for k in 0..plane {
                                dx.data_mut()[base + k] = g.data()[base + k] * s;
                            }
                        }
                    }
                    self.accumulate(x, dx);
                }
            }
        }
    }

    /// Collect accumulated gradients of all named parameters.
    pub fn param_grads(&self) -> BTreeMap<String, Array<T>> {
        let mut out: BTreeMap<String, Array<T>> = BTreeMap::new();
        for node in &self.nodes {
            if let (Some(name), Some(grad)) = (&node.param, &node.grad) {
                out.entry(name.clone())
                    .and_modify(|g| g.add_assign(grad))
                    .or_insert_with(|| grad.clone());
            }
        }
        out
    }
}

fn four(shape: &[usize]) -> [usize; 4] {
    assert_eq!(shape.len(), 4, "expected 4-d shape, got {shape:?}");
    [shape[0], shape[1], shape[2], shape[3]]
}

#[allow(clippy::too_many_arguments)]
fn conv2d_fwd<T: Scalar>(
    x: &[T],
    w: &[T],
    b: &[T],
    out: &mut [T],
    bsz: usize,
    ci: usize,
    h: usize,
    wd: usize,
    co: usize,
    ho: usize,
    wo: usize,
) {
    for bi in 0..bsz {
        for o in 0..co {
            let out_base = (bi * co + o) * ho * wo;
            let bias = b[o];
            for v in out[out_base..out_base + ho * wo].iter_mut() {
                *v = bias;
            }
            for c in 0..ci {
                let x_base = (bi * ci + c) * h * wd;
                let w_base = (o * ci + c) * K * K;
                for u in 0..K {
                    for i in 0..ho {
                        let p = (STRIDE * i + u) as isize - PAD as isize;
                        if p < 0 || p >= h as isize {
                            continue;
                        }
                        let x_row = &x[x_base + p as usize * wd..x_base + (p as usize + 1) * wd];
                        let out_row = &mut out[out_base + i * wo..out_base + (i + 1) * wo];
                        for v in 0..K {
                            let wv = w[w_base + u * K + v];
                            let (j0, j1) = col_range(v, wo, wd);
                            for j in j0..j1 {
                                let q = STRIDE * j + v - PAD;
                                out_row[j] += wv * x_row[q];
                            }
                        }
                    }
                }
            }
        }
    }
}

// valid indices j < jmax for kernel column v such that the partner index
// q = STRIDE*j + v - PAD falls in [0, qmax)
fn col_range(v: usize, jmax: usize, qmax: usize) -> (usize, usize) {
    let j0 = if v < PAD {
        (PAD - v + STRIDE - 1) / STRIDE
    } else {
        0
    };
    let j1 = if qmax + PAD >= v + 1 {
        ((qmax - 1 + PAD - v) / STRIDE + 1).min(jmax)
    } else {
        0
    };
    (j0, j1)
}

#[allow(clippy::too_many_arguments)]
fn conv2d_bwd_x<T: Scalar>(
    w: &[T],
    dy: &[T],
    dx: &mut [T],
    bsz: usize,
    ci: usize,
    h: usize,
    wd: usize,
    co: usize,
    ho: usize,
    wo: usize,
) {
    for bi in 0..bsz {
        for o in 0..co {
            let dy_base = (bi * co + o) * ho * wo;
            for c in 0..ci {
                let dx_base = (bi * ci + c) * h * wd;
                let w_base = (o * ci + c) * K * K;
                for u in 0..K {
                    for i in 0..ho {
                        let p = (STRIDE * i + u) as isize - PAD as isize;
                        if p < 0 || p >= h as isize {
                            continue;
                        }
                        let dx_row =
                            &mut dx[dx_base + p as usize * wd..dx_base + (p as usize + 1) * wd];
                        let dy_row = &dy[dy_base + i * wo..dy_base + (i + 1) * wo];
                        for v in 0..K {
                            let wv = w[w_base + u * K + v];
                            let (j0, j1) = col_range(v, wo, wd);
                            for j in j0..j1 {
                                let q = STRIDE * j + v - PAD;
                                dx_row[q] += wv * dy_row[j];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_bwd_w<T: Scalar>(
    x: &[T],
    dy: &[T],
    dw: &mut [T],
    bsz: usize,
    ci: usize,
    h: usize,
    wd: usize,
    co: usize,
    ho: usize,
    wo: usize,
) {
    for bi in 0..bsz {
        for o in 0..co {
            let dy_base = (bi * co + o) * ho * wo;
            for c in 0..ci {
                let x_base = (bi * ci + c) * h * wd;
                let w_base = (o * ci + c) * K * K;
                for u in 0..K {
                    for i in 0..ho {
                        let p = (STRIDE * i + u) as isize - PAD as isize;
                        if p < 0 || p >= h as isize {
                            continue;
                        }
                        let x_row = &x[x_base + p as usize * wd..x_base + (p as usize + 1) * wd];
                        let dy_row = &dy[dy_base + i * wo..dy_base + (i + 1) * wo];
                        for v in 0..K {
                            let (j0, j1) = col_range(v, wo, wd);
                            let mut acc = T::zero();
                            for j in j0..j1 {
                                let q = STRIDE * j + v - PAD;
                                acc += x_row[q] * dy_row[j];
                            }
                            dw[w_base + u * K + v] += acc;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn convt2d_fwd<T: Scalar>(
    x: &[T],
    w: &[T],
    b: &[T],
    out: &mut [T],
    bsz: usize,
    ci: usize,
    h: usize,
    wd: usize,
    co: usize,
    ho: usize,
    wo: usize,
) {
    for bi in 0..bsz {
        for o in 0..co {
            let out_base = (bi * co + o) * ho * wo;
            let bias = b[o];
            for v in out[out_base..out_base + ho * wo].iter_mut() {
                *v = bias;
            }
        }
    }
    // scatter: y[p, q] += w[c,o,u,v] * x[i, j] with p = 2i+u-1, q = 2j+v-1
    for bi in 0..bsz {
        for c in 0..ci {
            let x_base = (bi * ci + c) * h * wd;
            for o in 0..co {
                let out_base = (bi * co + o) * ho * wo;
                let w_base = (c * co + o) * K * K;
                for u in 0..K {
                    for i in 0..h {
                        let p = (STRIDE * i + u) as isize - PAD as isize;
                        if p < 0 || p >= ho as isize {
                            continue;
                        }
                        let x_row = &x[x_base + i * wd..x_base + (i + 1) * wd];
                        let out_row =
                            &mut out[out_base + p as usize * wo..out_base + (p as usize + 1) * wo];
                        for v in 0..K {
                            let wv = w[w_base + u * K + v];
                            let (j0, j1) = col_range(v, wd, wo);
                            for j in j0..j1 {
                                let q = STRIDE * j + v - PAD;
                                out_row[q] += wv * x_row[j];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn convt2d_bwd_x<T: Scalar>(
    w: &[T],
    dy: &[T],
    dx: &mut [T],
    bsz: usize,
    ci: usize,
    h: usize,
    wd: usize,
    co: usize,
    ho: usize,
    wo: usize,
) {
    // dx[i, j] = sum_{o,u,v} w[c,o,u,v] * dy[2i+u-1, 2j+v-1]
    for bi in 0..bsz {
        for c in 0..ci {
            let dx_base = (bi * ci + c) * h * wd;
            for o in 0..co {
                let dy_base = (bi * co + o) * ho * wo;
                let w_base = (c * co + o) * K * K;
                for u in 0..K {
                    for i in 0..h {
                        let p = (STRIDE * i + u) as isize - PAD as isize;
                        if p < 0 || p >= ho as isize {
                            continue;
                        }
                        let dy_row = &dy[dy_base + p as usize * wo..dy_base + (p as usize + 1) * wo];
                        let dx_row = &mut dx[dx_base + i * wd..dx_base + (i + 1) * wd];
                        for v in 0..K {
                            let wv = w[w_base + u * K + v];
                            let (j0, j1) = col_range(v, wd, wo);
                            for j in j0..j1 {
                                let q = STRIDE * j + v - PAD;
                                dx_row[j] += wv * dy_row[q];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn convt2d_bwd_w<T: Scalar>(
    x: &[T],
    dy: &[T],
    dw: &mut [T],
    bsz: usize,
    ci: usize,
    h: usize,
    wd: usize,
    co: usize,
    ho: usize,
    wo: usize,
) {
    for bi in 0..bsz {
        for c in 0..ci {
            let x_base = (bi * ci + c) * h * wd;
            for o in 0..co {
                let dy_base = (bi * co + o) * ho * wo;
                let w_base = (c * co + o) * K * K;
                for u in 0..K {
                    for i in 0..h {
                        let p = (STRIDE * i + u) as isize - PAD as isize;
                        if p < 0 || p >= ho as isize {
                            continue;
                        }
                        let x_row = &x[x_base + i * wd..x_base + (i + 1) * wd];
                        let dy_row = &dy[dy_base + p as usize * wo..dy_base + (p as usize + 1) * wo];
                        for v in 0..K {
                            let (j0, j1) = col_range(v, wd, wo);
                            let mut acc = T::zero();
                            for j in j0..j1 {
                                let q = STRIDE * j + v - PAD;
                                acc += x_row[j] * dy_row[q];
                            }
                            dw[w_base + u * K + v] += acc;
                        }
                    }
                }
            }
        }
    }
}

fn bias_grad<T: Scalar>(dy: &[T], db: &mut [T], bsz: usize, co: usize, plane: usize) {
    for bi in 0..bsz {
        for o in 0..co {
            let base = (bi * co + o) * plane;
            let s = dy[base..base + plane]
                .iter()
                .fold(T::zero(), |acc, &v| acc + v);
            db[o] += s;
        }
    }
}
