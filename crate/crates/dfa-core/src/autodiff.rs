//! Reverse-mode automatic differentiation over a replayable op graph.
//!
//! A [`Graph`] is built once per forward pass. Nodes are appended in
//! topological order and record their op kind, input node ids, and output
//! tensor; [`Graph::backward`] walks the node list in reverse and accumulates
//! parameter gradients into a caller-owned buffer. Parameter tensors are
//! borrowed from the owning network rather than copied into the graph, so a
//! per-sample graph only allocates activation-sized buffers.
//!
//! The op set is exactly what the stage networks need: valid 2-D convolution,
//! 2x2 average pooling, ReLU, dense layers, concatenation, scalar weighting,
//! and the two training losses (masked Euclidean and multinomial logistic).

use crate::losses;
use crate::tensor::Tensor;
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{context}: expected input shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("backward requires a scalar loss node, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("gradient buffer holds {got} tensors, graph references {expected} parameters")]
    GradientBufferMismatch { expected: usize, got: usize },
}

enum Op {
    /// Leaf holding data that needs no gradient (images, aux vectors, targets).
    Constant,
    /// Leaf referencing a parameter tensor by index; receives a gradient.
    Param(usize),
    Conv2d,
    AvgPool2,
    Relu,
    /// `y = W x + b`, inputs `[w, x, b]` with `w: [out, in]`.
    Dense,
    Concat,
    Scale(f64),
    Add,
    Sum,
    EuclideanMasked {
        target: Vec<f64>,
        mask: Vec<f64>,
        denom: f64,
    },
    MultinomialLogistic {
        classes: usize,
        labels: Vec<u8>,
    },
}

enum Value {
    Owned(Tensor),
    Param(usize),
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Value,
}

/// A computation graph borrowing the parameter store of one network.
pub struct Graph<'p> {
    params: &'p [Tensor],
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(24),
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match &self.nodes[id].value {
            Value::Owned(t) => t,
            Value::Param(i) => &self.params[*i],
        }
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op,
            inputs,
            value: Value::Owned(value),
        });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Constant, Vec::new(), t)
    }

    pub fn param(&mut self, index: usize) -> NodeId {
        self.nodes.push(Node {
            op: Op::Param(index),
            inputs: Vec::new(),
            value: Value::Param(index),
        });
        self.nodes.len() - 1
    }

    /// Valid (unpadded) stride-1 convolution.
    ///
    /// `x: [in_ch, h, w]`, `weight: [out_ch, in_ch, k, k]`, `bias: [out_ch]`
    /// producing `[out_ch, h-k+1, w-k+1]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
        context: &str,
    ) -> Result<NodeId, GraphError> {
        let (xs, ws) = (self.value(x).shape(), self.value(weight).shape());
        if ws.len() != 4 || xs.len() != 3 || xs[0] != ws[1] || xs[1] < ws[2] || xs[2] < ws[3] {
            return Err(GraphError::ShapeMismatch {
                context: context.to_string(),
                expected: ws.to_vec(),
                got: xs.to_vec(),
            });
        }
        let (in_ch, h, w) = (xs[0], xs[1], xs[2]);
        let (out_ch, k) = (ws[0], ws[2]);
        let (oh, ow) = (h - k + 1, w - k + 1);
        let mut out = vec![0.0; out_ch * oh * ow];
        {
            let xv = self.value(x).data();
            let wv = self.value(weight).data();
            let bv = self.value(bias).data();
            for oc in 0..out_ch {
                let out_plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
                out_plane.iter_mut().for_each(|v| *v = bv[oc]);
                for ic in 0..in_ch {
                    let x_plane = &xv[ic * h * w..(ic + 1) * h * w];
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv0 = wv[((oc * in_ch + ic) * k + ky) * k + kx];
                            for oy in 0..oh {
                                let xin = &x_plane[(oy + ky) * w + kx..(oy + ky) * w + kx + ow];
                                let orow = &mut out_plane[oy * ow..(oy + 1) * ow];
                                for i in 0..ow {
                                    orow[i] += wv0 * xin[i];
                                }
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::from_vec(vec![out_ch, oh, ow], out).expect("conv output shape");
        Ok(self.push(Op::Conv2d, vec![x, weight, bias], value))
    }

    /// 2x2 average pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn avg_pool2(&mut self, x: NodeId, context: &str) -> Result<NodeId, GraphError> {
        let xs = self.value(x).shape();
        if xs.len() != 3 || xs[1] < 2 || xs[2] < 2 {
            return Err(GraphError::ShapeMismatch {
                context: context.to_string(),
                expected: vec![xs.first().copied().unwrap_or(1), 2, 2],
                got: xs.to_vec(),
            });
        }
        let (ch, h, w) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0; ch * oh * ow];
        {
            let xv = self.value(x).data();
            for c in 0..ch {
                let plane = &xv[c * h * w..(c + 1) * h * w];
                let opl = &mut out[c * oh * ow..(c + 1) * oh * ow];
                for oy in 0..oh {
                    let r0 = &plane[2 * oy * w..2 * oy * w + w];
                    let r1 = &plane[(2 * oy + 1) * w..(2 * oy + 1) * w + w];
                    for ox in 0..ow {
                        opl[oy * ow + ox] =
                            0.25 * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
                    }
                }
            }
        }
        let value = Tensor::from_vec(vec![ch, oh, ow], out).expect("pool output shape");
        Ok(self.push(Op::AvgPool2, vec![x], value))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let shape = self.value(x).shape().to_vec();
        let value = Tensor::from_vec(shape, out).expect("relu output shape");
        self.push(Op::Relu, vec![x], value)
    }

    /// Dense layer `y = W x + b` treating `x` as a flat vector.
    pub fn dense(
        &mut self,
        weight: NodeId,
        x: NodeId,
        bias: NodeId,
        context: &str,
    ) -> Result<NodeId, GraphError> {
        let ws = self.value(weight).shape();
        let xn = self.value(x).len();
        if ws.len() != 2 || ws[1] != xn {
            return Err(GraphError::ShapeMismatch {
                context: context.to_string(),
                expected: ws.to_vec(),
                got: vec![xn],
            });
        }
        let out_n = ws[0];
        let mut out = vec![0.0; out_n];
        {
            let wv = self.value(weight).data();
            let xv = self.value(x).data();
            let bv = self.value(bias).data();
            for o in 0..out_n {
                let row = &wv[o * xn..(o + 1) * xn];
                let mut acc = 0.0;
                for i in 0..xn {
                    acc += row[i] * xv[i];
                }
                out[o] = acc + bv[o];
            }
        }
        let value = Tensor::from_vec(vec![out_n], out).expect("dense output shape");
        Ok(self.push(Op::Dense, vec![weight, x, bias], value))
    }

    /// Concatenates flat vectors in argument order.
    pub fn concat(&mut self, xs: &[NodeId]) -> NodeId {
        let mut out = Vec::new();
        for &id in xs {
            out.extend_from_slice(self.value(id).data());
        }
        let n = out.len();
        let value = Tensor::from_vec(vec![n], out).expect("concat output shape");
        self.push(Op::Concat, xs.to_vec(), value)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| c * v).collect();
        let shape = self.value(x).shape().to_vec();
        let value = Tensor::from_vec(shape, out).expect("scale output shape");
        self.push(Op::Scale(c), vec![x], value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId, context: &str) -> Result<NodeId, GraphError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(GraphError::ShapeMismatch {
                context: context.to_string(),
                expected: self.value(a).shape().to_vec(),
                got: self.value(b).shape().to_vec(),
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let value = Tensor::from_vec(shape, out).expect("add output shape");
        Ok(self.push(Op::Add, vec![a, b], value))
    }

    /// Sums all entries into a scalar.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.value(x).data().iter().sum();
        self.push(Op::Sum, vec![x], Tensor::scalar(total))
    }

    /// Masked mean-of-squares loss: `sum(mask_i (pred_i - target_i)^2) / max(1, sum(mask))`.
    pub fn euclidean_masked(
        &mut self,
        pred: NodeId,
        target: &[f64],
        mask: &[f64],
        context: &str,
    ) -> Result<NodeId, GraphError> {
        let n = self.value(pred).len();
        if target.len() != n || mask.len() != n {
            return Err(GraphError::ShapeMismatch {
                context: context.to_string(),
                expected: vec![n],
                got: vec![target.len()],
            });
        }
        let loss = losses::euclidean_loss(self.value(pred).data(), target, mask)
            .expect("lengths checked above");
        let denom = mask.iter().sum::<f64>().max(1.0);
        Ok(self.push(
            Op::EuclideanMasked {
                target: target.to_vec(),
                mask: mask.to_vec(),
                denom,
            },
            vec![pred],
            Tensor::scalar(loss),
        ))
    }

    /// Mean multinomial logistic loss over rows of `classes` logits.
    pub fn multinomial_logistic(
        &mut self,
        logits: NodeId,
        classes: usize,
        labels: &[u8],
        context: &str,
    ) -> Result<NodeId, GraphError> {
        let n = self.value(logits).len();
        if n != classes * labels.len() {
            return Err(GraphError::ShapeMismatch {
                context: context.to_string(),
                expected: vec![labels.len(), classes],
                got: vec![n],
            });
        }
        let loss = losses::multinomial_logistic_loss(self.value(logits).data(), classes, labels)
            .expect("lengths checked above");
        Ok(self.push(
            Op::MultinomialLogistic {
                classes,
                labels: labels.to_vec(),
            },
            vec![logits],
            Tensor::scalar(loss),
        ))
    }

    /// Propagates gradients from a scalar loss node back to every parameter,
    /// accumulating into `param_grads` (one tensor per parameter, shapes
    /// matching the parameter store). Parameters that do not contribute to
    /// the loss are left untouched, so a zero-initialized buffer reports
    /// exact zeros for them.
    pub fn backward(&self, loss: NodeId, param_grads: &mut [Tensor]) -> Result<(), GraphError> {
        if self.value(loss).len() != 1 {
            return Err(GraphError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        if param_grads.len() != self.params.len() {
            return Err(GraphError::GradientBufferMismatch {
                expected: self.params.len(),
                got: param_grads.len(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Tensor::scalar(1.0));

        for id in (0..self.nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Constant => {}
                Op::Param(idx) => {
                    let buf = param_grads[*idx].data_mut();
                    for (b, gv) in buf.iter_mut().zip(g.data()) {
                        *b += gv;
                    }
                }
                Op::Conv2d => self.backward_conv2d(node, &g, &mut grads),
                Op::AvgPool2 => {
                    let x = node.inputs[0];
                    let xs = self.value(x).shape().to_vec();
                    let (ch, h, w) = (xs[0], xs[1], xs[2]);
                    let (oh, ow) = (h / 2, w / 2);
                    let gx = self.grad_buf(&mut grads, x);
                    let gv = g.data();
                    for c in 0..ch {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let q = 0.25 * gv[(c * oh + oy) * ow + ox];
                                let base = c * h * w + 2 * oy * w + 2 * ox;
                                gx[base] += q;
                                gx[base + 1] += q;
                                gx[base + w] += q;
                                gx[base + w + 1] += q;
                            }
                        }
                    }
                }
                Op::Relu => {
                    let x = node.inputs[0];
                    let xv = self.value(x).data().to_vec();
                    let gx = self.grad_buf(&mut grads, x);
                    for i in 0..xv.len() {
                        if xv[i] > 0.0 {
                            gx[i] += g.data()[i];
                        }
                    }
                }
                Op::Dense => self.backward_dense(node, &g, &mut grads),
                Op::Concat => {
                    let mut offset = 0;
                    for &inp in &node.inputs {
                        let n = self.value(inp).len();
                        let gx = self.grad_buf(&mut grads, inp);
                        for i in 0..n {
                            gx[i] += g.data()[offset + i];
                        }
                        offset += n;
                    }
                }
                Op::Scale(c) => {
                    let x = node.inputs[0];
                    let c = *c;
                    let gx = self.grad_buf(&mut grads, x);
                    for (gxi, gi) in gx.iter_mut().zip(g.data()) {
                        *gxi += c * gi;
                    }
                }
                Op::Add => {
                    for &inp in &node.inputs {
                        let gx = self.grad_buf(&mut grads, inp);
                        for (gxi, gi) in gx.iter_mut().zip(g.data()) {
                            *gxi += gi;
                        }
                    }
                }
                Op::Sum => {
                    let x = node.inputs[0];
                    let g0 = g.item();
                    let gx = self.grad_buf(&mut grads, x);
                    for gxi in gx.iter_mut() {
                        *gxi += g0;
                    }
                }
                Op::EuclideanMasked {
                    target,
                    mask,
                    denom,
                } => {
                    let x = node.inputs[0];
                    let pred = self.value(x).data().to_vec();
                    let g0 = g.item();
                    let gx = self.grad_buf(&mut grads, x);
                    for i in 0..pred.len() {
                        gx[i] += g0 * 2.0 * mask[i] * (pred[i] - target[i]) / denom;
                    }
                }
                Op::MultinomialLogistic { classes, labels } => {
                    let x = node.inputs[0];
                    let logits = self.value(x).data().to_vec();
                    let g0 = g.item() / labels.len() as f64;
                    let gx = self.grad_buf(&mut grads, x);
                    for (row, &label) in labels.iter().enumerate() {
                        let base = row * classes;
                        let row_logits = &logits[base..base + classes];
                        let max = row_logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut z = 0.0;
                        for &l in row_logits {
                            z += (l - max).exp();
                        }
                        for c in 0..*classes {
                            let p = (row_logits[c] - max).exp() / z;
                            let y = if c == label as usize { 1.0 } else { 0.0 };
                            gx[base + c] += g0 * (p - y);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Smallest absolute pre-activation feeding any ReLU in the graph, or
    /// +inf when the graph has none. Finite-difference checks skip instances
    /// where this is within a couple of probe steps of zero, because central
    /// differences straddle the kink there.
    pub fn relu_kink_distance(&self) -> f64 {
        let mut nearest = f64::INFINITY;
        for node in &self.nodes {
            if matches!(node.op, Op::Relu) {
                for v in self.value(node.inputs[0]).data() {
                    nearest = nearest.min(v.abs());
                }
            }
        }
        nearest
    }

    /// Gradient buffer of a node, created zeroed on first touch.
    #[allow(clippy::mut_from_ref)]
    fn grad_buf<'g>(&self, grads: &'g mut [Option<Tensor>], id: NodeId) -> &'g mut [f64] {
        if grads[id].is_none() {
            grads[id] = Some(Tensor::zeros(self.value(id).shape()));
        }
        grads[id].as_mut().expect("just created").data_mut()
    }

    fn backward_conv2d(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let (x, weight, bias) = (node.inputs[0], node.inputs[1], node.inputs[2]);
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        let (in_ch, h, w) = (xs[0], xs[1], xs[2]);
        let (out_ch, k) = (ws[0], ws[2]);
        let (oh, ow) = (h - k + 1, w - k + 1);
        let gv = g.data();

        // d bias
        {
            let gb = self.grad_buf(grads, bias);
            for oc in 0..out_ch {
                let plane = &gv[oc * oh * ow..(oc + 1) * oh * ow];
                gb[oc] += plane.iter().sum::<f64>();
            }
        }
        // d weight
        {
            let xv = self.value(x).data().to_vec();
            let gw = self.grad_buf(grads, weight);
            for oc in 0..out_ch {
                let gplane = &gv[oc * oh * ow..(oc + 1) * oh * ow];
                for ic in 0..in_ch {
                    let xplane = &xv[ic * h * w..(ic + 1) * h * w];
                    for ky in 0..k {
                        for kx in 0..k {
                            let mut acc = 0.0;
                            for oy in 0..oh {
                                let grow = &gplane[oy * ow..(oy + 1) * ow];
                                let xrow = &xplane[(oy + ky) * w + kx..(oy + ky) * w + kx + ow];
                                for i in 0..ow {
                                    acc += grow[i] * xrow[i];
                                }
                            }
                            gw[((oc * in_ch + ic) * k + ky) * k + kx] += acc;
                        }
                    }
                }
            }
        }
        // d input
        {
            let wv = self.value(weight).data().to_vec();
            let gx = self.grad_buf(grads, x);
            for oc in 0..out_ch {
                let gplane = &gv[oc * oh * ow..(oc + 1) * oh * ow];
                for ic in 0..in_ch {
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv0 = wv[((oc * in_ch + ic) * k + ky) * k + kx];
                            for oy in 0..oh {
                                let grow = &gplane[oy * ow..(oy + 1) * ow];
                                let base = ic * h * w + (oy + ky) * w + kx;
                                let xrow = &mut gx[base..base + ow];
                                for i in 0..ow {
                                    xrow[i] += wv0 * grow[i];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward_dense(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let (weight, x, bias) = (node.inputs[0], node.inputs[1], node.inputs[2]);
        let xn = self.value(x).len();
        let out_n = self.value(weight).shape()[0];
        let gv = g.data();
        {
            let gb = self.grad_buf(grads, bias);
            for o in 0..out_n {
                gb[o] += gv[o];
            }
        }
        {
            let xv = self.value(x).data().to_vec();
            let gw = self.grad_buf(grads, weight);
            for o in 0..out_n {
                let go = gv[o];
                if go == 0.0 {
                    continue;
                }
                let row = &mut gw[o * xn..(o + 1) * xn];
                for i in 0..xn {
                    row[i] += go * xv[i];
                }
            }
        }
        {
            let wv = self.value(weight).data().to_vec();
            let gx = self.grad_buf(grads, x);
            for o in 0..out_n {
                let go = gv[o];
                if go == 0.0 {
                    continue;
                }
                let row = &wv[o * xn..(o + 1) * xn];
                for i in 0..xn {
                    gx[i] += go * row[i];
                }
            }
        }
    }
}
