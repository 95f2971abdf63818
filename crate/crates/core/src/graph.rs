//! Reverse-mode differentiation over an append-only node arena.
//!
//! Every op appends a node holding its output value, the op kind and the
//! ids of its parents. Because parents are always created before children,
//! creation order is a topological order; [`Graph::backward`] walks nodes in
//! strictly decreasing creation index, so gradient accumulation order is fixed
//! and results are bit-reproducible.
//!
//! Only nodes that transitively depend on a trainable leaf carry gradients;
//! constant inputs (features, labels) cost nothing on the backward pass.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::{matmul_kernel, Tensor};
use crate::{Error, Result};

/// Index of a node in its [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Gelu(NodeId),
    Abs(NodeId),
    Softmax {
        x: NodeId,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
    SliceRows {
        x: NodeId,
        start: usize,
    },
    SliceCols {
        x: NodeId,
        start: usize,
    },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    Reshape(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    WindowMin {
        q: NodeId,
        argmin: Vec<usize>,
    },
    WindowSoftmin {
        q: NodeId,
        tau: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    trainable: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every trainable leaf the loss
/// depends on.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// A leaf that receives a gradient on [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, trainable: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: trainable,
            trainable,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<NodeId> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = self.parents(&op).any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Tensor::from_parts(shape, data),
            op,
            requires_grad,
            trainable: false,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn parents<'a>(&self, op: &'a Op) -> impl Iterator<Item = NodeId> + 'a {
        let (fixed, list): ([Option<NodeId>; 3], &'a [NodeId]) = match op {
            Op::Leaf => ([None; 3], &[]),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                ([Some(*a), Some(*b), None], &[])
            }
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Gelu(a)
            | Op::Abs(a)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Mean(a) => ([Some(*a), None, None], &[]),
            Op::Softmax { x, .. } | Op::SliceRows { x, .. } | Op::SliceCols { x, .. } => ([Some(*x), None, None], &[]),
            Op::LayerNorm { x, gain, bias, .. } => ([Some(*x), Some(*gain), Some(*bias)], &[]),
            Op::ConcatRows(v) | Op::ConcatCols(v) => ([None; 3], v.as_slice()),
            Op::WindowMin { q, .. } | Op::WindowSoftmin { q, .. } => ([Some(*q), None, None], &[]),
        };
        fixed.into_iter().flatten().chain(list.iter().copied())
    }

    fn matrix_dims(&self, op: &'static str, id: NodeId) -> Result<(usize, usize)> {
        let t = self.value(id);
        match *t.shape() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Shape {
                op,
                lhs: t.shape().to_vec(),
                rhs: vec![],
            }),
        }
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(shape_err("matmul", av, bv));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let data = matmul_kernel(av.data(), bv.data(), m, k, n);
        self.push("matmul", vec![m, n], data, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.matrix_dims("transpose", a)?;
        let data = transpose_kernel(self.value(a).data(), r, c);
        self.push("transpose", vec![c, r], data, Op::Transpose(a))
    }

    // ---- elementwise ----------------------------------------------------

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = av.shape().to_vec();
        self.push(name, shape, data, op)
    }

    fn unary(&mut self, name: &'static str, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> Result<NodeId> {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        let shape = av.shape().to_vec();
        self.push(name, shape, data, op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a row vector (shape `[c]` or `[1, c]`) to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (av, rv) = (self.value(a), self.value(row));
        let c = av.cols();
        if rv.numel() != c || rv.rows() != 1 {
            return Err(shape_err("add_row", av, rv));
        }
        let data = av
            .data()
            .chunks_exact(c)
            .flat_map(|r| r.iter().zip(rv.data()).map(|(&x, &b)| x + b))
            .collect();
        let shape = av.shape().to_vec();
        self.push("add_row", shape, data, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.unary("scale", a, |x| x * factor, Op::Scale(a, factor))
    }

    /// `a + c` elementwise.
    pub fn offset(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.unary("offset", a, |x| x + c, Op::Offset(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary("sigmoid", a, math::sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary("tanh", a, math::tanh, Op::Tanh(a))
    }

    /// GELU with the tanh approximation, see [`math::gelu`].
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary("gelu", a, math::gelu, Op::Gelu(a))
    }

    /// Absolute value; the subgradient at exactly zero is 0.
    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary("abs", a, f64::abs, Op::Abs(a))
    }

    // ---- normalization --------------------------------------------------

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let rank = xv.rank();
        if axis >= rank {
            return Err(Error::Axis {
                op: "softmax",
                axis,
                rank,
            });
        }
        let shape = xv.shape().to_vec();
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = xv.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| src[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = math::exp(src[idx(k)] - max);
                    out[idx(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[idx(k)] /= total;
                }
            }
        }
        self.push("softmax", shape, out, Op::Softmax { x, outer, len, inner })
    }

    /// Softmax along the last axis.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let axis = self.value(x).rank() - 1;
        self.softmax(x, axis)
    }

    /// Layer normalization over the last axis with population variance,
    /// followed by the per-feature affine `gain`, `bias`.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let d = xv.cols();
        if gv.numel() != d || bv.numel() != d {
            return Err(shape_err("layer_norm", xv, gv));
        }
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks_exact(d) {
            let (mean, rstd) = row_stats(row, eps);
            out.extend(
                row.iter()
                    .zip(gv.data().iter().zip(bv.data()))
                    .map(|(&v, (&g, &b))| (v - mean) * rstd * g + b),
            );
        }
        let shape = xv.shape().to_vec();
        self.push("layer_norm", shape, out, Op::LayerNorm { x, gain, bias, eps })
    }

    // ---- structural -----------------------------------------------------

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.matrix_dims("slice_rows", x)?;
        if len == 0 || start + len > r {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: vec![r, c],
                rhs: vec![start, len],
            });
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        self.push("slice_rows", vec![len, c], data, Op::SliceRows { x, start })
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.matrix_dims("slice_cols", x)?;
        if len == 0 || start + len > c {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: vec![r, c],
                rhs: vec![start, len],
            });
        }
        let src = self.value(x).data();
        let data = (0..r)
            .flat_map(|i| src[i * c + start..i * c + start + len].iter().copied())
            .collect();
        self.push("slice_cols", vec![r, len], data, Op::SliceCols { x, start })
    }

    /// Stacks matrices vertically. Rank-1 inputs count as single rows.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts.first().ok_or(Error::Shape {
            op: "concat_rows",
            lhs: vec![],
            rhs: vec![],
        })?;
        let c = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != c || v.rank() > 2 {
                return Err(shape_err("concat_rows", self.value(*first), v));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        self.push("concat_rows", vec![rows, c], data, Op::ConcatRows(parts.to_vec()))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts.first().ok_or(Error::Shape {
            op: "concat_cols",
            lhs: vec![],
            rhs: vec![],
        })?;
        let (r, _) = self.matrix_dims("concat_cols", *first)?;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.matrix_dims("concat_cols", p)?;
            if pr != r {
                return Err(shape_err("concat_cols", self.value(*first), self.value(p)));
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push("concat_cols", vec![r, total], data, Op::ConcatCols(parts.to_vec()))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.value(x).reshape(shape)?;
        let shape = v.shape().to_vec();
        self.push("reshape", shape, v.to_vec(), Op::Reshape(x))
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let m = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.push("mean", vec![1], vec![m], Op::Mean(x))
    }

    /// Memory elements of a score sequence: `m[0] = q[0]` and for `t > 0`
    /// the minimum of `q[max(0, t - tau) .. t]` (the current frame excluded).
    /// Ties resolve to the earliest index, which is where the subgradient goes.
    pub fn window_min(&mut self, q: NodeId, tau: usize) -> Result<NodeId> {
        let qv = self.value(q);
        if qv.numel() == 0 || tau == 0 {
            return Err(Error::EmptySequence);
        }
        let scores = qv.data();
        let argmin: Vec<usize> = (0..scores.len()).map(|t| memory_argmin(scores, t, tau)).collect();
        let data = argmin.iter().map(|&k| scores[k]).collect();
        let shape = qv.shape().to_vec();
        self.push("window_min", shape, data, Op::WindowMin { q, argmin })
    }

    /// Current elements of a score sequence: the softmin-weighted mean of
    /// `q[t .. min(T, t + tau)]`, weights `softmax(-q)` over that window.
    pub fn window_softmin(&mut self, q: NodeId, tau: usize) -> Result<NodeId> {
        let qv = self.value(q);
        if qv.numel() == 0 || tau == 0 {
            return Err(Error::EmptySequence);
        }
        let scores = qv.data();
        let data = (0..scores.len())
            .map(|t| {
                let (_, c) = softmin_window(scores, t, tau);
                c
            })
            .collect();
        let shape = qv.shape().to_vec();
        self.push("window_softmin", shape, data, Op::WindowSoftmin { q, tau })
    }

    // ---- backward -------------------------------------------------------

    /// Gradients of the scalar `loss` with respect to every trainable leaf.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out: Vec<Option<Tensor>> = vec![None; self.nodes.len()];

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if node.trainable {
                out[idx] = Some(Tensor::from_parts(node.value.shape().to_vec(), dy));
                continue;
            }
            self.propagate(node, &dy, &mut grads);
        }
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        let mut acc = |id: NodeId, contrib: Vec<f64>| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(g) => g.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                slot => *slot = Some(contrib),
            }
        };
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if needs(a) {
                    let bt = transpose_kernel(bv.data(), k, n);
                    acc(a, matmul_kernel(dy, &bt, m, n, k));
                }
                if needs(b) {
                    let at = transpose_kernel(av.data(), m, k);
                    acc(b, matmul_kernel(&at, dy, k, m, n));
                }
            }
            &Op::Transpose(a) => {
                let s = node.value.shape();
                acc(a, transpose_kernel(dy, s[0], s[1]));
            }
            &Op::Add(a, b) => {
                acc(a, dy.to_vec());
                acc(b, dy.to_vec());
            }
            &Op::Sub(a, b) => {
                acc(a, dy.to_vec());
                acc(b, dy.iter().map(|g| -g).collect());
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                if needs(a) {
                    acc(a, dy.iter().zip(bv).map(|(g, v)| g * v).collect());
                }
                if needs(b) {
                    acc(b, dy.iter().zip(av).map(|(g, v)| g * v).collect());
                }
            }
            &Op::AddRow(a, row) => {
                acc(a, dy.to_vec());
                if needs(row) {
                    let c = self.value(row).numel();
                    let mut g = vec![0.0; c];
                    for r in dy.chunks_exact(c) {
                        g.iter_mut().zip(r).for_each(|(a, v)| *a += v);
                    }
                    acc(row, g);
                }
            }
            &Op::Scale(a, f) => acc(a, dy.iter().map(|g| g * f).collect()),
            &Op::Offset(a) | &Op::Reshape(a) => acc(a, dy.to_vec()),
            &Op::Sigmoid(a) => acc(a, dy.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect()),
            &Op::Tanh(a) => acc(a, dy.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect()),
            &Op::Gelu(a) => {
                let x = self.value(a).data();
                acc(a, dy.iter().zip(x).map(|(g, &v)| g * math::gelu_grad(v)).collect());
            }
            &Op::Abs(a) => {
                let x = self.value(a).data();
                acc(
                    a,
                    dy.iter()
                        .zip(x)
                        .map(|(g, &v)| {
                            if v > 0.0 {
                                *g
                            } else if v < 0.0 {
                                -g
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                );
            }
            &Op::Softmax { x, outer, len, inner } => {
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..len).map(|k| dy[idx(k)] * y[idx(k)]).sum();
                        for k in 0..len {
                            dx[idx(k)] = y[idx(k)] * (dy[idx(k)] - dot);
                        }
                    }
                }
                acc(x, dx);
            }
            &Op::LayerNorm { x, gain, bias, eps } => {
                let xv = self.value(x).data();
                let g = self.value(gain).data();
                let d = g.len();
                let mut dx = vec![0.0; xv.len()];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for (r, (row, dyr)) in xv.chunks_exact(d).zip(dy.chunks_exact(d)).enumerate() {
                    let (mean, rstd) = row_stats(row, eps);
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * rstd).collect();
                    let dxhat: Vec<f64> = dyr.iter().zip(g).map(|(a, b)| a * b).collect();
                    let m1 = dxhat.iter().sum::<f64>() / d as f64;
                    let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        dx[r * d + j] = rstd * (dxhat[j] - m1 - xhat[j] * m2);
                        dgain[j] += dyr[j] * xhat[j];
                        dbias[j] += dyr[j];
                    }
                }
                acc(x, dx);
                acc(gain, dgain);
                acc(bias, dbias);
            }
            &Op::SliceRows { x, start } => {
                let xv = self.value(x);
                let c = xv.cols();
                let mut dx = vec![0.0; xv.numel()];
                dx[start * c..start * c + dy.len()].copy_from_slice(dy);
                acc(x, dx);
            }
            &Op::SliceCols { x, start } => {
                let xv = self.value(x);
                let (r, c) = (xv.shape()[0], xv.shape()[1]);
                let len = dy.len() / r;
                let mut dx = vec![0.0; xv.numel()];
                for i in 0..r {
                    dx[i * c + start..i * c + start + len].copy_from_slice(&dy[i * len..(i + 1) * len]);
                }
                acc(x, dx);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    acc(p, dy[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut col = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    let g = (0..rows)
                        .flat_map(|i| dy[i * total + col..i * total + col + pc].iter().copied())
                        .collect();
                    acc(p, g);
                    col += pc;
                }
            }
            &Op::Sum(a) => acc(a, vec![dy[0]; self.value(a).numel()]),
            &Op::Mean(a) => {
                let n = self.value(a).numel();
                acc(a, vec![dy[0] / n as f64; n]);
            }
            Op::WindowMin { q, argmin } => {
                let mut dq = vec![0.0; dy.len()];
                for (g, &k) in dy.iter().zip(argmin) {
                    dq[k] += g;
                }
                acc(*q, dq);
            }
            &Op::WindowSoftmin { q, tau } => {
                let scores = self.value(q).data();
                let mut dq = vec![0.0; scores.len()];
                for (t, g) in dy.iter().enumerate() {
                    let (weights, c) = softmin_window(scores, t, tau);
                    // dc/dq_k = w_k * (1 - q_k + c)
                    for (j, w) in weights.iter().enumerate() {
                        dq[t + j] += g * w * (1.0 - scores[t + j] + c);
                    }
                }
                acc(q, dq);
            }
        }
    }
}

fn transpose_kernel(src: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    out
}

/// Mean and reciprocal standard deviation (population variance) of a row.
fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / math::sqrt(var + eps))
}

/// Index of the memory element for frame `t` (0-based), earliest on ties.
pub(crate) fn memory_argmin(q: &[f64], t: usize, tau: usize) -> usize {
    if t == 0 {
        return 0;
    }
    let start = t.saturating_sub(tau);
    (start..t).fold(start, |best, k| if q[k] < q[best] { k } else { best })
}

/// Softmin weights over `q[t .. min(T, t + tau)]` and the weighted mean.
pub(crate) fn softmin_window(q: &[f64], t: usize, tau: usize) -> (Vec<f64>, f64) {
    let end = (t + tau).min(q.len());
    let window = &q[t..end];
    let lowest = window.iter().copied().fold(f64::INFINITY, f64::min);
    let mut weights: Vec<f64> = window.iter().map(|v| math::exp(lowest - v)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let c = weights.iter().zip(window).map(|(w, v)| w * v).sum();
    (weights, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut g = Graph::new();
        let x = g.param(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn dot_with_self_gives_twice_x() {
        let mut g = Graph::new();
        let x = g.param(t(&[1, 3], &[1.5, -2.0, 0.25]));
        let xt = g.transpose(x).unwrap();
        let d = g.matmul(x, xt).unwrap();
        let grads = g.backward(d).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, -4.0, 0.5]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2]));
        assert_eq!(g.backward(x).unwrap_err(), Error::NonScalarLoss(vec![2]));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let c = g.constant(Tensor::scalar(3.0));
        let y = g.mul(x, c).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0]);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn unreachable_leaf_has_no_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let unused = g.param(Tensor::scalar(5.0));
        let y = g.scale(x, 4.0).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(unused).is_none());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(f64::MAX));
        assert_eq!(g.scale(x, 10.0).unwrap_err(), Error::NonFinite { op: "scale" });
    }

    #[test]
    fn softmax_reference_values() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[1.0, 2.0]));
        let s = g.softmax(x, 0).unwrap();
        let v = g.value(s).data();
        assert!((v[0] - 0.268_941_421_369_995_1).abs() < 1e-15);
        assert!((v[1] - 0.731_058_578_630_004_9).abs() < 1e-15);

        let z = g.constant(t(&[2], &[0.0, 0.0]));
        let s = g.softmax(z, 0).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);

        let big = g.constant(t(&[3], &[700.0, 700.0, 700.0]));
        let s = g.softmax(big, 0).unwrap();
        for v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_axis_out_of_range() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 2]));
        assert_eq!(
            g.softmax(x, 2).unwrap_err(),
            Error::Axis {
                op: "softmax",
                axis: 2,
                rank: 2
            }
        );
    }

    #[test]
    fn softmax_along_first_axis_normalizes_columns() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 5.0]));
        let s = g.softmax(x, 0).unwrap();
        let v = g.value(s);
        for c in 0..3 {
            assert!((v.at(0, c) + v.at(1, c) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_reference_values() {
        let mut g = Graph::new();
        let ones = g.constant(Tensor::full(&[3], 1.0));
        let zeros = g.constant(Tensor::zeros(&[3]));
        let x = g.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let y = g.layer_norm(x, ones, zeros, 1e-5).unwrap();
        let denom = (2.0_f64 / 3.0 + 1e-5).sqrt();
        let expected = [-1.0 / denom, 0.0, 1.0 / denom];
        for (a, b) in g.value(y).data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }

        let c = g.constant(t(&[1, 3], &[4.0, 4.0, 4.0]));
        let y = g.layer_norm(c, ones, zeros, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);

        let ones2 = g.constant(Tensor::full(&[2], 1.0));
        let zeros2 = g.constant(Tensor::zeros(&[2]));
        let x = g.constant(t(&[1, 2], &[1.0, -1.0]));
        let y = g.layer_norm(x, ones2, zeros2, 1e-300).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, -1.0]);
    }

    #[test]
    fn window_ops_reference_values() {
        let mut g = Graph::new();
        let q = g.constant(t(&[4], &[3.0, 1.0, 2.0, 5.0]));
        let m = g.window_min(q, 2).unwrap();
        assert_eq!(g.value(m).data(), &[3.0, 3.0, 1.0, 1.0]);

        let q = g.constant(t(&[2], &[0.0, 1.0]));
        let c = g.window_softmin(q, 2).unwrap();
        let v = g.value(c).data();
        assert!((v[0] - 0.268_941_421_369_995_1).abs() < 1e-15);
        assert_eq!(v[1], 1.0);
    }

    #[test]
    fn window_min_ties_route_to_earliest_frame() {
        let mut g = Graph::new();
        let q = g.param(t(&[4], &[2.0, 1.0, 1.0, 7.0]));
        let m = g.window_min(q, 3).unwrap();
        let s = g.sum(m).unwrap();
        let grads = g.backward(s).unwrap();
        // m = [q0, q0, q1, q1]
        assert_eq!(grads.get(q).unwrap().data(), &[2.0, 2.0, 0.0, 0.0]);
    }
}
