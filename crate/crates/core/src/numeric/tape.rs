//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every forward operation as a node; [`Tape::backward`]
//! replays the nodes in reverse creation order (a reverse topological order)
//! exactly once, accumulating gradients additively at fan-out. Tapes are
//! rebuilt per forward pass, so perturb-and-rerun styles (finite differences,
//! line searches) need no graph surgery.

use std::ops::Range;
use std::rc::Rc;

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::NumericError;

/// Handle to a node on a [`Tape`]. Carries the owning tape's identity so a
/// handle from another tape is rejected rather than silently resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u32,
    index: u32,
}

impl NodeId {
    fn idx(self) -> usize {
        self.index as usize
    }
}

static NEXT_TAPE_ID: std::sync::atomic::AtomicU32 = std::sync::atomic::AtomicU32::new(0);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    /// a * b^T, the attention-logit product.
    MatmulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// (L, d) + (d) with the vector added to every row.
    AddRowBroadcast(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Relu(NodeId),
    Gelu(NodeId),
    /// Row-wise masked softmax over a (L, L) matrix. Masked columns get
    /// exactly zero probability and exactly zero gradient.
    SoftmaxRowsMasked(NodeId, Rc<Vec<bool>>),
    LayerNormRows {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
    /// Select rows of a table: (V, d) gathered with k indices -> (k, d).
    GatherRows(NodeId, Rc<Vec<usize>>),
    /// Mean over rows: (k, d) -> (d).
    MeanRows(NodeId),
    /// Stack inputs (viewed as rows) into one matrix along axis 0.
    ConcatRows(Vec<NodeId>),
    /// Take a row range of a matrix.
    SliceRows(NodeId, Range<usize>),
    /// Take a column range of a matrix.
    SliceCols(NodeId, Range<usize>),
    /// Concatenate matrices with equal row counts along axis 1.
    ConcatCols(Vec<NodeId>),
    LogSigmoid(NodeId),
    Neg(NodeId),
    Sum(NodeId),
    MeanAll(NodeId),
    /// Stack scalar nodes into a vector.
    StackScalars(Vec<NodeId>),
    /// Stable log(sum(exp(v))) of a vector -> scalar.
    LogSumExp(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    tape_id: u32,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to the given node.
    ///
    /// Errors if the node was never on the tape; returns a zero tensor if it
    /// was recorded but unreachable from the loss.
    pub fn get(&self, id: NodeId, shape_of: &Tensor) -> Result<Tensor, NumericError> {
        if id.tape != self.tape_id {
            return Err(NumericError::NotOnTape);
        }
        match self.grads.get(id.idx()) {
            None => Err(NumericError::NotOnTape),
            Some(Some(g)) => Ok(g.clone()),
            Some(None) => Ok(Tensor::zeros(shape_of.shape())),
        }
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        if id.tape != self.tape_id {
            return None;
        }
        self.grads.get_mut(id.idx()).and_then(|g| g.take())
    }
}

/// Records a forward computation for later reverse-mode differentiation.
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, std::sync::atomic::Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.idx()].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        debug_assert!(
            value.all_finite(),
            "non-finite value produced by {:?}",
            op
        );
        let id = NodeId {
            tape: self.id,
            index: self.nodes.len() as u32,
        };
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.idx()].needs_grad
    }

    /// A differentiable leaf (parameter).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = matmul(self.value(a), self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Matmul(a, b), value, ng)
    }

    /// `a * b^T`; used for attention logits Q K^T.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = matmul_nt(self.value(a), self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatmulNt(a, b), value, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "add length mismatch");
        let mut out = va.clone();
        for (o, v) in out.data_mut().iter_mut().zip(vb.data().iter()) {
            *o += v;
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), out, ng)
    }

    /// Add a length-d vector to every row of an (L, d) matrix.
    pub fn add_row_broadcast(&mut self, m: NodeId, v: NodeId) -> NodeId {
        let (rows, cols) = self.value(m).view_2d();
        let (vr, vc) = self.value(v).view_2d();
        assert_eq!((vr, vc), (1, cols), "broadcast vector shape mismatch");
        let mut out = self.value(m).clone();
        let vd = self.value(v).data().to_vec();
        for r in 0..rows {
            let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
            for (o, b) in row.iter_mut().zip(vd.iter()) {
                *o += b;
            }
        }
        let ng = self.needs(m) || self.needs(v);
        self.push(Op::AddRowBroadcast(m, v), out, ng)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let mut out = self.value(x).clone();
        for o in out.data_mut() {
            *o *= factor;
        }
        let ng = self.needs(x);
        self.push(Op::Scale(x, factor), out, ng)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for o in out.data_mut() {
            *o = o.tanh();
        }
        let ng = self.needs(x);
        self.push(Op::Tanh(x), out, ng)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for o in out.data_mut() {
            *o = o.max(0.0);
        }
        let ng = self.needs(x);
        self.push(Op::Relu(x), out, ng)
    }

    /// Gaussian error linear unit, tanh approximation.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for o in out.data_mut() {
            *o = gelu_value(*o);
        }
        let ng = self.needs(x);
        self.push(Op::Gelu(x), out, ng)
    }

    /// Row-wise masked softmax over a square attention-logit matrix.
    ///
    /// `mask[j]` marks column j as a real unit. Masked columns receive
    /// exactly zero probability; unmasked entries are positive and sum to 1
    /// per row. Computed with max-subtraction.
    pub fn softmax_rows_masked(
        &mut self,
        logits: NodeId,
        mask: Rc<Vec<bool>>,
    ) -> Result<NodeId, NumericError> {
        let (rows, cols) = self.value(logits).view_2d();
        if mask.len() != cols {
            return Err(NumericError::MaskLength {
                expected: cols,
                got: mask.len(),
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(NumericError::AllMasked);
        }
        let mut out = Tensor::zeros(self.value(logits).shape());
        for r in 0..rows {
            let row = self.value(logits).row(r).to_vec();
            let soft = softmax_masked_slice(&row, &mask)?;
            out.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(&soft);
        }
        let ng = self.needs(logits);
        Ok(self.push(Op::SoftmaxRowsMasked(logits, mask), out, ng))
    }

    /// Row-wise layer normalization with learned gain and bias.
    ///
    /// Variance uses 1/d normalization; `out = gain * (x - mean)/sqrt(var + eps) + bias`.
    pub fn layer_norm_rows(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> NodeId {
        assert!(eps > 0.0, "layer_norm eps must be positive");
        let (rows, cols) = self.value(x).view_2d();
        assert_eq!(self.value(gain).len(), cols);
        assert_eq!(self.value(bias).len(), cols);
        let mut out = Tensor::zeros(self.value(x).shape());
        for r in 0..rows {
            let row = self.value(x).row(r);
            let (mean, var) = mean_var(row);
            let inv = 1.0 / (var + eps).sqrt();
            let g = self.value(gain).data();
            let b = self.value(bias).data();
            for c in 0..cols {
                out.data_mut()[r * cols + c] = g[c] * (row[c] - mean) * inv + b[c];
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(Op::LayerNormRows { x, gain, bias, eps }, out, ng)
    }

    pub fn gather_rows(&mut self, table: NodeId, indices: Rc<Vec<usize>>) -> NodeId {
        let (v, d) = self.value(table).view_2d();
        let mut out = Tensor::zeros(&[indices.len(), d]);
        for (r, &ix) in indices.iter().enumerate() {
            assert!(ix < v, "gather index {} out of range {}", ix, v);
            let src = self.value(table).row(ix).to_vec();
            out.data_mut()[r * d..(r + 1) * d].copy_from_slice(&src);
        }
        let ng = self.needs(table);
        self.push(Op::GatherRows(table, indices), out, ng)
    }

    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let (rows, cols) = self.value(x).view_2d();
        assert!(rows > 0, "mean_rows over empty matrix");
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (o, v) in out.iter_mut().zip(self.value(x).row(r).iter()) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= rows as f64;
        }
        let ng = self.needs(x);
        self.push(Op::MeanRows(x), Tensor::vector(out), ng)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let (_, cols) = self.value(parts[0]).view_2d();
        let mut data = Vec::new();
        let mut total_rows = 0;
        for &p in parts {
            let (r, c) = self.value(p).view_2d();
            assert_eq!(c, cols, "concat_rows column mismatch");
            data.extend_from_slice(self.value(p).data());
            total_rows += r;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(
            Op::ConcatRows(parts.to_vec()),
            Tensor::matrix(total_rows, cols, data),
            ng,
        )
    }

    pub fn slice_rows(&mut self, x: NodeId, range: Range<usize>) -> NodeId {
        let (rows, cols) = self.value(x).view_2d();
        assert!(range.end <= rows);
        let data = self.value(x).data()[range.start * cols..range.end * cols].to_vec();
        let ng = self.needs(x);
        self.push(
            Op::SliceRows(x, range.clone()),
            Tensor::matrix(range.end - range.start, cols, data),
            ng,
        )
    }

    pub fn slice_cols(&mut self, x: NodeId, range: Range<usize>) -> NodeId {
        let (rows, cols) = self.value(x).view_2d();
        assert!(range.end <= cols);
        let w = range.end - range.start;
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&self.value(x).row(r)[range.start..range.end]);
        }
        let ng = self.needs(x);
        self.push(
            Op::SliceCols(x, range.clone()),
            Tensor::matrix(rows, w, data),
            ng,
        )
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let (rows, _) = self.value(parts[0]).view_2d();
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.value(p).view_2d();
                assert_eq!(r, rows, "concat_cols row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::matrix(rows, total, data),
            ng,
        )
    }

    pub fn log_sigmoid(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for o in out.data_mut() {
            *o = log_sigmoid_value(*o);
        }
        let ng = self.needs(x);
        self.push(Op::LogSigmoid(x), out, ng)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for o in out.data_mut() {
            *o = -*o;
        }
        let ng = self.needs(x);
        self.push(Op::Neg(x), out, ng)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Op::Sum(x), Tensor::scalar(s), ng)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len();
        assert!(n > 0);
        let s = self.value(x).data().iter().sum::<f64>() / n as f64;
        let ng = self.needs(x);
        self.push(Op::MeanAll(x), Tensor::scalar(s), ng)
    }

    pub fn stack_scalars(&mut self, parts: &[NodeId]) -> NodeId {
        let data: Vec<f64> = parts.iter().map(|&p| self.value(p).item()).collect();
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::StackScalars(parts.to_vec()), Tensor::vector(data), ng)
    }

    pub fn log_sum_exp(&mut self, x: NodeId) -> NodeId {
        let d = self.value(x).data();
        let m = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = d.iter().map(|v| (v - m).exp()).sum();
        let out = m + s.ln();
        let ng = self.needs(x);
        self.push(Op::LogSumExp(x), Tensor::scalar(out), ng)
    }

    /// Reverse pass from a scalar loss node.
    ///
    /// Visits nodes in reverse creation order exactly once; gradients
    /// accumulate additively where a node fans out into several consumers.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, NumericError> {
        if !self.value(loss).is_scalar() {
            return Err(NumericError::LossNotScalar);
        }
        if loss.tape != self.id {
            return Err(NumericError::NotOnTape);
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed = Tensor::from_vec(self.value(loss).shape(), vec![1.0]);
        grads[loss.idx()] = Some(seed);

        for idx in (0..=loss.idx()).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                // Leaves keep their gradient queryable even when they do not
                // propagate further.
                if matches!(node.op, Op::Leaf) {
                    grads[idx] = Some(gout);
                }
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(gout);
                }
                Op::Matmul(a, b) => {
                    if self.needs(*a) {
                        let ga = matmul_nt(&gout, self.value(*b));
                        accumulate(&mut grads, *a, reshape_like(ga, self.value(*a)));
                    }
                    if self.needs(*b) {
                        let gb = matmul_tn(self.value(*a), &gout);
                        accumulate(&mut grads, *b, reshape_like(gb, self.value(*b)));
                    }
                }
                Op::MatmulNt(a, b) => {
                    // c = a b^T: da = dc b, db = dc^T a
                    if self.needs(*a) {
                        let ga = matmul(&gout, self.value(*b));
                        accumulate(&mut grads, *a, reshape_like(ga, self.value(*a)));
                    }
                    if self.needs(*b) {
                        let gb = matmul_tn(&gout, self.value(*a));
                        accumulate(&mut grads, *b, reshape_like(gb, self.value(*b)));
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, reshape_like(gout.clone(), self.value(*a)));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, reshape_like(gout, self.value(*b)));
                    }
                }
                Op::AddRowBroadcast(m, v) => {
                    if self.needs(*m) {
                        accumulate(&mut grads, *m, gout.clone());
                    }
                    if self.needs(*v) {
                        let (rows, cols) = gout.view_2d();
                        let mut gv = vec![0.0; cols];
                        for r in 0..rows {
                            for (g, x) in gv.iter_mut().zip(gout.row(r).iter()) {
                                *g += x;
                            }
                        }
                        accumulate(
                            &mut grads,
                            *v,
                            reshape_like(Tensor::vector(gv), self.value(*v)),
                        );
                    }
                }
                Op::Scale(x, factor) => {
                    let mut g = gout;
                    for v in g.data_mut() {
                        *v *= factor;
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::Tanh(x) => {
                    let mut g = gout;
                    for (v, y) in g.data_mut().iter_mut().zip(node.value.data().iter()) {
                        *v *= 1.0 - y * y;
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::Relu(x) => {
                    let mut g = gout;
                    for (v, xin) in g.data_mut().iter_mut().zip(self.value(*x).data().iter()) {
                        if *xin <= 0.0 {
                            *v = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::Gelu(x) => {
                    let mut g = gout;
                    for (v, xin) in g.data_mut().iter_mut().zip(self.value(*x).data().iter()) {
                        *v *= gelu_derivative(*xin);
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::SoftmaxRowsMasked(x, mask) => {
                    let (rows, cols) = node.value.view_2d();
                    let mut gx = Tensor::zeros(node.value.shape());
                    for r in 0..rows {
                        let y = node.value.row(r);
                        let gy = gout.row(r);
                        let dot: f64 = y
                            .iter()
                            .zip(gy.iter())
                            .zip(mask.iter())
                            .filter(|(_, &m)| m)
                            .map(|((yv, gv), _)| yv * gv)
                            .sum();
                        for c in 0..cols {
                            if mask[c] {
                                gx.data_mut()[r * cols + c] = y[c] * (gy[c] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::LayerNormRows { x, gain, bias, eps } => {
                    let (rows, cols) = node.value.view_2d();
                    let xv = self.value(*x);
                    let gv = self.value(*gain).data();
                    let mut gx = Tensor::zeros(xv.shape());
                    let mut ggain = vec![0.0; cols];
                    let mut gbias = vec![0.0; cols];
                    for r in 0..rows {
                        let row = xv.row(r);
                        let (mean, var) = mean_var(row);
                        let inv = 1.0 / (var + eps).sqrt();
                        let gy = gout.row(r);
                        // xhat and the two row means needed by the input grad
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                        let gxhat: Vec<f64> =
                            gy.iter().zip(gv.iter()).map(|(g, w)| g * w).collect();
                        let m1 = gxhat.iter().sum::<f64>() / cols as f64;
                        let m2 = gxhat
                            .iter()
                            .zip(xhat.iter())
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / cols as f64;
                        for c in 0..cols {
                            gx.data_mut()[r * cols + c] = inv * (gxhat[c] - m1 - xhat[c] * m2);
                            ggain[c] += gy[c] * xhat[c];
                            gbias[c] += gy[c];
                        }
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, gx);
                    }
                    if self.needs(*gain) {
                        accumulate(
                            &mut grads,
                            *gain,
                            reshape_like(Tensor::vector(ggain), self.value(*gain)),
                        );
                    }
                    if self.needs(*bias) {
                        accumulate(
                            &mut grads,
                            *bias,
                            reshape_like(Tensor::vector(gbias), self.value(*bias)),
                        );
                    }
                }
                Op::GatherRows(table, indices) => {
                    let mut gt = Tensor::zeros(self.value(*table).shape());
                    let (_, d) = self.value(*table).view_2d();
                    for (r, &ix) in indices.iter().enumerate() {
                        let src = gout.row(r);
                        let dst = &mut gt.data_mut()[ix * d..(ix + 1) * d];
                        for (o, g) in dst.iter_mut().zip(src.iter()) {
                            *o += g;
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::MeanRows(x) => {
                    let (rows, cols) = self.value(*x).view_2d();
                    let mut gx = Tensor::zeros(self.value(*x).shape());
                    let scale = 1.0 / rows as f64;
                    for r in 0..rows {
                        for c in 0..cols {
                            gx.data_mut()[r * cols + c] = gout.data()[c] * scale;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatRows(parts) => {
                    let (_, cols) = node.value.view_2d();
                    let mut offset = 0;
                    for &p in parts {
                        let (r, _) = self.value(p).view_2d();
                        if self.needs(p) {
                            let slice =
                                gout.data()[offset * cols..(offset + r) * cols].to_vec();
                            accumulate(
                                &mut grads,
                                p,
                                reshape_like(Tensor::matrix(r, cols, slice), self.value(p)),
                            );
                        }
                        offset += r;
                    }
                }
                Op::SliceRows(x, range) => {
                    let (_, cols) = self.value(*x).view_2d();
                    let mut gx = Tensor::zeros(self.value(*x).shape());
                    gx.data_mut()[range.start * cols..range.end * cols]
                        .copy_from_slice(gout.data());
                    accumulate(&mut grads, *x, gx);
                }
                Op::SliceCols(x, range) => {
                    let (rows, cols) = self.value(*x).view_2d();
                    let w = range.end - range.start;
                    let mut gx = Tensor::zeros(self.value(*x).shape());
                    for r in 0..rows {
                        for c in 0..w {
                            gx.data_mut()[r * cols + range.start + c] = gout.data()[r * w + c];
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let (rows, _) = node.value.view_2d();
                    let mut offset = 0;
                    for &p in parts {
                        let (_, w) = self.value(p).view_2d();
                        if self.needs(p) {
                            let mut gp = Tensor::zeros(self.value(p).shape());
                            let (total_rows, total_cols) = node.value.view_2d();
                            debug_assert_eq!(total_rows, rows);
                            for r in 0..rows {
                                for c in 0..w {
                                    gp.data_mut()[r * w + c] =
                                        gout.data()[r * total_cols + offset + c];
                                }
                            }
                            accumulate(&mut grads, p, gp);
                        }
                        offset += w;
                    }
                }
                Op::LogSigmoid(x) => {
                    let mut g = gout;
                    for (v, xin) in g.data_mut().iter_mut().zip(self.value(*x).data().iter()) {
                        // d/dx log(sigmoid(x)) = sigmoid(-x)
                        *v *= sigmoid(-xin);
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::Neg(x) => {
                    let mut g = gout;
                    for v in g.data_mut() {
                        *v = -*v;
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::Sum(x) => {
                    let g = gout.item();
                    let mut gx = Tensor::zeros(self.value(*x).shape());
                    for v in gx.data_mut() {
                        *v = g;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::MeanAll(x) => {
                    let n = self.value(*x).len();
                    let g = gout.item() / n as f64;
                    let mut gx = Tensor::zeros(self.value(*x).shape());
                    for v in gx.data_mut() {
                        *v = g;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::StackScalars(parts) => {
                    for (i, &p) in parts.iter().enumerate() {
                        if self.needs(p) {
                            let g = Tensor::from_vec(
                                self.value(p).shape(),
                                vec![gout.data()[i]],
                            );
                            accumulate(&mut grads, p, g);
                        }
                    }
                }
                Op::LogSumExp(x) => {
                    let g = gout.item();
                    let d = self.value(*x).data();
                    let m = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let s: f64 = d.iter().map(|v| (v - m).exp()).sum();
                    let mut gx = Tensor::zeros(self.value(*x).shape());
                    for (o, v) in gx.data_mut().iter_mut().zip(d.iter()) {
                        *o = g * (v - m).exp() / s;
                    }
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Ok(Gradients {
            tape_id: self.id,
            grads,
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.idx()] {
        Some(existing) => existing.add_scaled(&g, 1.0),
        slot @ None => *slot = Some(g),
    }
}

/// Matmul and friends return matrices; restore the producer's rank so
/// accumulation at fan-out stays shape-consistent.
fn reshape_like(mut t: Tensor, like: &Tensor) -> Tensor {
    if t.shape() != like.shape() {
        assert_eq!(t.len(), like.len());
        t = Tensor::from_vec(like.shape(), t.into_data());
    }
    t
}

fn mean_var(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid_value(x: f64) -> f64 {
    // log(sigmoid(x)) = -softplus(-x), computed without overflow
    if x >= 0.0 {
        -((-x).exp().ln_1p())
    } else {
        x - x.exp().ln_1p()
    }
}

fn gelu_value(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.7978845608028654;
    const C: f64 = 0.044715;
    let u = SQRT_2_OVER_PI * (x + C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.7978845608028654;
    const C: f64 = 0.044715;
    let u = SQRT_2_OVER_PI * (x + C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * C * x * x)
}

/// Masked softmax of one logit vector: masked positions get exactly 0,
/// unmasked outputs are positive and sum to 1. Max-subtraction keeps the
/// exponentials in range.
pub fn softmax_masked_slice(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>, NumericError> {
    if logits.len() != mask.len() {
        return Err(NumericError::MaskLength {
            expected: logits.len(),
            got: mask.len(),
        });
    }
    let mut max = f64::NEG_INFINITY;
    for (v, &m) in logits.iter().zip(mask.iter()) {
        if m && *v > max {
            max = *v;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(NumericError::AllMasked);
    }
    let mut out = vec![0.0; logits.len()];
    let mut denom = 0.0;
    for (i, (v, &m)) in logits.iter().zip(mask.iter()).enumerate() {
        if m {
            let e = (v - max).exp();
            out[i] = e;
            denom += e;
        }
    }
    for (o, &m) in out.iter_mut().zip(mask.iter()) {
        if m {
            *o /= denom;
        }
    }
    Ok(out)
}
