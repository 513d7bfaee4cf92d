//! Define-by-run compute graph with reverse-mode gradient propagation.
//!
//! Nodes are appended in forward order, so the creation order is already a
//! topological order; `backward` walks it once in reverse. Leaves may be
//! bound to [`ParamStore`] entries, either whole (`param`) or as gathered
//! rows of an embedding table (`gather`, the lookup op); frozen copies take
//! part in the forward pass without receiving gradient accumulation.

use std::collections::HashMap;

use crate::error::{RecallError, Result};
use crate::numcore::params::{ParamId, ParamStore};
use crate::numcore::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Binding {
    Full(ParamId),
    Rows { id: ParamId, indices: Vec<usize> },
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// y = W x + b; inputs [x, W, b].
    Affine,
    /// inputs [seq NxDin, kernels (w,Din,Dout), bias Dout]; symmetric zero padding.
    Conv1d { window: usize },
    Relu,
    Sigmoid,
    LogSigmoid,
    /// Max-subtracted softmax over a vector.
    Softmax,
    /// Elementwise product, equal shapes.
    Mul,
    Add,
    Scale(f64),
    AddScalar,
    /// Vector concatenation.
    Concat,
    /// Reduce all entries to a scalar.
    Sum,
    /// Elementwise natural log.
    Log,
    /// Identity inside [lo, hi], saturates outside; gradient passes only inside.
    Clamp { lo: f64, hi: f64 },
    Dot,
    /// y_r = M[r] . v; inputs [M NxD, v D].
    MatVec,
    /// y = M^T a; inputs [M NxD, a N].
    MatVecT,
    /// Cosine similarity of two vectors -> scalar.
    Cosine,
    /// Euclidean norm of the difference of two vectors -> scalar.
    EuclideanDist,
    /// Stable log-sum-exp of a vector -> scalar.
    LogSumExp,
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    binding: Option<Binding>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    param_cache: HashMap<(usize, bool), NodeId>,
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

    /// Gradient of the last `backward` root w.r.t. this node, if reached.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor, binding: Option<Binding>) -> NodeId {
        debug_assert!(inputs.iter().all(|i| i.0 < self.nodes.len()));
        debug_assert!(value.all_finite(), "non-finite forward value from {op:?}");
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            inputs,
            value,
            binding,
        });
        id
    }

    // ── leaves ──────────────────────────────────────────────────────

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], value, None)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    /// Leaf bound to a whole parameter tensor. `tracked = false` gives a
    /// frozen copy: it feeds forward but accumulates no gradient.
    /// One leaf per (parameter, tracked) pair is reused within a graph.
    pub fn param(&mut self, store: &ParamStore, id: ParamId, tracked: bool) -> NodeId {
        if let Some(&node) = self.param_cache.get(&(id.0, tracked)) {
            return node;
        }
        let binding = tracked.then_some(Binding::Full(id));
        let node = self.push(Op::Leaf, vec![], store.tensor(id).clone(), binding);
        self.param_cache.insert((id.0, tracked), node);
        node
    }

    /// Lookup leaf: rows of an embedding table, one per index, in order.
    /// Gradients scatter-add back into the table rows when tracked.
    pub fn gather(
        &mut self,
        store: &ParamStore,
        id: ParamId,
        indices: &[usize],
        tracked: bool,
    ) -> Result<NodeId> {
        let table = store.tensor(id);
        if table.shape().len() != 2 {
            return Err(RecallError::Dimension(format!(
                "gather from non-matrix parameter '{}'",
                store.name(id)
            )));
        }
        let rows = table.rows();
        let cols = table.cols();
        if let Some(&bad) = indices.iter().find(|&&r| r >= rows) {
            return Err(RecallError::Domain(format!(
                "gather index {bad} out of range for table with {rows} rows"
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &r in indices {
            data.extend_from_slice(table.row(r));
        }
        let value = Tensor::matrix(indices.len(), cols, data)?;
        let binding = tracked.then(|| Binding::Rows {
            id,
            indices: indices.to_vec(),
        });
        Ok(self.push(Op::Leaf, vec![], value, binding))
    }

    /// Single-row lookup, returned as a vector.
    pub fn gather_row(
        &mut self,
        store: &ParamStore,
        id: ParamId,
        index: usize,
        tracked: bool,
    ) -> Result<NodeId> {
        let table = store.tensor(id);
        if index >= table.rows() {
            return Err(RecallError::Lookup(format!(
                "row {index} out of range in parameter '{}'",
                store.name(id)
            )));
        }
        let value = Tensor::vector(table.row(index).to_vec());
        let binding = tracked.then(|| Binding::Rows {
            id,
            indices: vec![index],
        });
        Ok(self.push(Op::Leaf, vec![], value, binding))
    }

    // ── operations ──────────────────────────────────────────────────

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.shape().len() != 2 || !xv.is_vector() || !bv.is_vector() {
            return Err(RecallError::Dimension("affine wants W: matrix, x/b: vectors".into()));
        }
        let (m, n) = (wv.rows(), wv.cols());
        if xv.numel() != n || bv.numel() != m {
            return Err(RecallError::Dimension(format!(
                "affine shapes: W {m}x{n}, x {}, b {}",
                xv.numel(),
                bv.numel()
            )));
        }
        let xd = xv.data();
        let mut out = bv.data().to_vec();
        for (i, o) in out.iter_mut().enumerate() {
            *o += dot(wv.row(i), xd);
        }
        Ok(self.push(Op::Affine, vec![x, w, b], Tensor::vector(out), None))
    }

    pub fn conv1d(&mut self, seq: NodeId, kernels: NodeId, bias: NodeId) -> Result<NodeId> {
        let (sv, kv, bv) = (self.value(seq), self.value(kernels), self.value(bias));
        if sv.shape().len() != 2 {
            return Err(RecallError::Dimension("conv1d input must be a NxD matrix".into()));
        }
        if sv.rows() == 0 {
            return Err(RecallError::Domain("conv1d on empty sequence".into()));
        }
        if kv.shape().len() != 3 {
            return Err(RecallError::Dimension("conv1d kernels must be (w, Din, Dout)".into()));
        }
        let (w, din, dout) = (kv.shape()[0], kv.shape()[1], kv.shape()[2]);
        if w % 2 == 0 {
            return Err(RecallError::Domain(format!("conv window {w} must be odd")));
        }
        if sv.cols() != din || bv.numel() != dout {
            return Err(RecallError::Dimension(format!(
                "conv1d shapes: seq NxD has D={}, kernels Din={din}, bias {}",
                sv.cols(),
                bv.numel()
            )));
        }
        let n = sv.rows();
        let center = (w - 1) / 2;
        let sd = sv.data();
        let kd = kv.data();
        let bd = bv.data();
        let mut out = vec![0.0; n * dout];
        for p in 0..n {
            let orow = &mut out[p * dout..(p + 1) * dout];
            orow.copy_from_slice(bd);
            for t in 0..w {
                let Some(src) = (p + t).checked_sub(center).filter(|&s| s < n) else {
                    continue;
                };
                let xrow = &sd[src * din..(src + 1) * din];
                let ktap = &kd[t * din * dout..(t + 1) * din * dout];
                for (i, &xi) in xrow.iter().enumerate() {
                    let krow = &ktap[i * dout..(i + 1) * dout];
                    for (o, &kvv) in orow.iter_mut().zip(krow) {
                        *o += xi * kvv;
                    }
                }
            }
        }
        let value = Tensor::matrix(n, dout, out)?;
        Ok(self.push(Op::Conv1d { window: w }, vec![seq, kernels, bias], value, None))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = map_tensor(self.value(x), |v| v.max(0.0));
        self.push(Op::Relu, vec![x], value, None)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = map_tensor(self.value(x), sigmoid);
        self.push(Op::Sigmoid, vec![x], value, None)
    }

    /// log(sigmoid(x)) in the stable branch form.
    pub fn log_sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = map_tensor(self.value(x), log_sigmoid);
        self.push(Op::LogSigmoid, vec![x], value, None)
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if !xv.is_vector() {
            return Err(RecallError::Dimension("softmax expects a vector".into()));
        }
        let value = Tensor::vector(softmax(xv.data()));
        Ok(self.push(Op::Softmax, vec![x], value, None))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(RecallError::Dimension("elementwise product on unequal shapes".into()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul, vec![a, b], value, None))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(RecallError::Dimension("add on unequal shapes".into()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(Op::Add, vec![a, b], value, None))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = map_tensor(self.value(x), |v| c * v);
        self.push(Op::Scale(c), vec![x], value, None)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = map_tensor(self.value(x), |v| v + c);
        self.push(Op::AddScalar, vec![x], value, None)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(RecallError::Domain("concat of zero vectors".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if !v.is_vector() {
                return Err(RecallError::Dimension("concat expects vectors".into()));
            }
            data.extend_from_slice(v.data());
        }
        Ok(self.push(Op::Concat, parts.to_vec(), Tensor::vector(data), None))
    }

    /// Stacks equal-length vectors into an NxD matrix (row per input).
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(RecallError::Domain("stack of zero rows".into()));
        }
        let d = self.value(rows[0]).numel();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let v = self.value(r);
            if !v.is_vector() || v.numel() != d {
                return Err(RecallError::Dimension("stack_rows expects equal-length vectors".into()));
            }
            data.extend_from_slice(v.data());
        }
        let value = Tensor::matrix(rows.len(), d, data)?;
        Ok(self.push(Op::Concat, rows.to_vec(), value, None))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Op::Sum, vec![x], Tensor::scalar(s), None)
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.data().iter().any(|&v| v <= 0.0) {
            return Err(RecallError::Domain("log of non-positive value".into()));
        }
        let value = map_tensor(xv, f64::ln);
        Ok(self.push(Op::Log, vec![x], value, None))
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let value = map_tensor(self.value(x), |v| v.clamp(lo, hi));
        self.push(Op::Clamp { lo, hi }, vec![x], value, None)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.is_vector() || !bv.is_vector() || av.numel() != bv.numel() {
            return Err(RecallError::Dimension("dot expects equal-length vectors".into()));
        }
        let s = dot(av.data(), bv.data());
        Ok(self.push(Op::Dot, vec![a, b], Tensor::scalar(s), None))
    }

    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (mv, vv) = (self.value(m), self.value(v));
        if mv.shape().len() != 2 || !vv.is_vector() || mv.cols() != vv.numel() {
            return Err(RecallError::Dimension("matvec expects NxD matrix and D vector".into()));
        }
        let out = (0..mv.rows()).map(|r| dot(mv.row(r), vv.data())).collect();
        Ok(self.push(Op::MatVec, vec![m, v], Tensor::vector(out), None))
    }

    pub fn matvec_t(&mut self, m: NodeId, a: NodeId) -> Result<NodeId> {
        let (mv, av) = (self.value(m), self.value(a));
        if mv.shape().len() != 2 || !av.is_vector() || mv.rows() != av.numel() {
            return Err(RecallError::Dimension("matvec_t expects NxD matrix and N vector".into()));
        }
        let d = mv.cols();
        let mut out = vec![0.0; d];
        for (r, &ar) in av.data().iter().enumerate() {
            for (o, &mval) in out.iter_mut().zip(mv.row(r)) {
                *o += ar * mval;
            }
        }
        Ok(self.push(Op::MatVecT, vec![m, a], Tensor::vector(out), None))
    }

    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.is_vector() || !bv.is_vector() || av.numel() != bv.numel() {
            return Err(RecallError::Dimension("cosine expects equal-length vectors".into()));
        }
        let na2 = dot(av.data(), av.data());
        let nb2 = dot(bv.data(), bv.data());
        if na2 == 0.0 || nb2 == 0.0 {
            return Err(RecallError::Domain("cosine of zero vector".into()));
        }
        // sqrt of the product keeps cos(a, a) at exactly 1.0
        let c = dot(av.data(), bv.data()) / (na2 * nb2).sqrt();
        Ok(self.push(Op::Cosine, vec![a, b], Tensor::scalar(c), None))
    }

    pub fn euclidean_dist(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.is_vector() || !bv.is_vector() || av.numel() != bv.numel() {
            return Err(RecallError::Dimension("euclidean distance expects equal-length vectors".into()));
        }
        let d = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        Ok(self.push(Op::EuclideanDist, vec![a, b], Tensor::scalar(d), None))
    }

    pub fn log_sum_exp(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if !xv.is_vector() {
            return Err(RecallError::Dimension("log_sum_exp expects a vector".into()));
        }
        let xs = xv.data();
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = xs.iter().map(|&v| (v - m).exp()).sum();
        Ok(self.push(Op::LogSumExp, vec![x], Tensor::scalar(m + s.ln()), None))
    }

    /// Attentive pooling: weights_i = softmax(items_i . query), pooled = sum_i w_i items_i.
    /// Returns (weights, pooled).
    pub fn softmax_attention(&mut self, items: NodeId, query: NodeId) -> Result<(NodeId, NodeId)> {
        let scores = self.matvec(items, query)?;
        let weights = self.softmax(scores)?;
        let pooled = self.matvec_t(items, weights)?;
        Ok((weights, pooled))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse-mode pass from a scalar root. Gradients of a previous call
    /// are discarded.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(RecallError::Dimension(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        self.grads.clear();
        self.grads.resize(self.nodes.len(), None);
        self.grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            backprop(&self.nodes, &mut self.grads, i, &gout);
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    /// Adds leaf gradients into the store buffers they are bound to.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            let Some(binding) = &node.binding else { continue };
            let Some(g) = self.grads.get(i).and_then(|g| g.as_deref()) else {
                continue;
            };
            match binding {
                Binding::Full(pid) => {
                    for (acc, &gv) in store.grad_mut(*pid).iter_mut().zip(g) {
                        *acc += gv;
                    }
                }
                Binding::Rows { id, indices } => {
                    let cols = store.tensor(*id).cols();
                    let buf = store.grad_mut(*id);
                    for (k, &row) in indices.iter().enumerate() {
                        let dst = &mut buf[row * cols..(row + 1) * cols];
                        for (acc, &gv) in dst.iter_mut().zip(&g[k * cols..(k + 1) * cols]) {
                            *acc += gv;
                        }
                    }
                }
            }
        }
    }
}

fn backprop(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, gout: &[f64]) {
    let node = &nodes[i];
    match &node.op {
        Op::Leaf => {}
        Op::Affine => {
            let [x, w, b] = node.inputs[..] else { unreachable!() };
            let xv = nodes[x.0].value.data().to_vec();
            let wv = &nodes[w.0].value;
            let n = wv.cols();
            if let Some(gx) = buf(grads, x, n) {
                for (gi, row) in gout.iter().zip((0..wv.rows()).map(|r| wv.row(r))) {
                    axpy(*gi, row, gx);
                }
            }
            if let Some(gw) = buf(grads, w, wv.numel()) {
                for (r, &gi) in gout.iter().enumerate() {
                    axpy(gi, &xv, &mut gw[r * n..(r + 1) * n]);
                }
            }
            if let Some(gb) = buf(grads, b, gout.len()) {
                axpy(1.0, gout, gb);
            }
        }
        Op::Conv1d { window } => {
            let [seq, kernels, bias] = node.inputs[..] else { unreachable!() };
            let sv = &nodes[seq.0].value;
            let kv = &nodes[kernels.0].value;
            let (w, din, dout) = (*window, kv.shape()[1], kv.shape()[2]);
            let n = sv.rows();
            let center = (w - 1) / 2;
            let sd = sv.data().to_vec();
            let kd = kv.data().to_vec();
            if let Some(gb) = buf(grads, bias, dout) {
                for p in 0..n {
                    axpy(1.0, &gout[p * dout..(p + 1) * dout], gb);
                }
            }
            if let Some(gk) = buf(grads, kernels, kv.numel()) {
                for p in 0..n {
                    let grow = &gout[p * dout..(p + 1) * dout];
                    for t in 0..w {
                        let Some(src) = (p + t).checked_sub(center).filter(|&s| s < n) else {
                            continue;
                        };
                        let xrow = &sd[src * din..(src + 1) * din];
                        let ktap = &mut gk[t * din * dout..(t + 1) * din * dout];
                        for (idx, &xi) in xrow.iter().enumerate() {
                            axpy(xi, grow, &mut ktap[idx * dout..(idx + 1) * dout]);
                        }
                    }
                }
            }
            if let Some(gs) = buf(grads, seq, sv.numel()) {
                for p in 0..n {
                    let grow = &gout[p * dout..(p + 1) * dout];
                    for t in 0..w {
                        let Some(src) = (p + t).checked_sub(center).filter(|&s| s < n) else {
                            continue;
                        };
                        let ktap = &kd[t * din * dout..(t + 1) * din * dout];
                        let drow = &mut gs[src * din..(src + 1) * din];
                        for (idx, dv) in drow.iter_mut().enumerate() {
                            *dv += dot(&ktap[idx * dout..(idx + 1) * dout], grow);
                        }
                    }
                }
            }
        }
        Op::Relu => {
            let x = node.inputs[0];
            let xv = nodes[x.0].value.data().to_vec();
            if let Some(gx) = buf(grads, x, xv.len()) {
                for ((g, &xi), &go) in gx.iter_mut().zip(&xv).zip(gout) {
                    if xi > 0.0 {
                        *g += go;
                    }
                }
            }
        }
        Op::Sigmoid => {
            let x = node.inputs[0];
            let yv = node.value.data().to_vec();
            if let Some(gx) = buf(grads, x, yv.len()) {
                for ((g, &y), &go) in gx.iter_mut().zip(&yv).zip(gout) {
                    *g += go * y * (1.0 - y);
                }
            }
        }
        Op::LogSigmoid => {
            let x = node.inputs[0];
            let xv = nodes[x.0].value.data().to_vec();
            if let Some(gx) = buf(grads, x, xv.len()) {
                for ((g, &z), &go) in gx.iter_mut().zip(&xv).zip(gout) {
                    *g += go * sigmoid(-z);
                }
            }
        }
        Op::Softmax => {
            let x = node.inputs[0];
            let yv = node.value.data().to_vec();
            let inner: f64 = gout.iter().zip(&yv).map(|(g, y)| g * y).sum();
            if let Some(gx) = buf(grads, x, yv.len()) {
                for ((g, &y), &go) in gx.iter_mut().zip(&yv).zip(gout) {
                    *g += y * (go - inner);
                }
            }
        }
        Op::Mul => {
            let [a, b] = node.inputs[..] else { unreachable!() };
            let av = nodes[a.0].value.data().to_vec();
            let bv = nodes[b.0].value.data().to_vec();
            if let Some(ga) = buf(grads, a, av.len()) {
                for ((g, &bvv), &go) in ga.iter_mut().zip(&bv).zip(gout) {
                    *g += go * bvv;
                }
            }
            if let Some(gb) = buf(grads, b, bv.len()) {
                for ((g, &avv), &go) in gb.iter_mut().zip(&av).zip(gout) {
                    *g += go * avv;
                }
            }
        }
        Op::Add => {
            for &inp in &node.inputs {
                if let Some(g) = buf(grads, inp, gout.len()) {
                    axpy(1.0, gout, g);
                }
            }
        }
        Op::Scale(c) => {
            let x = node.inputs[0];
            if let Some(gx) = buf(grads, x, gout.len()) {
                axpy(*c, gout, gx);
            }
        }
        Op::AddScalar => {
            let x = node.inputs[0];
            if let Some(gx) = buf(grads, x, gout.len()) {
                axpy(1.0, gout, gx);
            }
        }
        Op::Concat => {
            let mut offset = 0;
            for &inp in &node.inputs {
                let len = nodes[inp.0].value.numel();
                if let Some(g) = buf(grads, inp, len) {
                    axpy(1.0, &gout[offset..offset + len], g);
                }
                offset += len;
            }
        }
        Op::Sum => {
            let x = node.inputs[0];
            let len = nodes[x.0].value.numel();
            if let Some(gx) = buf(grads, x, len) {
                for g in gx.iter_mut() {
                    *g += gout[0];
                }
            }
        }
        Op::Log => {
            let x = node.inputs[0];
            let xv = nodes[x.0].value.data().to_vec();
            if let Some(gx) = buf(grads, x, xv.len()) {
                for ((g, &xi), &go) in gx.iter_mut().zip(&xv).zip(gout) {
                    *g += go / xi;
                }
            }
        }
        Op::Clamp { lo, hi } => {
            let x = node.inputs[0];
            let xv = nodes[x.0].value.data().to_vec();
            if let Some(gx) = buf(grads, x, xv.len()) {
                for ((g, &xi), &go) in gx.iter_mut().zip(&xv).zip(gout) {
                    if xi >= *lo && xi <= *hi {
                        *g += go;
                    }
                }
            }
        }
        Op::Dot => {
            let [a, b] = node.inputs[..] else { unreachable!() };
            let av = nodes[a.0].value.data().to_vec();
            let bv = nodes[b.0].value.data().to_vec();
            let g0 = gout[0];
            if let Some(ga) = buf(grads, a, av.len()) {
                axpy(g0, &bv, ga);
            }
            if let Some(gb) = buf(grads, b, bv.len()) {
                axpy(g0, &av, gb);
            }
        }
        Op::MatVec => {
            let [m, v] = node.inputs[..] else { unreachable!() };
            let mv = &nodes[m.0].value;
            let vv = nodes[v.0].value.data().to_vec();
            let d = mv.cols();
            if let Some(gm) = buf(grads, m, mv.numel()) {
                for (r, &gr) in gout.iter().enumerate() {
                    axpy(gr, &vv, &mut gm[r * d..(r + 1) * d]);
                }
            }
            let mrows: Vec<f64> = mv.data().to_vec();
            if let Some(gv) = buf(grads, v, d) {
                for (r, &gr) in gout.iter().enumerate() {
                    axpy(gr, &mrows[r * d..(r + 1) * d], gv);
                }
            }
        }
        Op::MatVecT => {
            let [m, a] = node.inputs[..] else { unreachable!() };
            let mv = &nodes[m.0].value;
            let av = nodes[a.0].value.data().to_vec();
            let d = mv.cols();
            if let Some(gm) = buf(grads, m, mv.numel()) {
                for (r, &ar) in av.iter().enumerate() {
                    axpy(ar, gout, &mut gm[r * d..(r + 1) * d]);
                }
            }
            let md = mv.data().to_vec();
            if let Some(ga) = buf(grads, a, av.len()) {
                for (r, g) in ga.iter_mut().enumerate() {
                    *g += dot(&md[r * d..(r + 1) * d], gout);
                }
            }
        }
        Op::Cosine => {
            let [a, b] = node.inputs[..] else { unreachable!() };
            let av = nodes[a.0].value.data().to_vec();
            let bv = nodes[b.0].value.data().to_vec();
            let na2 = dot(&av, &av);
            let nb2 = dot(&bv, &bv);
            let nanb = (na2 * nb2).sqrt();
            let c = node.value.item();
            let g0 = gout[0];
            if let Some(ga) = buf(grads, a, av.len()) {
                for (g, (&ai, &bi)) in ga.iter_mut().zip(av.iter().zip(&bv)) {
                    *g += g0 * (bi / nanb - c * ai / na2);
                }
            }
            if let Some(gb) = buf(grads, b, bv.len()) {
                for (g, (&ai, &bi)) in gb.iter_mut().zip(av.iter().zip(&bv)) {
                    *g += g0 * (ai / nanb - c * bi / nb2);
                }
            }
        }
        Op::EuclideanDist => {
            let [a, b] = node.inputs[..] else { unreachable!() };
            let av = nodes[a.0].value.data().to_vec();
            let bv = nodes[b.0].value.data().to_vec();
            let d = node.value.item();
            let g0 = gout[0];
            if d > 0.0 {
                if let Some(ga) = buf(grads, a, av.len()) {
                    for (g, (&ai, &bi)) in ga.iter_mut().zip(av.iter().zip(&bv)) {
                        *g += g0 * (ai - bi) / d;
                    }
                }
                if let Some(gb) = buf(grads, b, bv.len()) {
                    for (g, (&ai, &bi)) in gb.iter_mut().zip(av.iter().zip(&bv)) {
                        *g += g0 * (bi - ai) / d;
                    }
                }
            }
        }
        Op::LogSumExp => {
            let x = node.inputs[0];
            let xv = nodes[x.0].value.data().to_vec();
            let soft = softmax(&xv);
            if let Some(gx) = buf(grads, x, xv.len()) {
                axpy(gout[0], &soft, gx);
            }
        }
    }
}

/// Gradient buffer of `id`, allocated on first touch.
fn buf(grads: &mut [Option<Vec<f64>>], id: NodeId, numel: usize) -> Option<&mut [f64]> {
    let slot = &mut grads[id.0];
    if slot.is_none() {
        *slot = Some(vec![0.0; numel]);
    }
    slot.as_deref_mut()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = xs.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for o in &mut out {
        *o /= s;
    }
    out
}

fn map_tensor(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
        .expect("shape preserved by map")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng;

    // Independently coded double-loop product for the affine oracle.
    fn affine_oracle(w: &[f64], m: usize, n: usize, x: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; m];
        for i in 0..m {
            let mut acc = b[i];
            for j in 0..n {
                acc += w[i * n + j] * x[j];
            }
            out[i] = acc;
        }
        out
    }

    #[test]
    fn affine_identity_and_zero_weights() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let w = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = g.affine(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);

        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, 1.0]));
        let w = g.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let b = g.constant(Tensor::vector(vec![5.0]));
        let y = g.affine(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[5.0]);
    }

    #[test]
    fn affine_matches_double_loop_oracle() {
        let mut rng = rng_for(11, "affine-oracle");
        let (m, n) = (3, 4);
        let w: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let expect = affine_oracle(&w, m, n, &x, &b);

        let mut g = Graph::new();
        let xn = g.constant(Tensor::vector(x));
        let wn = g.constant(Tensor::matrix(m, n, w).unwrap());
        let bn = g.constant(Tensor::vector(b));
        let y = g.affine(xn, wn, bn).unwrap();
        for (got, want) in g.value(y).data().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_shape_mismatch_is_dimension_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0; 3]));
        let w = g.constant(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        let b = g.constant(Tensor::vector(vec![0.0; 2]));
        assert!(matches!(g.affine(x, w, b), Err(RecallError::Dimension(_))));
    }

    // Explicit sliding-window loop, padding handled by skipping.
    fn conv_oracle(seq: &[f64], n: usize, din: usize, k: &[f64], w: usize, dout: usize, b: &[f64]) -> Vec<f64> {
        let c = (w - 1) / 2;
        let mut out = vec![0.0; n * dout];
        for p in 0..n {
            for j in 0..dout {
                let mut acc = b[j];
                for t in 0..w {
                    let s = p as isize + t as isize - c as isize;
                    if s < 0 || s >= n as isize {
                        continue;
                    }
                    for i in 0..din {
                        acc += seq[s as usize * din + i] * k[(t * din + i) * dout + j];
                    }
                }
                out[p * dout + j] = acc;
            }
        }
        out
    }

    #[test]
    fn conv1d_identity_window_one() {
        let mut g = Graph::new();
        let seq = g.constant(Tensor::matrix(1, 2, vec![3.0, -1.0]).unwrap());
        let k = g.constant(Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = g.conv1d(seq, k, b).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, -1.0]);
    }

    #[test]
    fn conv1d_zero_input_yields_bias() {
        let mut g = Graph::new();
        let seq = g.constant(Tensor::matrix(4, 2, vec![0.0; 8]).unwrap());
        let k = g.constant(Tensor::new(vec![3, 2, 3], vec![0.7; 18]).unwrap());
        let b = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = g.conv1d(seq, k, b).unwrap();
        for p in 0..4 {
            assert_eq!(g.value(y).row(p), &[1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn conv1d_matches_sliding_window_oracle() {
        let mut rng = rng_for(12, "conv-oracle");
        let (n, din, dout, w) = (5, 3, 4, 3);
        let seq: Vec<f64> = (0..n * din).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..w * din * dout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..dout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let expect = conv_oracle(&seq, n, din, &k, w, dout, &b);

        let mut g = Graph::new();
        let sn = g.constant(Tensor::matrix(n, din, seq).unwrap());
        let kn = g.constant(Tensor::new(vec![w, din, dout], k).unwrap());
        let bn = g.constant(Tensor::vector(b));
        let y = g.conv1d(sn, kn, bn).unwrap();
        for (got, want) in g.value(y).data().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_attention_single_row_and_uniform() {
        let mut g = Graph::new();
        let items = g.constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let q = g.constant(Tensor::vector(vec![9.0, -4.0, 0.1]));
        let (w, pooled) = g.softmax_attention(items, q).unwrap();
        assert_eq!(g.value(w).data(), &[1.0]);
        assert_eq!(g.value(pooled).data(), &[1.0, 2.0, 3.0]);

        let mut g = Graph::new();
        let items = g.constant(Tensor::matrix(3, 2, vec![0.5, 1.0, 0.5, 1.0, 0.5, 1.0]).unwrap());
        let q = g.constant(Tensor::vector(vec![2.0, -1.0]));
        let (w, _) = g.softmax_attention(items, q).unwrap();
        for &wi in g.value(w).data() {
            assert!((wi - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariance_and_normalization() {
        let mut rng = rng_for(13, "softmax");
        let xs: Vec<f64> = (0..64).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let shifted: Vec<f64> = xs.iter().map(|v| v + 123.456).collect();
        let a = softmax(&xs);
        let b = softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }

        // normalization holds at N = 10^4
        let big: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let s = softmax(&big);
        assert!(s.iter().all(|&v| v >= 0.0));
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![3.0]));
        let sq = g.mul(x, x).unwrap();
        let root = g.sum(sq);
        g.backward(root).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_log_sigmoid_at_zero() {
        let mut g = Graph::new();
        let z = g.scalar(0.0);
        let y = g.log_sigmoid(z);
        g.backward(y).unwrap();
        assert!((g.grad(z).unwrap()[0] - 0.5).abs() < 1e-12);
        assert!((g.value(y).item() + std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let y = g.relu(x);
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn grad_accumulation_is_linear() {
        // backward on a sum of two graphs == sum of separate backward passes
        let mut store = ParamStore::new();
        let pid = store.add("p", Tensor::vector(vec![0.3, -0.8])).unwrap();

        let run = |store: &mut ParamStore, combined: bool| -> Vec<f64> {
            store.zero_grads();
            if combined {
                let mut g = Graph::new();
                let p = g.param(store, pid, true);
                let s1 = g.dot(p, p).unwrap();
                let sig = g.sigmoid(p);
                let s2 = g.sum(sig);
                let both = g.add(s1, s2).unwrap();
                g.backward(both).unwrap();
                g.accumulate_param_grads(store);
            } else {
                let mut g1 = Graph::new();
                let p = g1.param(store, pid, true);
                let s1 = g1.dot(p, p).unwrap();
                g1.backward(s1).unwrap();
                g1.accumulate_param_grads(store);

                let mut g2 = Graph::new();
                let p = g2.param(store, pid, true);
                let sig = g2.sigmoid(p);
                let s2 = g2.sum(sig);
                g2.backward(s2).unwrap();
                g2.accumulate_param_grads(store);
            }
            store.grad(pid).to_vec()
        };

        let separate = run(&mut store, false);
        let combined = run(&mut store, true);
        for (a, b) in separate.iter().zip(&combined) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gather_scatters_gradients_to_rows() {
        let mut store = ParamStore::new();
        let emb = store
            .add("emb", Tensor::matrix(4, 2, vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap())
            .unwrap();
        let mut g = Graph::new();
        // row 1 twice: gradients must accumulate
        let rows = g.gather(&store, emb, &[1, 1, 3], true).unwrap();
        let s = g.sum(rows);
        g.backward(s).unwrap();
        g.accumulate_param_grads(&mut store);
        assert_eq!(store.grad(emb), &[0., 0., 2., 2., 0., 0., 1., 1.]);
    }

    #[test]
    fn frozen_params_receive_no_gradient() {
        let mut store = ParamStore::new();
        let pid = store.add("p", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut g = Graph::new();
        let p = g.param(&store, pid, false);
        let s = g.dot(p, p).unwrap();
        g.backward(s).unwrap();
        g.accumulate_param_grads(&mut store);
        assert_eq!(store.grad(pid), &[0.0, 0.0]);
        // gradient still flows through the frozen leaf
        assert_eq!(g.grad(p).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn cosine_endpoints() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 0.0]));
        let b = g.constant(Tensor::vector(vec![0.0, 2.0]));
        let c = g.cosine(a, b).unwrap();
        assert!(g.value(c).item().abs() < 1e-12);
        let z = g.constant(Tensor::vector(vec![0.0, 0.0]));
        assert!(matches!(g.cosine(a, z), Err(RecallError::Domain(_))));
    }

    #[test]
    fn log_sum_exp_is_stable_and_correct() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1000.0, 1000.0]));
        let l = g.log_sum_exp(x).unwrap();
        assert!((g.value(l).item() - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }
}
