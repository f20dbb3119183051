//! Define-by-run computation tape.
//!
//! Every op evaluates eagerly and appends a node, so the node vector is a
//! topological order by construction. [`Graph::backward`] walks it in reverse.

use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(String),
    Affine {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow {
        x: NodeId,
        row: NodeId,
    },
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    /// Elementwise map with derivative values captured at forward time.
    Map {
        x: NodeId,
        deriv: Vec<f64>,
    },
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Conv1d {
        signal: NodeId,
        kernel: NodeId,
    },
    Concat(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    SliceCols {
        x: NodeId,
        start: usize,
    },
    GatherRows {
        x: NodeId,
        indices: Vec<usize>,
    },
    Reshape(NodeId),
    Sum(NodeId),
    GatherSum {
        x: NodeId,
        indices: Vec<usize>,
    },
    /// Scalar function of one input with a precomputed gradient.
    ScalarFn {
        x: NodeId,
        grad: Tensor,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to every parameter leaf, keyed by name.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_name: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.by_name.iter()
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor> {
        self.by_name
    }

    pub fn global_norm(&self) -> f64 {
        self.by_name
            .values()
            .map(Tensor::sum_squares)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.by_name.values_mut() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id.0).ok_or(Error::UnknownNode(id.0))
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn label(&self, what: &str) -> String {
        format!("{what}#{}", self.nodes.len())
    }

    /// Constant leaf; never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input, false)
    }

    /// Named trainable leaf.
    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        self.push(value, Op::Param(name.to_string()), true)
    }

    /// `x · wᵀ (+ b)` with `x: [n, in]` (or `[in]`), `w: [out, in]`, `b: [out]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (xv, wv) = (&self.node(x)?.value, &self.node(w)?.value);
        if wv.shape().len() != 2 || xv.cols() != wv.cols() {
            return Err(Error::shape(
                self.label("affine"),
                format!("input {:?} vs weight {:?}", xv.shape(), wv.shape()),
            ));
        }
        let (n, k, out) = (xv.rows(), xv.cols(), wv.rows());
        if let Some(b) = b {
            if self.node(b)?.value.len() != out {
                return Err(Error::shape(
                    self.label("affine"),
                    format!("bias {:?} for {out} outputs", self.value(b).shape()),
                ));
            }
        }
        let mut y = vec![0.0; n * out];
        let (xd, wd) = (xv.data(), wv.data());
        for r in 0..n {
            let xr = &xd[r * k..(r + 1) * k];
            for o in 0..out {
                let wr = &wd[o * k..(o + 1) * k];
                let mut acc = 0.0;
                for i in 0..k {
                    acc += xr[i] * wr[i];
                }
                y[r * out + o] = acc;
            }
        }
        if let Some(b) = b {
            let bd = self.value(b).data();
            for r in 0..n {
                for o in 0..out {
                    y[r * out + o] += bd[o];
                }
            }
        }
        let shape = if xv.shape().len() == 1 {
            vec![out]
        } else {
            vec![n, out]
        };
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.needs(&deps);
        Ok(self.push(Tensor::new(shape, y)?, Op::Affine { x, w, b }, rg))
    }

    /// Matrix product `a · b` with `a: [m, k]` (or `[k]`) and `b: [k, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        if bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(Error::shape(
                self.label("matmul"),
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut y = vec![0.0; m * n];
        let (ad, bd) = (av.data(), bv.data());
        for r in 0..m {
            let yr = &mut y[r * n..(r + 1) * n];
            for i in 0..k {
                let s = ad[r * k + i];
                let br = &bd[i * n..(i + 1) * n];
                for c in 0..n {
                    yr[c] += s * br[c];
                }
            }
        }
        let shape = if av.shape().len() == 1 {
            vec![n]
        } else {
            vec![m, n]
        };
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(shape, y)?, Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        what: &str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        if av.shape() != bv.shape() {
            return Err(Error::shape(
                self.label(what),
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, op, rg))
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

    /// Adds a `[m]` vector to every row of an `[n, m]` matrix.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let (xv, rv) = (&self.node(x)?.value, &self.node(row)?.value);
        let m = xv.cols();
        if rv.len() != m {
            return Err(Error::shape(
                self.label("add_row"),
                format!("{:?} + row {:?}", xv.shape(), rv.shape()),
            ));
        }
        let rd = rv.data();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + rd[i % m])
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.needs(&[x, row]);
        Ok(self.push(value, Op::AddRow { x, row }, rg))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let xv = &self.node(x)?.value;
        let data = xv.data().iter().map(|v| v * c).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Scale(x, c), rg))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.node(x)?.value;
        let data = xv.data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Tanh(x), rg))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.node(x)?.value;
        let data = xv.data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Sigmoid(x), rg))
    }

    /// Elementwise `f` whose derivative is supplied by `df`.
    pub fn map(
        &mut self,
        x: NodeId,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
    ) -> Result<NodeId> {
        let xv = &self.node(x)?.value;
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let deriv = xv.data().iter().map(|&v| df(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Map { x, deriv }, rg))
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.node(x)?.value;
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(xv.cols()) {
            softmax_in_place(row);
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    /// Row-wise log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.node(x)?.value;
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(xv.cols()) {
            log_softmax_in_place(row);
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::LogSoftmax(x), rg))
    }

    /// Multi-channel "same" convolution of a length-`T` signal with a
    /// `[channels, width]` kernel, zero padded; output is `[T, channels]`.
    pub fn conv1d(&mut self, signal: NodeId, kernel: NodeId) -> Result<NodeId> {
        let (sv, kv) = (&self.node(signal)?.value, &self.node(kernel)?.value);
        if kv.shape().len() != 2 {
            return Err(Error::shape(
                self.label("conv1d"),
                format!("kernel must be [channels, width], got {:?}", kv.shape()),
            ));
        }
        let (t_len, ch, width) = (sv.len(), kv.rows(), kv.cols());
        let pad = (width - 1) / 2;
        let (sd, kd) = (sv.data(), kv.data());
        let mut y = vec![0.0; t_len * ch];
        for t in 0..t_len {
            for c in 0..ch {
                let mut acc = 0.0;
                for j in 0..width {
                    let src = t + j;
                    if src < pad || src - pad >= t_len {
                        continue;
                    }
                    acc += kd[c * width + j] * sd[src - pad];
                }
                y[t * ch + c] = acc;
            }
        }
        let rg = self.needs(&[signal, kernel]);
        Ok(self.push(
            Tensor::new(vec![t_len, ch], y)?,
            Op::Conv1d { signal, kernel },
            rg,
        ))
    }

    /// Concatenation along the last axis; all parts must have the same row count.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape(self.label("concat"), "no parts"));
        }
        let rows = self.node(parts[0])?.value.rows();
        let one_d = self.value(parts[0]).shape().len() == 1;
        let mut cols = 0;
        for &p in parts {
            let v = &self.node(p)?.value;
            if v.rows() != rows || (v.shape().len() == 1) != one_d {
                return Err(Error::shape(
                    self.label("concat"),
                    format!("part {:?} does not match {rows} rows", v.shape()),
                ));
            }
            cols += v.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let shape = if one_d { vec![cols] } else { vec![rows, cols] };
        let rg = self.needs(parts);
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Concatenation along the first axis; vectors count as single rows.
    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape(self.label("stack_rows"), "no parts"));
        }
        let cols = self.node(parts[0])?.value.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = &self.node(p)?.value;
            if v.cols() != cols {
                return Err(Error::shape(
                    self.label("stack_rows"),
                    format!("part {:?} does not have {cols} columns", v.shape()),
                ));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let rg = self.needs(parts);
        Ok(self.push(
            Tensor::new(vec![rows, cols], data)?,
            Op::StackRows(parts.to_vec()),
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xv = &self.node(x)?.value;
        if len == 0 || start + len > xv.cols() {
            return Err(Error::shape(
                self.label("slice_cols"),
                format!("[{start}, {}) of {:?}", start + len, xv.shape()),
            ));
        }
        let mut data = Vec::with_capacity(xv.rows() * len);
        for r in 0..xv.rows() {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let shape = if xv.shape().len() == 1 {
            vec![len]
        } else {
            vec![xv.rows(), len]
        };
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::SliceCols { x, start }, rg))
    }

    /// Builds a `[indices.len(), cols]` matrix whose row `i` is row `indices[i]` of `x`.
    pub fn gather_rows(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId> {
        let xv = &self.node(x)?.value;
        if indices.is_empty() || indices.iter().any(|&i| i >= xv.rows()) {
            return Err(Error::shape(
                self.label("gather_rows"),
                format!("indices out of range for {:?}", xv.shape()),
            ));
        }
        let mut data = Vec::with_capacity(indices.len() * xv.cols());
        for &i in indices {
            data.extend_from_slice(xv.row(i));
        }
        let value = Tensor::new(vec![indices.len(), xv.cols()], data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Row `r` of a matrix as a vector.
    pub fn row(&mut self, x: NodeId, r: usize) -> Result<NodeId> {
        let g = self.gather_rows(x, &[r])?;
        let cols = self.value(g).cols();
        self.reshape(g, &[cols])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let label = self.label("reshape");
        let value = self
            .node(x)?
            .value
            .clone()
            .reshaped(shape)
            .map_err(|e| Error::shape(label, e.to_string()))?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.node(x)?.value.data().iter().sum();
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    /// `Σ_r x[r, indices[r]]`: the summed log-likelihood of per-row targets.
    pub fn gather_sum(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId> {
        let xv = &self.node(x)?.value;
        if indices.len() != xv.rows() || indices.iter().any(|&i| i >= xv.cols()) {
            return Err(Error::shape(
                self.label("gather_sum"),
                format!("{} indices for {:?}", indices.len(), xv.shape()),
            ));
        }
        let s = indices.iter().enumerate().map(|(r, &c)| xv.at(r, c)).sum();
        let rg = self.needs(&[x]);
        Ok(self.push(
            Tensor::scalar(s),
            Op::GatherSum {
                x,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Scalar node whose value and gradient with respect to `x` were computed externally.
    pub fn scalar_fn(&mut self, x: NodeId, value: f64, grad: Tensor) -> Result<NodeId> {
        let xv = &self.node(x)?.value;
        if grad.shape() != xv.shape() {
            return Err(Error::shape(
                self.label("scalar_fn"),
                format!("gradient {:?} vs input {:?}", grad.shape(), xv.shape()),
            ));
        }
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(value), Op::ScalarFn { x, grad }, rg))
    }

    /// Reverse pass from a scalar `loss`. Every parameter leaf appears in the
    /// result; leaves the loss does not depend on get exact zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let node = self.node(loss)?;
        if !node.value.is_scalar() {
            return Err(Error::NonScalarLoss(node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(node.value.shape(), 1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(gy) = grads[i].take() else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, gy, &mut grads, &mut out);
        }
        for node in &self.nodes {
            if let Op::Param(name) = &node.op {
                out.by_name
                    .entry(name.clone())
                    .or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(out)
    }

    fn propagate(
        &self,
        node: &Node,
        gy: Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut Gradients,
    ) {
        let gyd = gy.data();
        match &node.op {
            Op::Input => {}
            Op::Param(name) => match out.by_name.get_mut(name) {
                Some(acc) => acc.add_assign(&gy),
                None => {
                    out.by_name.insert(name.clone(), gy);
                }
            },
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, k, o) = (xv.rows(), xv.cols(), wv.rows());
                if self.nodes[x.0].requires_grad {
                    let gx = grad_slot(grads, *x, xv);
                    let wd = wv.data();
                    for r in 0..n {
                        let gr = &mut gx[r * k..(r + 1) * k];
                        for j in 0..o {
                            let s = gyd[r * o + j];
                            if s == 0.0 {
                                continue;
                            }
                            let wr = &wd[j * k..(j + 1) * k];
                            for i in 0..k {
                                gr[i] += s * wr[i];
                            }
                        }
                    }
                }
                if self.nodes[w.0].requires_grad {
                    let gw = grad_slot(grads, *w, wv);
                    let xd = xv.data();
                    for r in 0..n {
                        let xr = &xd[r * k..(r + 1) * k];
                        for j in 0..o {
                            let s = gyd[r * o + j];
                            if s == 0.0 {
                                continue;
                            }
                            let gr = &mut gw[j * k..(j + 1) * k];
                            for i in 0..k {
                                gr[i] += s * xr[i];
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if self.nodes[b.0].requires_grad {
                        let gb = grad_slot(grads, *b, self.value(*b));
                        for r in 0..n {
                            for j in 0..o {
                                gb[j] += gyd[r * o + j];
                            }
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.nodes[a.0].requires_grad {
                    let ga = grad_slot(grads, *a, av);
                    let bd = bv.data();
                    for r in 0..m {
                        for i in 0..k {
                            let br = &bd[i * n..(i + 1) * n];
                            let gr = &gyd[r * n..(r + 1) * n];
                            let mut acc = 0.0;
                            for c in 0..n {
                                acc += gr[c] * br[c];
                            }
                            ga[r * k + i] += acc;
                        }
                    }
                }
                if self.nodes[b.0].requires_grad {
                    let gb = grad_slot(grads, *b, bv);
                    let ad = av.data();
                    for r in 0..m {
                        let gr = &gyd[r * n..(r + 1) * n];
                        for i in 0..k {
                            let s = ad[r * k + i];
                            let row = &mut gb[i * n..(i + 1) * n];
                            for c in 0..n {
                                row[c] += s * gr[c];
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |g, _| axpy(g, 1.0, gyd));
                self.accumulate(grads, *b, |g, _| axpy(g, 1.0, gyd));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |g, _| axpy(g, 1.0, gyd));
                self.accumulate(grads, *b, |g, _| axpy(g, -1.0, gyd));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |g, _| {
                    for i in 0..g.len() {
                        g[i] += gyd[i] * bd[i];
                    }
                });
                self.accumulate(grads, *b, |g, _| {
                    for i in 0..g.len() {
                        g[i] += gyd[i] * ad[i];
                    }
                });
            }
            Op::AddRow { x, row } => {
                self.accumulate(grads, *x, |g, _| axpy(g, 1.0, gyd));
                self.accumulate(grads, *row, |g, _| {
                    let m = g.len();
                    for (i, v) in gyd.iter().enumerate() {
                        g[i % m] += v;
                    }
                });
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, |g, _| axpy(g, *c, gyd)),
            Op::Tanh(x) => {
                let yd = node.value.data();
                self.accumulate(grads, *x, |g, _| {
                    for i in 0..g.len() {
                        g[i] += gyd[i] * (1.0 - yd[i] * yd[i]);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let yd = node.value.data();
                self.accumulate(grads, *x, |g, _| {
                    for i in 0..g.len() {
                        g[i] += gyd[i] * yd[i] * (1.0 - yd[i]);
                    }
                });
            }
            Op::Map { x, deriv } => {
                self.accumulate(grads, *x, |g, _| {
                    for i in 0..g.len() {
                        g[i] += gyd[i] * deriv[i];
                    }
                });
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let cols = y.cols();
                self.accumulate(grads, *x, |g, _| {
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &gyd[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            g[r * cols + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let y = &node.value;
                let cols = y.cols();
                self.accumulate(grads, *x, |g, _| {
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &gyd[r * cols..(r + 1) * cols];
                        let total: f64 = gr.iter().sum();
                        for c in 0..cols {
                            g[r * cols + c] += gr[c] - yr[c].exp() * total;
                        }
                    }
                });
            }
            Op::Conv1d { signal, kernel } => {
                let (sv, kv) = (self.value(*signal), self.value(*kernel));
                let (t_len, ch, width) = (sv.len(), kv.rows(), kv.cols());
                let pad = (width - 1) / 2;
                let (sd, kd) = (sv.data(), kv.data());
                let in_range = |t: usize, j: usize| {
                    let src = t + j;
                    (src >= pad && src - pad < t_len).then(|| src - pad)
                };
                self.accumulate(grads, *signal, |g, _| {
                    for t in 0..t_len {
                        for c in 0..ch {
                            let s = gyd[t * ch + c];
                            for j in 0..width {
                                if let Some(src) = in_range(t, j) {
                                    g[src] += s * kd[c * width + j];
                                }
                            }
                        }
                    }
                });
                self.accumulate(grads, *kernel, |g, _| {
                    for t in 0..t_len {
                        for c in 0..ch {
                            let s = gyd[t * ch + c];
                            for j in 0..width {
                                if let Some(src) = in_range(t, j) {
                                    g[c * width + j] += s * sd[src];
                                }
                            }
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let cols = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    self.accumulate(grads, p, |g, _| {
                        for r in 0..node.value.rows() {
                            let src = &gyd[r * cols + offset..r * cols + offset + pc];
                            axpy(&mut g[r * pc..(r + 1) * pc], 1.0, src);
                        }
                    });
                    offset += pc;
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(grads, p, |g, _| axpy(g, 1.0, &gyd[offset..offset + n]));
                    offset += n;
                }
            }
            Op::SliceCols { x, start } => {
                let len = node.value.cols();
                let cols = self.value(*x).cols();
                self.accumulate(grads, *x, |g, _| {
                    for r in 0..node.value.rows() {
                        let dst = &mut g[r * cols + start..r * cols + start + len];
                        axpy(dst, 1.0, &gyd[r * len..(r + 1) * len]);
                    }
                });
            }
            Op::GatherRows { x, indices } => {
                let cols = node.value.cols();
                self.accumulate(grads, *x, |g, _| {
                    for (r, &src) in indices.iter().enumerate() {
                        let dst = &mut g[src * cols..(src + 1) * cols];
                        axpy(dst, 1.0, &gyd[r * cols..(r + 1) * cols]);
                    }
                });
            }
            Op::Reshape(x) => self.accumulate(grads, *x, |g, _| axpy(g, 1.0, gyd)),
            Op::Sum(x) => {
                let s = gyd[0];
                self.accumulate(grads, *x, |g, _| g.iter_mut().for_each(|v| *v += s));
            }
            Op::GatherSum { x, indices } => {
                let s = gyd[0];
                let cols = self.value(*x).cols();
                self.accumulate(grads, *x, |g, _| {
                    for (r, &c) in indices.iter().enumerate() {
                        g[r * cols + c] += s;
                    }
                });
            }
            Op::ScalarFn { x, grad } => {
                let s = gyd[0];
                self.accumulate(grads, *x, |g, _| axpy(g, s, grad.data()));
            }
        }
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor>],
        id: NodeId,
        f: impl FnOnce(&mut [f64], &Tensor),
    ) {
        let node = &self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        let g = grad_slot(grads, id, &node.value);
        f(g, &node.value);
    }
}

fn grad_slot<'a>(grads: &'a mut [Option<Tensor>], id: NodeId, like: &Tensor) -> &'a mut [f64] {
    grads[id.0]
        .get_or_insert_with(|| Tensor::zeros(like.shape()))
        .data_mut()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub(crate) fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_identity() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0]));
        let w = g.param("w", Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = g.param("b", Tensor::zeros(&[2]));
        let y = g.affine(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn softmax_symmetric_and_tanh_odd() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![0.0, 0.0]));
        let s = g.softmax(x).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
        let z = g.input(Tensor::scalar(0.0));
        let t = g.tanh(z).unwrap();
        assert_eq!(g.value(t).item(), 0.0);
    }

    #[test]
    fn shape_error_names_node() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let w = g.param("w", Tensor::zeros(&[2, 2]));
        let err = g.affine(x, w, None).unwrap_err().to_string();
        assert!(err.contains("affine#2"), "{err}");
    }

    #[test]
    fn sum_of_params_has_unit_gradient_and_unused_is_zero() {
        let mut g = Graph::new();
        let a = g.param("a", Tensor::vector(vec![0.3, -1.0, 2.0]));
        let _unused = g.param("unused", Tensor::vector(vec![5.0, 6.0]));
        let loss = g.sum(a).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("a").unwrap().data(), &[1.0, 1.0, 1.0]);
        assert_eq!(grads.get("unused").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_foreign_and_non_scalar_nodes() {
        let mut other = Graph::new();
        let x = other.input(Tensor::vector(vec![1.0, 2.0]));
        let y = other.tanh(x).unwrap();
        let empty = Graph::new();
        assert!(matches!(empty.backward(y), Err(Error::UnknownNode(_))));
        assert!(matches!(other.backward(y), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn conv_ones_kernel_spreads_delta() {
        let mut g = Graph::new();
        let a = g.input(Tensor::vector(vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]));
        let k = g.input(Tensor::matrix(1, 3, vec![1.0; 3]).unwrap());
        let f = g.conv1d(a, k).unwrap();
        assert_eq!(g.value(f).data(), &[0.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn log_softmax_is_stable_for_large_inputs() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1000.0, 1000.0]));
        let y = g.log_softmax(x).unwrap();
        for v in g.value(y).data() {
            assert!((v - 0.5f64.ln()).abs() < 1e-12);
        }
    }
}
