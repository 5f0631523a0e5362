//! Reverse-mode differentiation on a recorded tape of dense-tensor ops.
//!
//! A `Graph` is single-owner for one forward/backward pass; distinct
//! graphs may run concurrently.

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;
use crate::real::Real;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(usize),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Abs(NodeId),
    Exp(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    MeanRows(NodeId),
    SliceRows(NodeId, usize, usize),
    SliceCols(NodeId, usize, usize),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Embedding { table: NodeId, ids: Vec<usize> },
    Conv1d { signal: NodeId, kernel: NodeId },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId },
    SoftmaxRows(NodeId),
    SoftmaxCrossEntropy { logits: NodeId, label: usize },
    GradReverse(NodeId, f64),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op,
}

pub struct Graph<S: Real> {
    nodes: Vec<Node<S>>,
    grads: Vec<Tensor<S>>,
}

impl<S: Real> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<S>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target with respect to a node.
    pub fn grad(&self, id: NodeId) -> &Tensor<S> {
        &self.grads[id.0]
    }

    pub fn input(&mut self, value: Tensor<S>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.push(value, Op::Input)
    }

    /// Inject a parameter's current value; `backward` gradients flow back
    /// into the store via [`Graph::apply_grads`].
    pub fn param(&mut self, store: &ParamStore<S>, name: &str) -> Result<NodeId> {
        let idx = store.index_of(name)?;
        Ok(self.push(store.value(idx).clone(), Op::Param(idx)))
    }

    fn same_shape(&self, op: &str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (&self.nodes[a.0].value.shape, &self.nodes[b.0].value.shape);
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| *x + *y)
            .collect();
        let shape = self.nodes[a.0].value.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Add(a, b)))
    }

    /// Matrix plus broadcast row vector.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.cols() != bv.len() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} vs {:?}", av.shape, bv.shape),
            ));
        }
        let cols = av.cols();
        let data = av
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| *x + bv.data[i % cols])
            .collect();
        let shape = av.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::AddRow(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| *x - *y)
            .collect();
        let shape = self.nodes[a.0].value.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| *x * *y)
            .collect();
        let shape = self.nodes[a.0].value.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let f = S::of_f64(factor);
        let value = self.nodes[a.0].value.map(|v| v * f);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape.len() != 2 || bv.shape.len() != 2 || av.cols() != bv.rows() {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", av.shape, bv.shape),
            ));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for l in 0..k {
                let x = av.at(i, l);
                if x == S::zero() {
                    continue;
                }
                for j in 0..n {
                    *out.at_mut(i, j) += x * bv.at(l, j);
                }
            }
        }
        Ok(self.push(out, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        if av.shape.len() != 2 {
            return Err(Error::shape("transpose", format!("{:?}", av.shape)));
        }
        let (m, n) = (av.rows(), av.cols());
        let mut out = Tensor::zeros(&[n, m]);
        for i in 0..m {
            for j in 0..n {
                *out.at_mut(j, i) = av.at(i, j);
            }
        }
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.map(|v| v.tanh());
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let one = S::one();
        let value = self.nodes[a.0].value.map(|v| one / (one + (-v).exp()));
        self.push(value, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.map(|v| v.max(S::zero()));
        self.push(value, Op::Relu(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.map(|v| v.abs());
        self.push(value, Op::Abs(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.map(|v| v.exp());
        self.push(value, Op::Exp(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: S = self.nodes[a.0].value.data.iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a.0].value.len();
        let s: S = self.nodes[a.0].value.data.iter().copied().sum();
        self.push(Tensor::scalar(s / S::of_usize(n)), Op::MeanAll(a))
    }

    /// Mean over rows: [T,D] -> [D].
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        if av.shape.len() != 2 {
            return Err(Error::shape("mean_rows", format!("{:?}", av.shape)));
        }
        let (t, d) = (av.rows(), av.cols());
        let mut out = Tensor::zeros(&[d]);
        for r in 0..t {
            for c in 0..d {
                out.data[c] += av.at(r, c);
            }
        }
        let tf = S::of_usize(t);
        out.data.iter_mut().for_each(|v| *v /= tf);
        Ok(self.push(out, Op::MeanRows(a)))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        if av.shape.len() != 2 || start >= end || end > av.rows() {
            return Err(Error::shape(
                "slice_rows",
                format!("{start}..{end} of {:?}", av.shape),
            ));
        }
        let d = av.cols();
        let data = av.data[start * d..end * d].to_vec();
        Ok(self.push(
            Tensor {
                shape: vec![end - start, d],
                data,
            },
            Op::SliceRows(a, start, end),
        ))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        if av.shape.len() != 2 || start >= end || end > av.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}..{end} of {:?}", av.shape),
            ));
        }
        let (t, d) = (av.rows(), av.cols());
        let mut data = Vec::with_capacity(t * (end - start));
        for r in 0..t {
            data.extend_from_slice(&av.data[r * d + start..r * d + end]);
        }
        Ok(self.push(
            Tensor {
                shape: vec![t, end - start],
                data,
            },
            Op::SliceCols(a, start, end),
        ))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no parts"));
        }
        let t = self.nodes[parts[0].0].value.rows();
        for p in parts {
            if self.nodes[p.0].value.rows() != t {
                return Err(Error::shape("concat_cols", "row counts differ"));
            }
        }
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.cols()).sum();
        let mut data = Vec::with_capacity(t * total);
        for r in 0..t {
            for p in parts {
                let v = &self.nodes[p.0].value;
                let d = v.cols();
                data.extend_from_slice(&v.data[r * d..(r + 1) * d]);
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![t, total],
                data,
            },
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no parts"));
        }
        let d = self.nodes[parts[0].0].value.cols();
        for p in parts {
            let v = &self.nodes[p.0].value;
            if v.shape.len() != 2 || v.cols() != d {
                return Err(Error::shape("concat_rows", "column counts differ"));
            }
        }
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.rows()).sum();
        let mut data = Vec::with_capacity(total * d);
        for p in parts {
            data.extend_from_slice(&self.nodes[p.0].value.data);
        }
        Ok(self.push(
            Tensor {
                shape: vec![total, d],
                data,
            },
            Op::ConcatRows(parts.to_vec()),
        ))
    }

    /// Row lookup into an embedding table [V,D] -> [ids.len(), D].
    pub fn embedding_lookup(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let tv = &self.nodes[table.0].value;
        if tv.shape.len() != 2 {
            return Err(Error::shape("embedding_lookup", format!("{:?}", tv.shape)));
        }
        let (vocab, d) = (tv.rows(), tv.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for id in ids {
            if *id >= vocab {
                return Err(Error::Unknown {
                    kind: "embedding id".into(),
                    value: format!("{id} (vocab {vocab})"),
                });
            }
            data.extend_from_slice(&tv.data[id * d..(id + 1) * d]);
        }
        Ok(self.push(
            Tensor {
                shape: vec![ids.len(), d],
                data,
            },
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// 1-D convolution over time with same padding. signal [T,Cin],
    /// kernel [K,Cin,Cout] (K odd) -> [T,Cout].
    pub fn conv1d(&mut self, signal: NodeId, kernel: NodeId) -> Result<NodeId> {
        let (sv, kv) = (&self.nodes[signal.0].value, &self.nodes[kernel.0].value);
        if sv.shape.len() != 2 || kv.shape.len() != 3 || kv.shape[1] != sv.cols() {
            return Err(Error::shape(
                "conv1d",
                format!("signal {:?}, kernel {:?}", sv.shape, kv.shape),
            ));
        }
        let (t, cin) = (sv.rows(), sv.cols());
        let (k, cout) = (kv.shape[0], kv.shape[2]);
        if k % 2 == 0 {
            return Err(Error::shape("conv1d", format!("kernel size {k} must be odd")));
        }
        let off = k / 2;
        let mut out = Tensor::zeros(&[t, cout]);
        for ti in 0..t {
            for ki in 0..k {
                let si = ti as i64 + ki as i64 - off as i64;
                if si < 0 || si >= t as i64 {
                    continue;
                }
                let si = si as usize;
                for ci in 0..cin {
                    let x = sv.at(si, ci);
                    if x == S::zero() {
                        continue;
                    }
                    for co in 0..cout {
                        *out.at_mut(ti, co) += x * kv.data[(ki * cin + ci) * cout + co];
                    }
                }
            }
        }
        Ok(self.push(out, Op::Conv1d { signal, kernel }))
    }

    /// Per-row layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, gv, bv) = (
            &self.nodes[x.0].value,
            &self.nodes[gain.0].value,
            &self.nodes[bias.0].value,
        );
        let d = xv.cols();
        if gv.len() != d || bv.len() != d {
            return Err(Error::shape(
                "layer_norm",
                format!("x {:?}, gain {:?}, bias {:?}", xv.shape, gv.shape, bv.shape),
            ));
        }
        let t = xv.rows();
        let eps = S::of_f64(LAYER_NORM_EPS);
        let mut out = Tensor::zeros(&xv.shape);
        for r in 0..t {
            let row = &xv.data[r * d..(r + 1) * d];
            let mean: S = row.iter().copied().sum::<S>() / S::of_usize(d);
            let var: S = row
                .iter()
                .map(|v| (*v - mean) * (*v - mean))
                .sum::<S>()
                / S::of_usize(d);
            let std = (var + eps).sqrt();
            for c in 0..d {
                out.data[r * d + c] = gv.data[c] * (row[c] - mean) / std + bv.data[c];
            }
        }
        Ok(self.push(out, Op::LayerNorm { x, gain, bias }))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        if av.shape.len() != 2 {
            return Err(Error::shape("softmax_rows", format!("{:?}", av.shape)));
        }
        let (t, d) = (av.rows(), av.cols());
        let mut out = Tensor::zeros(&av.shape);
        for r in 0..t {
            let row = &av.data[r * d..(r + 1) * d];
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let exps: Vec<S> = row.iter().map(|v| (*v - max).exp()).collect();
            let sum: S = exps.iter().copied().sum();
            for c in 0..d {
                out.data[r * d + c] = exps[c] / sum;
            }
        }
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    /// Cross-entropy of a logits vector against an integer label.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let lv = &self.nodes[logits.0].value;
        let k = lv.len();
        if label >= k {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("label {label} out of range for {k} classes"),
            ));
        }
        let max = lv.data.iter().copied().fold(S::neg_infinity(), S::max);
        let logsumexp = max
            + lv.data
                .iter()
                .map(|v| (*v - max).exp())
                .sum::<S>()
                .ln();
        let loss = logsumexp - lv.data[label];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy { logits, label },
        ))
    }

    /// Identity forward; backward multiplies the incoming gradient by
    /// -lambda.
    pub fn gradient_reverse(&mut self, a: NodeId, lambda: f64) -> Result<NodeId> {
        if lambda < 0.0 {
            return Err(Error::validation(format!(
                "gradient_reverse lambda must be >= 0, got {lambda}"
            )));
        }
        let value = self.nodes[a.0].value.clone();
        Ok(self.push(value, Op::GradReverse(a, lambda)))
    }

    /// Multi-head scaled dot-product attention, composed from primitives.
    /// q,k,v: [T,D] with D divisible by `heads`.
    pub fn scaled_dot_attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
    ) -> Result<NodeId> {
        let d = self.nodes[q.0].value.cols();
        if heads == 0 || d % heads != 0 {
            return Err(Error::shape(
                "scaled_dot_attention",
                format!("dim {d} not divisible by {heads} heads"),
            ));
        }
        let dh = d / heads;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = self.slice_cols(q, lo, hi)?;
            let kh = self.slice_cols(k, lo, hi)?;
            let vh = self.slice_cols(v, lo, hi)?;
            let kt = self.transpose(kh)?;
            let scores = self.matmul(qh, kt)?;
            let scaled = self.scale(scores, 1.0 / (dh as f64).sqrt());
            let att = self.softmax_rows(scaled)?;
            outs.push(self.matmul(att, vh)?);
        }
        self.concat_cols(&outs)
    }

    /// Reverse pass from a scalar node. Gradients for every node are
    /// retained and parameter gradients can then be pushed to the store.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                "target must be a scalar".to_string(),
            ));
        }
        self.grads = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(&n.value.shape))
            .collect();
        self.grads[loss.0].data[0] = S::one();

        for idx in (0..self.nodes.len()).rev() {
            let g = std::mem::replace(&mut self.grads[idx], Tensor::zeros(&[0]));
            if g.data.iter().all(|v| *v == S::zero()) {
                self.grads[idx] = g;
                continue;
            }
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Input | Op::Param(_) => {}
                Op::Add(a, b) => {
                    self.accum(a, &g.data);
                    self.accum(b, &g.data);
                }
                Op::AddRow(a, b) => {
                    self.accum(a, &g.data);
                    let cols = self.grads[b.0].len();
                    for (i, v) in g.data.iter().enumerate() {
                        self.grads[b.0].data[i % cols] += *v;
                    }
                }
                Op::Sub(a, b) => {
                    self.accum(a, &g.data);
                    for (dst, v) in self.grads[b.0].data.iter_mut().zip(&g.data) {
                        *dst -= *v;
                    }
                }
                Op::Mul(a, b) => {
                    for i in 0..g.data.len() {
                        let (av, bv) = (self.nodes[a.0].value.data[i], self.nodes[b.0].value.data[i]);
                        self.grads[a.0].data[i] += g.data[i] * bv;
                        self.grads[b.0].data[i] += g.data[i] * av;
                    }
                }
                Op::Scale(a, f) => {
                    let f = S::of_f64(f);
                    for (dst, v) in self.grads[a.0].data.iter_mut().zip(&g.data) {
                        *dst += *v * f;
                    }
                }
                Op::Matmul(a, b) => {
                    let (m, k) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                    let n = self.nodes[b.0].value.cols();
                    // dA += dC B^T ; dB += A^T dC
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g.data[i * n + j];
                            if gij == S::zero() {
                                continue;
                            }
                            for l in 0..k {
                                let bval = self.nodes[b.0].value.data[l * n + j];
                                let aval = self.nodes[a.0].value.data[i * k + l];
                                self.grads[a.0].data[i * k + l] += gij * bval;
                                self.grads[b.0].data[l * n + j] += gij * aval;
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                    for i in 0..m {
                        for j in 0..n {
                            self.grads[a.0].data[i * n + j] += g.data[j * m + i];
                        }
                    }
                }
                Op::Tanh(a) => {
                    for i in 0..g.data.len() {
                        let y = self.nodes[idx].value.data[i];
                        self.grads[a.0].data[i] += g.data[i] * (S::one() - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    for i in 0..g.data.len() {
                        let y = self.nodes[idx].value.data[i];
                        self.grads[a.0].data[i] += g.data[i] * y * (S::one() - y);
                    }
                }
                Op::Relu(a) => {
                    for i in 0..g.data.len() {
                        if self.nodes[a.0].value.data[i] > S::zero() {
                            self.grads[a.0].data[i] += g.data[i];
                        }
                    }
                }
                Op::Abs(a) => {
                    for i in 0..g.data.len() {
                        let x = self.nodes[a.0].value.data[i];
                        let sign = if x >= S::zero() { S::one() } else { -S::one() };
                        self.grads[a.0].data[i] += g.data[i] * sign;
                    }
                }
                Op::Exp(a) => {
                    for i in 0..g.data.len() {
                        self.grads[a.0].data[i] += g.data[i] * self.nodes[idx].value.data[i];
                    }
                }
                Op::SumAll(a) => {
                    let gv = g.data[0];
                    for dst in self.grads[a.0].data.iter_mut() {
                        *dst += gv;
                    }
                }
                Op::MeanAll(a) => {
                    let n = self.grads[a.0].len();
                    let gv = g.data[0] / S::of_usize(n);
                    for dst in self.grads[a.0].data.iter_mut() {
                        *dst += gv;
                    }
                }
                Op::MeanRows(a) => {
                    let (t, d) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                    let tf = S::of_usize(t);
                    for r in 0..t {
                        for c in 0..d {
                            self.grads[a.0].data[r * d + c] += g.data[c] / tf;
                        }
                    }
                }
                Op::SliceRows(a, start, _end) => {
                    let d = self.nodes[a.0].value.cols();
                    for (i, v) in g.data.iter().enumerate() {
                        self.grads[a.0].data[start * d + i] += *v;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let d = self.nodes[a.0].value.cols();
                    let w = end - start;
                    for (i, v) in g.data.iter().enumerate() {
                        let (r, c) = (i / w, i % w);
                        self.grads[a.0].data[r * d + start + c] += *v;
                    }
                }
                Op::ConcatCols(parts) => {
                    let t = self.nodes[idx].value.rows();
                    let total = self.nodes[idx].value.cols();
                    let mut offset = 0usize;
                    for p in &parts {
                        let d = self.nodes[p.0].value.cols();
                        for r in 0..t {
                            for c in 0..d {
                                self.grads[p.0].data[r * d + c] +=
                                    g.data[r * total + offset + c];
                            }
                        }
                        offset += d;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0usize;
                    for p in &parts {
                        let len = self.nodes[p.0].value.len();
                        for i in 0..len {
                            self.grads[p.0].data[i] += g.data[offset + i];
                        }
                        offset += len;
                    }
                }
                Op::Embedding { table, ids } => {
                    let d = self.nodes[table.0].value.cols();
                    for (row, id) in ids.iter().enumerate() {
                        for c in 0..d {
                            self.grads[table.0].data[id * d + c] += g.data[row * d + c];
                        }
                    }
                }
                Op::Conv1d { signal, kernel } => {
                    let (t, cin) = (
                        self.nodes[signal.0].value.rows(),
                        self.nodes[signal.0].value.cols(),
                    );
                    let (k, cout) = (
                        self.nodes[kernel.0].value.shape[0],
                        self.nodes[kernel.0].value.shape[2],
                    );
                    let off = k / 2;
                    for ti in 0..t {
                        for ki in 0..k {
                            let si = ti as i64 + ki as i64 - off as i64;
                            if si < 0 || si >= t as i64 {
                                continue;
                            }
                            let si = si as usize;
                            for ci in 0..cin {
                                let x = self.nodes[signal.0].value.at(si, ci);
                                for co in 0..cout {
                                    let gy = g.data[ti * cout + co];
                                    let wk =
                                        self.nodes[kernel.0].value.data[(ki * cin + ci) * cout + co];
                                    self.grads[signal.0].data[si * cin + ci] += gy * wk;
                                    self.grads[kernel.0].data[(ki * cin + ci) * cout + co] +=
                                        gy * x;
                                }
                            }
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias } => {
                    let (t, d) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                    let eps = S::of_f64(LAYER_NORM_EPS);
                    let df = S::of_usize(d);
                    for r in 0..t {
                        let row = &self.nodes[x.0].value.data[r * d..(r + 1) * d];
                        let mean: S = row.iter().copied().sum::<S>() / df;
                        let var: S =
                            row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<S>() / df;
                        let std = (var + eps).sqrt();
                        let xhat: Vec<S> = row.iter().map(|v| (*v - mean) / std).collect();
                        let gy = &g.data[r * d..(r + 1) * d];
                        let mut sum_dxhat = S::zero();
                        let mut sum_dxhat_xhat = S::zero();
                        for c in 0..d {
                            let dxhat = gy[c] * self.nodes[gain.0].value.data[c];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat[c];
                            self.grads[gain.0].data[c] += gy[c] * xhat[c];
                            self.grads[bias.0].data[c] += gy[c];
                        }
                        for c in 0..d {
                            let dxhat = gy[c] * self.nodes[gain.0].value.data[c];
                            self.grads[x.0].data[r * d + c] +=
                                (dxhat - sum_dxhat / df - xhat[c] * sum_dxhat_xhat / df) / std;
                        }
                    }
                }
                Op::SoftmaxRows(a) => {
                    let (t, d) = (
                        self.nodes[idx].value.rows(),
                        self.nodes[idx].value.cols(),
                    );
                    for r in 0..t {
                        let y = &self.nodes[idx].value.data[r * d..(r + 1) * d];
                        let gy = &g.data[r * d..(r + 1) * d];
                        let dot: S = y.iter().zip(gy).map(|(a, b)| *a * *b).sum();
                        for c in 0..d {
                            self.grads[a.0].data[r * d + c] += y[c] * (gy[c] - dot);
                        }
                    }
                }
                Op::SoftmaxCrossEntropy { logits, label } => {
                    let lv = &self.nodes[logits.0].value;
                    let max = lv.data.iter().copied().fold(S::neg_infinity(), S::max);
                    let exps: Vec<S> = lv.data.iter().map(|v| (*v - max).exp()).collect();
                    let sum: S = exps.iter().copied().sum();
                    let gv = g.data[0];
                    for (i, e) in exps.iter().enumerate() {
                        let p = *e / sum;
                        let delta = if i == label { S::one() } else { S::zero() };
                        self.grads[logits.0].data[i] += gv * (p - delta);
                    }
                }
                Op::GradReverse(a, lambda) => {
                    let f = S::of_f64(-lambda);
                    for (dst, v) in self.grads[a.0].data.iter_mut().zip(&g.data) {
                        *dst += *v * f;
                    }
                }
            }
            self.grads[idx] = g;
        }
        Ok(())
    }

    fn accum(&mut self, target: NodeId, g: &[S]) {
        for (dst, v) in self.grads[target.0].data.iter_mut().zip(g) {
            *dst += *v;
        }
    }

    /// Push accumulated parameter gradients into the store.
    pub fn apply_grads(&self, store: &mut ParamStore<S>) {
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(p) = node.op {
                store.accumulate_grad(p, &self.grads[idx]);
            }
        }
    }
}
