//! Reverse-mode differentiation over a recorded graph of dense ops.
//!
//! Every op appends a node holding its forward value; `backward` walks the
//! nodes in reverse creation order, so node ids are already a topological
//! order. Only nodes reachable from a parameter carry gradients.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, MatView, MatViewMut, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, T),
    Gelu(NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, xhat: Vec<T>, inv_std: Vec<T> },
    Softmax { x: NodeId },
    Attention { q: NodeId, k: NodeId, v: NodeId, heads: usize, scale: T, probs: Vec<T> },
    Embed { table: NodeId, ids: Vec<usize> },
    Stack2(NodeId),
    RowNormalize { x: NodeId, norms: Vec<T> },
    CrossEntropy { logits: NodeId, targets: Vec<Option<usize>>, probs: Vec<T> },
    Sum(NodeId),
    SliceCols { x: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded computation; one graph per forward pass.
#[derive(Debug, Clone)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-parameter gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn empty(n: usize) -> Self {
        Gradients { grads: vec![None; n] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(id.index()).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds `other` into `self`, element-wise, in parameter order.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => m.add_assign(t),
                    None => *mine = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, c: T) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= c;
            }
        }
    }

    pub fn global_norm(&self) -> T {
        self.grads.iter().flatten().flat_map(|g| g.data().iter()).fold(T::zero(), |acc, &v| acc + v * v).sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (ParamId::new(i), g)))
    }
}

fn shape_err<T>(what: &str, a: &Tensor<T>, b: &Tensor<T>) -> Error
where
    T: Real,
{
    Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape()))
}

/// Tanh-approximation GELU, written as `x * sigmoid(2u)` which equals
/// `x/2 * (1 + tanh u)`.
pub(crate) fn gelu<T: Real>(x: T) -> T {
    x * gelu_gate(x)
}

fn gelu_gate<T: Real>(x: T) -> T {
    let c = T::of(2.0 * (2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044715);
    T::one() / (T::one() + (-(c * (x + k * x * x * x))).exp())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::of(2.0 * (2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044715);
    let s = gelu_gate(x);
    s + x * s * (T::one() - s) * c * (T::one() + T::of(3.0) * k * x * x)
}

/// Numerically stable in-place softmax; `limit` masks entries at index >= limit.
pub(crate) fn softmax_in_place<T: Real>(row: &mut [T], limit: usize) {
    let limit = limit.min(row.len());
    let mut mx = T::neg_infinity();
    for &v in &row[..limit] {
        if v > mx {
            mx = v;
        }
    }
    let mut sum = T::zero();
    for v in &mut row[..limit] {
        *v = (*v - mx).exp();
        sum += *v;
    }
    for v in &mut row[..limit] {
        *v = *v / sum;
    }
    for v in &mut row[limit..] {
        *v = T::zero();
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), param_nodes: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> NodeId {
        let needs_grad = matches!(op, Op::Param(_)) || inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn constant(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Leaf, &[])
    }

    /// Leaf bound to a stored parameter; repeated calls share one node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let n = self.push(store.get(id).clone(), Op::Param(id), &[]);
        self.param_nodes.insert(id, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let va = if ta { av.view().t() } else { av.view() };
        let vb = if tb { bv.view().t() } else { bv.view() };
        if va.cols != vb.rows {
            return Err(shape_err("matmul", av, bv));
        }
        let mut out = Tensor::zeros(&[va.rows, vb.cols]);
        let (r, c) = (va.rows, vb.cols);
        gemm(T::one(), va, vb, T::zero(), MatViewMut::full(out.data_mut(), r, c));
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }, &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av, bv));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a row vector to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (av, rv) = (self.value(a), self.value(row));
        if av.cols() != rv.len() {
            return Err(shape_err("add_row", av, rv));
        }
        let mut out = av.clone();
        let c = out.cols();
        for chunk in out.data_mut().chunks_mut(c) {
            for (x, &b) in chunk.iter_mut().zip(rv.data()) {
                *x += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a), &[a])
    }

    pub const LAYER_NORM_EPS: f64 = 1e-8;

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(Error::Shape(format!("layer_norm over {c} columns")));
        }
        let mut xhat = vec![T::zero(); r * c];
        let mut inv_std = vec![T::zero(); r];
        let n = T::of(c as f64);
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + T::of(Self::LAYER_NORM_EPS)).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                xhat[i * c + j] = (row[j] - mean) * inv;
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = xhat[i * c + j] * g[j] + b[j];
            }
        }
        let out = Tensor::matrix(r, c, out)?;
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, &[x, gain, bias]))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if !xv.is_finite() {
            return Err(Error::NonFinite("softmax input"));
        }
        let mut out = xv.clone();
        let c = out.cols();
        for row in out.data_mut().chunks_mut(c) {
            softmax_in_place(row, c);
        }
        Ok(self.push(out, Op::Softmax { x }, &[x]))
    }

    /// Scaled dot-product attention split over `heads` column blocks.
    ///
    /// `q` is `n x d`, `k` and `v` are `m x d`. With `causal`, query `i`
    /// only sees keys `0..=i`.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize, causal: bool) -> Result<NodeId> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        if heads == 0 || d % heads != 0 {
            return Err(Error::Shape(format!("model dim {d} not divisible by {heads} heads")));
        }
        if kv.cols() != d || vv.cols() != d || kv.rows() != vv.rows() {
            return Err(Error::Shape(format!("attention q {:?} k {:?} v {:?}", qv.shape(), kv.shape(), vv.shape())));
        }
        let (n, m) = (qv.rows(), kv.rows());
        if causal && n != m {
            return Err(Error::Shape("causal attention needs square scores".into()));
        }
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut probs = vec![T::zero(); heads * n * m];
        let mut out = Tensor::zeros(&[n, d]);
        for h in 0..heads {
            let p = &mut probs[h * n * m..(h + 1) * n * m];
            gemm(
                scale,
                MatView::block(qv.data(), n, d, h * dh, dh),
                MatView::block(kv.data(), m, d, h * dh, dh).t(),
                T::zero(),
                MatViewMut::full(p, n, m),
            );
            for i in 0..n {
                let limit = if causal { i + 1 } else { m };
                softmax_in_place(&mut p[i * m..(i + 1) * m], limit);
            }
            gemm(
                T::one(),
                MatView::full(p, n, m),
                MatView::block(vv.data(), m, d, h * dh, dh),
                T::zero(),
                MatViewMut::block(out.data_mut(), n, d, h * dh, dh),
            );
        }
        Ok(self.push(out, Op::Attention { q, k, v, heads, scale, probs }, &[q, k, v]))
    }

    /// Attention probabilities of head `h` recorded by an attention node.
    pub fn attention_probs(&self, id: NodeId, h: usize) -> Option<&[T]> {
        match &self.nodes[id.0].op {
            Op::Attention { heads, probs, .. } if h < *heads => {
                let per = probs.len() / heads;
                Some(&probs[h * per..(h + 1) * per])
            }
            _ => None,
        }
    }

    pub fn embed(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let tv = self.value(table);
        let (rows, c) = (tv.rows(), tv.cols());
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            if i >= rows {
                return Err(Error::Index(format!("token {i} outside table of {rows}")));
            }
            data.extend_from_slice(tv.row(i));
        }
        let out = Tensor::matrix(ids.len(), c, data)?;
        Ok(self.push(out, Op::Embed { table, ids: ids.to_vec() }, &[table]))
    }

    /// Concatenates frame pairs: `l x f` becomes `ceil(l/2) x 2f`, zero-padded.
    pub fn stack2(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let (l, f) = (xv.rows(), xv.cols());
        let lo = l.div_ceil(2);
        let mut data = vec![T::zero(); lo * 2 * f];
        data[..l * f].copy_from_slice(&xv.data()[..l * f]);
        let out = Tensor::matrix(lo, 2 * f, data).expect("stack2 shape");
        self.push(out, Op::Stack2(x), &[x])
    }

    /// Scales every row to unit L2 norm; zero rows stay zero.
    pub fn row_normalize(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows());
        for row in out.data_mut().chunks_mut(c) {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            norms.push(n);
            if n > T::zero() {
                for v in row.iter_mut() {
                    *v = *v / n;
                }
            }
        }
        self.push(out, Op::RowNormalize { x, norms }, &[x])
    }

    /// Summed cross entropy of row-wise softmax(logits) against targets.
    /// Rows with `None` target contribute nothing.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[Option<usize>]) -> Result<NodeId> {
        let lv = self.value(logits);
        let (r, c) = (lv.rows(), lv.cols());
        if targets.len() != r {
            return Err(Error::Shape(format!("{} targets for {} rows", targets.len(), r)));
        }
        if !lv.is_finite() {
            return Err(Error::NonFinite("cross-entropy logits"));
        }
        let mut probs = lv.data().to_vec();
        let mut loss = T::zero();
        for (i, t) in targets.iter().enumerate() {
            let row = &mut probs[i * c..(i + 1) * c];
            let logits_row = lv.row(i);
            softmax_in_place(row, c);
            if let Some(t) = *t {
                if t >= c {
                    return Err(Error::Index(format!("target {t} outside {c} classes")));
                }
                let mx = logits_row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = mx + logits_row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
                loss += lse - logits_row[t];
            }
        }
        let out = Tensor::scalar(loss);
        Ok(self.push(out, Op::CrossEntropy { logits, targets: targets.to_vec(), probs }, &[logits]))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if start + len > c {
            return Err(Error::Shape(format!("slice {start}+{len} of {c} columns")));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let out = Tensor::matrix(r, len, data)?;
        Ok(self.push(out, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let r = parts.first().map_or(0, |&p| self.value(p).rows());
        if parts.iter().any(|&p| self.value(p).rows() != r) {
            return Err(Error::Shape("concat row mismatch".into()));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::matrix(r, total, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: NodeId, num_params: usize) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!("loss must be scalar, got {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![T::one()])?);
        let mut out = Gradients::empty(num_params);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => {
                    if pid.index() >= out.grads.len() {
                        out.grads.resize(pid.index() + 1, None);
                    }
                    out.grads[pid.index()] = Some(g);
                }
                Op::MatMul { a, b, ta, tb } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let va = if *ta { av.view().t() } else { av.view() };
                    let vb = if *tb { bv.view().t() } else { bv.view() };
                    let gv = g.view();
                    if self.nodes[a.0].needs_grad {
                        let ga = slot(&mut grads, *a, av.shape());
                        let (r, c) = (av.rows(), av.cols());
                        let dst = MatViewMut::full(ga.data_mut(), r, c);
                        if *ta {
                            gemm(T::one(), vb, gv.t(), T::one(), dst);
                        } else {
                            gemm(T::one(), gv, vb.t(), T::one(), dst);
                        }
                    }
                    if self.nodes[b.0].needs_grad {
                        let gb = slot(&mut grads, *b, bv.shape());
                        let (r, c) = (bv.rows(), bv.cols());
                        let dst = MatViewMut::full(gb.data_mut(), r, c);
                        if *tb {
                            gemm(T::one(), gv.t(), va, T::one(), dst);
                        } else {
                            gemm(T::one(), va.t(), gv, T::one(), dst);
                        }
                    }
                }
                Op::Add(a, b) => {
                    for x in [a, b] {
                        if self.nodes[x.0].needs_grad {
                            slot(&mut grads, *x, g.shape()).add_assign(&g);
                        }
                    }
                }
                Op::AddRow(a, row) => {
                    if self.nodes[a.0].needs_grad {
                        slot(&mut grads, *a, g.shape()).add_assign(&g);
                    }
                    if self.nodes[row.0].needs_grad {
                        let shape = self.value(*row).shape().to_vec();
                        let gr = slot(&mut grads, *row, &shape);
                        let c = g.cols();
                        for chunk in g.data().chunks(c) {
                            for (d, &v) in gr.data_mut().iter_mut().zip(chunk) {
                                *d += v;
                            }
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if self.nodes[a.0].needs_grad {
                        let ga = slot(&mut grads, *a, g.shape());
                        for (d, &v) in ga.data_mut().iter_mut().zip(g.data()) {
                            *d += v * *c;
                        }
                    }
                }
                Op::Gelu(a) => {
                    let x = self.value(*a).data();
                    let ga = slot(&mut grads, *a, g.shape());
                    for ((d, &v), &xi) in ga.data_mut().iter_mut().zip(g.data()).zip(x) {
                        *d += v * gelu_grad(xi);
                    }
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let (r, c) = (g.rows(), g.cols());
                    let gn = self.value(*gain).data().to_vec();
                    if self.nodes[gain.0].needs_grad {
                        let shape = self.value(*gain).shape().to_vec();
                        let gg = slot(&mut grads, *gain, &shape);
                        for i in 0..r {
                            for j in 0..c {
                                gg.data_mut()[j] += g.data()[i * c + j] * xhat[i * c + j];
                            }
                        }
                    }
                    if self.nodes[bias.0].needs_grad {
                        let shape = self.value(*bias).shape().to_vec();
                        let gb = slot(&mut grads, *bias, &shape);
                        for i in 0..r {
                            for j in 0..c {
                                gb.data_mut()[j] += g.data()[i * c + j];
                            }
                        }
                    }
                    if self.nodes[x.0].needs_grad {
                        let shape = self.value(*x).shape().to_vec();
                        let gx = slot(&mut grads, *x, &shape);
                        let n = T::of(c as f64);
                        let mut dxhat = vec![T::zero(); c];
                        for i in 0..r {
                            let mut mean_d = T::zero();
                            let mut mean_dx = T::zero();
                            for j in 0..c {
                                dxhat[j] = g.data()[i * c + j] * gn[j];
                                mean_d += dxhat[j];
                                mean_dx += dxhat[j] * xhat[i * c + j];
                            }
                            mean_d = mean_d / n;
                            mean_dx = mean_dx / n;
                            for j in 0..c {
                                gx.data_mut()[i * c + j] += inv_std[i] * (dxhat[j] - mean_d - xhat[i * c + j] * mean_dx);
                            }
                        }
                    }
                }
                Op::Softmax { x } => {
                    let y = &node.value;
                    let c = y.cols();
                    let gx = slot(&mut grads, *x, g.shape());
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let gr = &g.data()[i * c..(i + 1) * c];
                        let s: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            gx.data_mut()[i * c + j] += yr[j] * (gr[j] - s);
                        }
                    }
                }
                Op::Attention { q, k, v, heads, scale, probs } => {
                    self.attention_backward(&mut grads, &g, *q, *k, *v, *heads, probs, *scale);
                }
                Op::Embed { table, ids } => {
                    let shape = self.value(*table).shape().to_vec();
                    let gt = slot(&mut grads, *table, &shape);
                    let c = g.cols();
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..c {
                            gt.data_mut()[id * c + j] += g.data()[r * c + j];
                        }
                    }
                }
                Op::Stack2(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    let gx = slot(&mut grads, *x, &shape);
                    let n = gx.len();
                    for (d, &v) in gx.data_mut().iter_mut().zip(&g.data()[..n]) {
                        *d += v;
                    }
                }
                Op::RowNormalize { x, norms } => {
                    let y = &node.value;
                    let c = y.cols();
                    let gx = slot(&mut grads, *x, g.shape());
                    for (i, &n) in norms.iter().enumerate() {
                        if n == T::zero() {
                            continue;
                        }
                        let yr = y.row(i);
                        let gr = &g.data()[i * c..(i + 1) * c];
                        let s: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            gx.data_mut()[i * c + j] += (gr[j] - yr[j] * s) / n;
                        }
                    }
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let shape = self.value(*logits).shape().to_vec();
                    let gl = slot(&mut grads, *logits, &shape);
                    let c = gl.cols();
                    let up = g.item();
                    for (i, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            for j in 0..c {
                                let onehot = if j == t { T::one() } else { T::zero() };
                                gl.data_mut()[i * c + j] += up * (probs[i * c + j] - onehot);
                            }
                        }
                    }
                }
                Op::Sum(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    let gx = slot(&mut grads, *x, &shape);
                    let up = g.item();
                    for d in gx.data_mut() {
                        *d += up;
                    }
                }
                Op::SliceCols { x, start } => {
                    let shape = self.value(*x).shape().to_vec();
                    let gx = slot(&mut grads, *x, &shape);
                    let (c, w) = (gx.cols(), g.cols());
                    for i in 0..g.rows() {
                        for j in 0..w {
                            gx.data_mut()[i * c + start + j] += g.data()[i * w + j];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = g.cols();
                    let mut off = 0;
                    for p in parts {
                        let shape = self.value(*p).shape().to_vec();
                        let w = self.value(*p).cols();
                        if self.nodes[p.0].needs_grad {
                            let gp = slot(&mut grads, *p, &shape);
                            for i in 0..g.rows() {
                                for j in 0..w {
                                    gp.data_mut()[i * w + j] += g.data()[i * total + off + j];
                                }
                            }
                        }
                        off += w;
                    }
                }
            }
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        grads: &mut [Option<Tensor<T>>],
        g: &Tensor<T>,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        probs: &[T],
        scale: T,
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, m, d) = (qv.rows(), kv.rows(), qv.cols());
        let dh = d / heads;
        let mut dq = Tensor::zeros(&[n, d]);
        let mut dk = Tensor::zeros(&[m, d]);
        let mut dv = Tensor::zeros(&[m, d]);
        let mut dp = vec![T::zero(); n * m];
        for h in 0..heads {
            let p = &probs[h * n * m..(h + 1) * n * m];
            let go = MatView::block(g.data(), n, d, h * dh, dh);
            // dV_h = P^T dO_h
            gemm(T::one(), MatView::full(p, n, m).t(), go, T::zero(), MatViewMut::block(dv.data_mut(), m, d, h * dh, dh));
            // dP = dO_h V_h^T
            gemm(T::one(), go, MatView::block(vv.data(), m, d, h * dh, dh).t(), T::zero(), MatViewMut::full(&mut dp, n, m));
            for i in 0..n {
                let pr = &p[i * m..(i + 1) * m];
                let dr = &mut dp[i * m..(i + 1) * m];
                let s: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                for j in 0..m {
                    dr[j] = pr[j] * (dr[j] - s);
                }
            }
            gemm(
                scale,
                MatView::full(&dp, n, m),
                MatView::block(kv.data(), m, d, h * dh, dh),
                T::zero(),
                MatViewMut::block(dq.data_mut(), n, d, h * dh, dh),
            );
            gemm(
                scale,
                MatView::full(&dp, n, m).t(),
                MatView::block(qv.data(), n, d, h * dh, dh),
                T::zero(),
                MatViewMut::block(dk.data_mut(), m, d, h * dh, dh),
            );
        }
        for (id, t) in [(q, dq), (k, dk), (v, dv)] {
            if self.nodes[id.0].needs_grad {
                slot(grads, id, t.shape()).add_assign(&t);
            }
        }
    }
}

fn slot<'a, T: Real>(grads: &'a mut [Option<Tensor<T>>], id: NodeId, shape: &[usize]) -> &'a mut Tensor<T> {
    grads[id.0].get_or_insert_with(|| Tensor::zeros(shape))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(tensors: Vec<Tensor<f64>>) -> (ParamStore<f64>, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = tensors.into_iter().enumerate().map(|(i, t)| s.insert(&format!("p{i}"), t)).collect();
        (s, ids)
    }

    #[test]
    fn gelu_matches_tanh_form() {
        for i in -80..=80 {
            let x = i as f64 * 0.1;
            let u = (2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x);
            let want = 0.5 * x * (1.0 + u.tanh());
            assert!((gelu(x) - want).abs() < 1e-12, "x={x}: {} vs {want}", gelu(x));
        }
    }

    #[test]
    fn linear_sum_gradient_is_input_broadcast() {
        // loss = sum(x · W) with x fixed: dW[i][j] = x[i].
        let (store, ids) = store_with(vec![Tensor::matrix(3, 2, vec![0.5; 6]).unwrap()]);
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let w = g.param(&store, ids[0]);
        let y = g.matmul(x, w).unwrap();
        let l = g.sum(y);
        let grads = g.backward(l, store.len()).unwrap();
        assert_eq!(grads.get(ids[0]).unwrap().data(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn unused_parameter_has_no_gradient() {
        let (store, ids) = store_with(vec![Tensor::scalar(1.0), Tensor::scalar(2.0)]);
        let mut g = Graph::new();
        let a = g.param(&store, ids[0]);
        let _b = g.param(&store, ids[1]);
        let l = g.sum(a);
        let grads = g.backward(l, store.len()).unwrap();
        assert!(grads.get(ids[1]).is_none_or(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let (store, ids) = store_with(vec![Tensor::matrix(2, 2, vec![1.0; 4]).unwrap()]);
        let mut g = Graph::new();
        let a = g.param(&store, ids[0]);
        assert!(g.backward(a, store.len()).is_err());
    }

    #[test]
    fn attention_shape_errors() {
        let mut g = Graph::<f64>::new();
        let q = g.constant(Tensor::zeros(&[2, 6]));
        let k = g.constant(Tensor::zeros(&[3, 6]));
        let v = g.constant(Tensor::zeros(&[2, 6]));
        assert!(g.attention(q, k, v, 2, false).is_err());
        let v = g.constant(Tensor::zeros(&[3, 6]));
        assert!(g.attention(q, k, v, 4, false).is_err());
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::matrix(2, 4, vec![1.0, 2.0, 3.0, 10.0, -5.0, 0.5, 0.25, 7.0]).unwrap());
        let gain = g.constant(Tensor::new(vec![4], vec![1.0; 4]).unwrap());
        let bias = g.constant(Tensor::new(vec![4], vec![0.0; 4]).unwrap());
        let y = g.layer_norm(x, gain, bias).unwrap();
        for r in 0..2 {
            let row = g.value(y).row(r);
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }
}
