use std::sync::atomic::{AtomicU32, Ordering};

use super::kernels::{elu, gemm_nn, sigmoid};
use super::{split_axis, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_GRAPH: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    graph: u32,
    index: u32,
}

impl NodeId {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    BatchMatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Affine { x: usize, w: usize, b: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Narrow { x: usize, axis: usize, start: usize },
    Reshape(usize),
    Transpose(usize),
    BroadcastRows(usize),
    Tanh(usize),
    Sigmoid(usize),
    Elu(usize),
    Softmax { x: usize, axis: usize },
    Sum(usize),
    Mean(usize),
    Embedding { table: usize, ids: Vec<usize> },
    CrossEntropy { logits: usize, target: usize, probs: Vec<T> },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Computation tape. Values are computed as primitives are recorded.
pub struct Graph<T> {
    id: u32,
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Total scalar count held by non-leaf nodes.
    pub fn activation_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .map(|n| n.value.numel())
            .sum()
    }

    pub(crate) fn idx(&self, id: NodeId) -> Result<usize> {
        if id.graph != self.id || id.index() >= self.nodes.len() {
            return Err(Error::UnknownNode(id.index()));
        }
        Ok(id.index())
    }

    fn handle(&self, index: usize) -> NodeId {
        NodeId {
            graph: self.id,
            index: index as u32,
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.index()].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.index()].value.shape()
    }

    /// Returns the value of `root`. Evaluation is eager, so this only checks
    /// that the node belongs to this graph.
    pub fn forward(&self, root: NodeId) -> Result<Tensor<T>> {
        let i = self.idx(root)?;
        Ok(self.nodes[i].value.clone())
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push_leaf(value, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.handle(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(self.handle(self.nodes.len() - 1))
    }

    fn val(&self, i: usize) -> &Tensor<T> {
        &self.nodes[i].value
    }

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (self.val(ia).shape(), self.val(ib).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.val(ia).data(), self.val(ib).data(), &mut out, m, k, n);
        let v = Tensor::new(vec![m, n], out)?;
        self.push("matmul", v, Op::MatMul(ia, ib), &[ia, ib])
    }

    /// `[B,m,k] x [B,k,n] -> [B,m,n]`
    pub fn batch_matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (self.val(ia).shape(), self.val(ib).shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::shape("batch_matmul", sa, sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); bs * m * n];
        let (da, db) = (self.val(ia).data(), self.val(ib).data());
        for s in 0..bs {
            gemm_nn(
                &da[s * m * k..(s + 1) * m * k],
                &db[s * k * n..(s + 1) * k * n],
                &mut out[s * m * n..(s + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let v = Tensor::new(vec![bs, m, n], out)?;
        self.push("batch_matmul", v, Op::BatchMatMul(ia, ib), &[ia, ib])
    }

    fn zip(&mut self, name: &'static str, a: NodeId, b: NodeId, f: impl Fn(T, T) -> T, op: fn(usize, usize) -> Op<T>) -> Result<NodeId> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (self.val(ia), self.val(ib));
        if va.shape() != vb.shape() {
            return Err(Error::shape(name, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let v = Tensor::new(va.shape().to_vec(), data)?;
        self.push(name, v, op(ia, ib), &[ia, ib])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> Result<NodeId> {
        let ia = self.idx(a)?;
        let va = self.val(ia);
        let v = Tensor::new(va.shape().to_vec(), va.data().iter().map(|&x| x * c).collect())?;
        self.push("scale", v, Op::Scale(ia, c), &[ia])
    }

    /// `x[m,k] W[k,n] + b[1,n]`
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (ix, iw, ib) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (sx, sw, sb) = (self.val(ix).shape(), self.val(iw).shape(), self.val(ib).shape());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(Error::shape("affine", sx, sw));
        }
        let (m, k, n) = (sx[0], sx[1], sw[1]);
        if self.val(ib).numel() != n || sb.len() > 2 {
            return Err(Error::shape("affine", sw, sb));
        }
        let bias = self.val(ib).data();
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bias);
        }
        gemm_nn(self.val(ix).data(), self.val(iw).data(), &mut out, m, k, n);
        let v = Tensor::new(vec![m, n], out)?;
        self.push("affine", v, Op::Affine { x: ix, w: iw, b: ib }, &[ix, iw, ib])
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::InvalidInput("concat of zero tensors".into()));
        }
        let idxs = xs.iter().map(|&x| self.idx(x)).collect::<Result<Vec<_>>>()?;
        let first = self.val(idxs[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", &first, &[axis]));
        }
        let mut total = 0;
        for &i in &idxs {
            let s = self.val(i).shape();
            let agree = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !agree {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, _) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &i in &idxs {
                let v = self.val(i);
                let (_, len, inner) = split_axis(v.shape(), axis);
                let chunk = len * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let v = Tensor::new(shape, out)?;
        self.push("concat", v, Op::Concat { inputs: idxs.clone(), axis }, &idxs)
    }

    /// Sub-range `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let ix = self.idx(x)?;
        let s = self.val(ix).shape().to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::shape("narrow", &s, &[axis, start, len]));
        }
        let (outer, alen, inner) = split_axis(&s, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        let d = self.val(ix).data();
        for o in 0..outer {
            let base = o * alen * inner + start * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let v = Tensor::new(shape, out)?;
        self.push("narrow", v, Op::Narrow { x: ix, axis, start }, &[ix])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let ix = self.idx(x)?;
        let v = self.val(ix).clone().reshaped(shape)?;
        self.push("reshape", v, Op::Reshape(ix), &[ix])
    }

    /// Rank-2 transpose.
    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let ix = self.idx(x)?;
        let vx = self.val(ix);
        let s = vx.shape();
        if s.len() != 2 {
            return Err(Error::shape("transpose", s, &[2]));
        }
        let (m, n) = (s[0], s[1]);
        let d = vx.data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        let v = Tensor::new(vec![n, m], out)?;
        self.push("transpose", v, Op::Transpose(ix), &[ix])
    }

    /// Tiles a `[1,n]` row into `[rows,n]`.
    pub fn broadcast_rows(&mut self, x: NodeId, rows: usize) -> Result<NodeId> {
        let ix = self.idx(x)?;
        let vx = self.val(ix);
        let s = vx.shape();
        if s.len() != 2 || s[0] != 1 {
            return Err(Error::shape("broadcast_rows", s, &[1, 0]));
        }
        let n = s[1];
        let mut out = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            out.extend_from_slice(vx.data());
        }
        let v = Tensor::new(vec![rows, n], out)?;
        self.push("broadcast_rows", v, Op::BroadcastRows(ix), &[ix])
    }

    fn map(&mut self, name: &'static str, x: NodeId, f: impl Fn(T) -> T, op: fn(usize) -> Op<T>) -> Result<NodeId> {
        let ix = self.idx(x)?;
        let vx = self.val(ix);
        let v = Tensor::new(vx.shape().to_vec(), vx.data().iter().map(|&a| f(a)).collect())?;
        self.push(name, v, op(ix), &[ix])
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.map("tanh", x, |a| a.tanh(), Op::Tanh)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.map("sigmoid", x, sigmoid, Op::Sigmoid)
    }

    /// ELU with unit scale.
    pub fn elu(&mut self, x: NodeId) -> Result<NodeId> {
        self.map("elu", x, elu, Op::Elu)
    }

    /// Softmax along `axis`. Entries with `mask[i] == false` get an additive
    /// [`Scalar::MASK_LOGIT`] and come out as exact zeros; a lane with no
    /// valid entry is all zeros.
    pub fn softmax(&mut self, x: NodeId, axis: usize, mask: Option<&[bool]>) -> Result<NodeId> {
        let ix = self.idx(x)?;
        let vx = self.val(ix);
        let s = vx.shape().to_vec();
        if axis >= s.len() {
            return Err(Error::shape("softmax", &s, &[axis]));
        }
        if let Some(m) = mask {
            if m.len() != vx.numel() {
                return Err(Error::shape("softmax", &s, &[m.len()]));
            }
        }
        let (outer, len, inner) = split_axis(&s, axis);
        let d = vx.data();
        let neg = T::of(T::MASK_LOGIT);
        let mut out = vec![T::zero(); d.len()];
        let mut logits = vec![T::zero(); len];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * len * inner + k * inner + i;
                let mut any = false;
                for (k, l) in logits.iter_mut().enumerate() {
                    let valid = mask.map_or(true, |m| m[at(k)]);
                    any |= valid;
                    *l = if valid { d[at(k)] } else { d[at(k)] + neg };
                }
                if !any {
                    continue;
                }
                let mx = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
                let mut z = T::zero();
                for (k, &l) in logits.iter().enumerate() {
                    let e = (l - mx).exp();
                    out[at(k)] = e;
                    z += e;
                }
                for k in 0..len {
                    out[at(k)] /= z;
                }
            }
        }
        let v = Tensor::new(s, out)?;
        self.push("softmax", v, Op::Softmax { x: ix, axis }, &[ix])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let ix = self.idx(x)?;
        let s = self.val(ix).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(ix), &[ix])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let ix = self.idx(x)?;
        let v = self.val(ix);
        let n = T::of(v.numel() as f64);
        let s: T = v.data().iter().copied().sum();
        self.push("mean", Tensor::scalar(s / n), Op::Mean(ix), &[ix])
    }

    /// Gathers rows of a `[V,E]` table, giving `[ids.len(), E]`.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let it = self.idx(table)?;
        let vt = self.val(it);
        let s = vt.shape();
        if s.len() != 2 {
            return Err(Error::shape("embedding", s, &[2]));
        }
        let (vocab, e) = (s[0], s[1]);
        let mut out = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= vocab {
                return Err(Error::UnknownToken(id));
            }
            out.extend_from_slice(&vt.data()[id * e..(id + 1) * e]);
        }
        let v = Tensor::new(vec![ids.len(), e], out)?;
        self.push(
            "embedding",
            v,
            Op::Embedding {
                table: it,
                ids: ids.to_vec(),
            },
            &[it],
        )
    }

    /// `-log softmax(logits)[target]` for a single row of logits.
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let il = self.idx(logits)?;
        let vl = self.val(il);
        let c = vl.numel();
        if vl.rank() > 2 || (vl.rank() == 2 && vl.shape()[0] != 1) {
            return Err(Error::shape("cross_entropy", vl.shape(), &[1, c]));
        }
        if target >= c {
            return Err(Error::TargetOutOfRange { target, classes: c });
        }
        let d = vl.data();
        let mx = d.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let z: T = d.iter().map(|&v| (v - mx).exp()).sum();
        let probs: Vec<T> = d.iter().map(|&v| (v - mx).exp() / z).collect();
        let loss = -(d[target] - mx - z.ln());
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: il,
                target,
                probs,
            },
            &[il],
        )
    }
}
