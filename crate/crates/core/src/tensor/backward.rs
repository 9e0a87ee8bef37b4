use super::graph::{Graph, NodeId, Op};
use super::kernels::{gemm_nt, gemm_tn};
use super::{split_axis, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Gradients of a scalar root with respect to every differentiable leaf.
pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, leaf: NodeId) -> Option<&Tensor<T>> {
        self.leaves.get(leaf.index()).and_then(Option::as_ref)
    }

    /// Takes ownership of a leaf's gradient.
    pub fn take(&mut self, leaf: NodeId) -> Option<Tensor<T>> {
        self.leaves.get_mut(leaf.index()).and_then(Option::take)
    }
}

fn acc<T: Scalar>(slot: &mut Option<Vec<T>>, n: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); n])
}

impl<T: Scalar> Graph<T> {
    /// Reverse sweep from a scalar `root`. Gradients accumulate additively
    /// where a node fans out.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        let r = self.idx(root)?;
        let rv = &self.nodes[r].value;
        if rv.numel() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        if !self.nodes[r].requires_grad {
            return Err(Error::DetachedRoot);
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; r + 1];
        grads[r] = Some(vec![T::one()]);

        for i in (0..=r).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let out = &node.value;
            let rg = |j: usize| self.nodes[j].requires_grad;
            let v = |j: usize| &self.nodes[j].value;
            match &node.op {
                Op::Leaf => unreachable!(),
                &Op::MatMul(a, b) => {
                    let (sa, sb) = (v(a).shape(), v(b).shape());
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    if rg(a) {
                        gemm_nt(&g, v(b).data(), acc(&mut grads[a], m * k), m, n, k);
                    }
                    if rg(b) {
                        gemm_tn(v(a).data(), &g, acc(&mut grads[b], k * n), m, k, n);
                    }
                }
                &Op::BatchMatMul(a, b) => {
                    let (sa, sb) = (v(a).shape(), v(b).shape());
                    let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                    if rg(a) {
                        let ga = acc(&mut grads[a], bs * m * k);
                        for s in 0..bs {
                            gemm_nt(
                                &g[s * m * n..(s + 1) * m * n],
                                &v(b).data()[s * k * n..(s + 1) * k * n],
                                &mut ga[s * m * k..(s + 1) * m * k],
                                m,
                                n,
                                k,
                            );
                        }
                    }
                    if rg(b) {
                        let gb = acc(&mut grads[b], bs * k * n);
                        for s in 0..bs {
                            gemm_tn(
                                &v(a).data()[s * m * k..(s + 1) * m * k],
                                &g[s * m * n..(s + 1) * m * n],
                                &mut gb[s * k * n..(s + 1) * k * n],
                                m,
                                k,
                                n,
                            );
                        }
                    }
                }
                &Op::Add(a, b) => {
                    for (j, sign) in [(a, T::one()), (b, T::one())] {
                        if rg(j) {
                            let gj = acc(&mut grads[j], g.len());
                            for (x, &y) in gj.iter_mut().zip(&g) {
                                *x += sign * y;
                            }
                        }
                    }
                }
                &Op::Sub(a, b) => {
                    for (j, sign) in [(a, T::one()), (b, -T::one())] {
                        if rg(j) {
                            let gj = acc(&mut grads[j], g.len());
                            for (x, &y) in gj.iter_mut().zip(&g) {
                                *x += sign * y;
                            }
                        }
                    }
                }
                &Op::Mul(a, b) => {
                    for (j, other) in [(a, b), (b, a)] {
                        if rg(j) {
                            let od = v(other).data();
                            let gj = acc(&mut grads[j], g.len());
                            for ((x, &y), &o) in gj.iter_mut().zip(&g).zip(od) {
                                *x += y * o;
                            }
                        }
                    }
                }
                &Op::Scale(a, c) => {
                    let ga = acc(&mut grads[a], g.len());
                    for (x, &y) in ga.iter_mut().zip(&g) {
                        *x += y * c;
                    }
                }
                &Op::Affine { x, w, b } => {
                    let (sx, sw) = (v(x).shape(), v(w).shape());
                    let (m, k, n) = (sx[0], sx[1], sw[1]);
                    if rg(x) {
                        gemm_nt(&g, v(w).data(), acc(&mut grads[x], m * k), m, n, k);
                    }
                    if rg(w) {
                        gemm_tn(v(x).data(), &g, acc(&mut grads[w], k * n), m, k, n);
                    }
                    if rg(b) {
                        let gb = acc(&mut grads[b], n);
                        for row in g.chunks(n) {
                            for (x, &y) in gb.iter_mut().zip(row) {
                                *x += y;
                            }
                        }
                    }
                }
                Op::Concat { inputs, axis } => {
                    let (outer, _, _) = split_axis(out.shape(), *axis);
                    let mut offset = 0;
                    for o in 0..outer {
                        for &j in inputs {
                            let (_, len, inner) = split_axis(v(j).shape(), *axis);
                            let chunk = len * inner;
                            if rg(j) {
                                let n = v(j).numel();
                                let gj = acc(&mut grads[j], n);
                                for (x, &y) in gj[o * chunk..(o + 1) * chunk].iter_mut().zip(&g[offset..offset + chunk]) {
                                    *x += y;
                                }
                            }
                            offset += chunk;
                        }
                    }
                }
                &Op::Narrow { x, axis, start } => {
                    let (outer, alen, inner) = split_axis(v(x).shape(), axis);
                    let len = out.shape()[axis];
                    let gx = acc(&mut grads[x], outer * alen * inner);
                    for o in 0..outer {
                        let base = o * alen * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (x, &y) in gx[base..base + len * inner].iter_mut().zip(src) {
                            *x += y;
                        }
                    }
                }
                &Op::Reshape(x) => {
                    let gx = acc(&mut grads[x], g.len());
                    for (a, &b) in gx.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                &Op::Transpose(x) => {
                    let s = v(x).shape();
                    let (m, n) = (s[0], s[1]);
                    let gx = acc(&mut grads[x], m * n);
                    for i in 0..m {
                        for j in 0..n {
                            gx[i * n + j] += g[j * m + i];
                        }
                    }
                }
                &Op::BroadcastRows(x) => {
                    let n = v(x).numel();
                    let gx = acc(&mut grads[x], n);
                    for row in g.chunks(n) {
                        for (a, &b) in gx.iter_mut().zip(row) {
                            *a += b;
                        }
                    }
                }
                &Op::Tanh(x) => {
                    let gx = acc(&mut grads[x], g.len());
                    for ((a, &b), &y) in gx.iter_mut().zip(&g).zip(out.data()) {
                        *a += b * (T::one() - y * y);
                    }
                }
                &Op::Sigmoid(x) => {
                    let gx = acc(&mut grads[x], g.len());
                    for ((a, &b), &y) in gx.iter_mut().zip(&g).zip(out.data()) {
                        *a += b * y * (T::one() - y);
                    }
                }
                &Op::Elu(x) => {
                    let xd = v(x).data();
                    let gx = acc(&mut grads[x], g.len());
                    for (((a, &b), &y), &xi) in gx.iter_mut().zip(&g).zip(out.data()).zip(xd) {
                        let d = if xi > T::zero() { T::one() } else { y + T::one() };
                        *a += b * d;
                    }
                }
                &Op::Softmax { x, axis } => {
                    let (outer, len, inner) = split_axis(out.shape(), axis);
                    let y = out.data();
                    let gx = acc(&mut grads[x], y.len());
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| o * len * inner + k * inner + i;
                            let dot: T = (0..len).map(|k| y[at(k)] * g[at(k)]).sum();
                            for k in 0..len {
                                gx[at(k)] += y[at(k)] * (g[at(k)] - dot);
                            }
                        }
                    }
                }
                &Op::Sum(x) => {
                    let n = v(x).numel();
                    let gx = acc(&mut grads[x], n);
                    for a in gx.iter_mut() {
                        *a += g[0];
                    }
                }
                &Op::Mean(x) => {
                    let n = v(x).numel();
                    let share = g[0] / T::of(n as f64);
                    let gx = acc(&mut grads[x], n);
                    for a in gx.iter_mut() {
                        *a += share;
                    }
                }
                Op::Embedding { table, ids } => {
                    let s = v(*table).shape();
                    let e = s[1];
                    let gt = acc(&mut grads[*table], s[0] * e);
                    for (row, &id) in g.chunks(e).zip(ids) {
                        for (a, &b) in gt[id * e..(id + 1) * e].iter_mut().zip(row) {
                            *a += b;
                        }
                    }
                }
                Op::CrossEntropy { logits, target, probs } => {
                    let gl = acc(&mut grads[*logits], probs.len());
                    for (k, (a, &p)) in gl.iter_mut().zip(probs).enumerate() {
                        let t = if k == *target { T::one() } else { T::zero() };
                        *a += g[0] * (p - t);
                    }
                }
            }
        }

        let leaves = grads
            .into_iter()
            .enumerate()
            .map(|(i, gi)| {
                let n = &self.nodes[i];
                match (&n.op, n.requires_grad) {
                    (Op::Leaf, true) => {
                        let data = gi.unwrap_or_else(|| vec![T::zero(); n.value.numel()]);
                        Some(Tensor::new(n.value.shape().to_vec(), data).expect("gradient matches leaf shape"))
                    }
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients { leaves })
    }
}
