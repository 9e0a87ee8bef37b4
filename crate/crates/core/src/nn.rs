//! Named parameter storage and the small layers the reasoning units are
//! assembled from.

use std::ops::Index;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, NodeId, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    /// Glorot-uniform `[fan_in, fan_out]` matrix.
    pub fn xavier<R: Rng>(&mut self, rng: &mut R, name: impl Into<String>, fan_in: usize, fan_out: usize) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| T::of(rng.gen_range(-limit..limit))).collect();
        let t = Tensor::new(vec![fan_in, fan_out], data).expect("xavier shape");
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Replaces every tensor, checking names and shapes against the store.
    pub fn load(&mut self, named: Vec<(String, Tensor<T>)>) -> Result<()> {
        if named.len() != self.tensors.len() {
            return Err(Error::ConfigMismatch(format!(
                "expected {} parameter tensors, found {}",
                self.tensors.len(),
                named.len()
            )));
        }
        for (i, (name, t)) in named.into_iter().enumerate() {
            if name != self.names[i] || t.shape() != self.tensors[i].shape() {
                return Err(Error::ConfigMismatch(format!(
                    "parameter {i}: expected `{}` {:?}, found `{name}` {:?}",
                    self.names[i],
                    self.tensors[i].shape(),
                    t.shape()
                )));
            }
            self.tensors[i] = t;
        }
        Ok(())
    }

    /// Records every parameter as a differentiable leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            ids: self.tensors.iter().map(|t| g.param(t.clone())).collect(),
        }
    }

    /// Records every parameter as a constant leaf of `g`.
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            ids: self.tensors.iter().map(|t| g.constant(t.clone())).collect(),
        }
    }
}

/// Graph nodes holding the parameters of a [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    ids: Vec<NodeId>,
}

impl Bound {
    /// Wraps nodes already recorded on a graph, in store order.
    pub fn from_nodes(ids: Vec<NodeId>) -> Self {
        Self { ids }
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.ids
    }
}

impl Index<ParamId> for Bound {
    type Output = NodeId;

    fn index(&self, id: ParamId) -> &NodeId {
        &self.ids[id.0]
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(ps: &mut ParamStore<T>, rng: &mut R, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = ps.xavier(rng, format!("{name}.w"), fan_in, fan_out);
        let b = Some(ps.zeros(format!("{name}.b"), &[1, fan_out]));
        Self { w, b, fan_in, fan_out }
    }

    pub fn no_bias<T: Scalar, R: Rng>(ps: &mut ParamStore<T>, rng: &mut R, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = ps.xavier(rng, format!("{name}.w"), fan_in, fan_out);
        Self {
            w,
            b: None,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: NodeId) -> Result<NodeId> {
        match self.b {
            Some(b) => g.affine(x, p[self.w], p[b]),
            None => g.matmul(x, p[self.w]),
        }
    }
}

/// Two affine layers with ELU between them.
#[derive(Clone, Debug)]
pub struct Mlp2 {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp2 {
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        hidden: usize,
        fan_out: usize,
    ) -> Self {
        Self {
            first: Linear::new(ps, rng, &format!("{name}.0"), fan_in, hidden),
            second: Linear::new(ps, rng, &format!("{name}.1"), hidden, fan_out),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: NodeId) -> Result<NodeId> {
        let h = self.first.forward(g, p, x)?;
        let h = g.elu(h)?;
        self.second.forward(g, p, h)
    }
}

/// LSTM cell over a batch of rows. Gate column order is input, forget,
/// candidate, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub gates: Linear,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<T: Scalar, R: Rng>(ps: &mut ParamStore<T>, rng: &mut R, name: &str, input: usize, hidden: usize) -> Self {
        Self {
            gates: Linear::new(ps, rng, name, input + hidden, 4 * hidden),
            input,
            hidden,
        }
    }

    /// One recurrence step: `x [B,input]`, `(h, c) [B,hidden]` to the next `(h, c)`.
    pub fn step<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: NodeId, h: NodeId, c: NodeId) -> Result<(NodeId, NodeId)> {
        let xh = g.concat(&[x, h], 1)?;
        let z = self.gates.forward(g, p, xh)?;
        let hd = self.hidden;
        let i = g.narrow(z, 1, 0, hd)?;
        let f = g.narrow(z, 1, hd, hd)?;
        let u = g.narrow(z, 1, 2 * hd, hd)?;
        let o = g.narrow(z, 1, 3 * hd, hd)?;
        let i = g.sigmoid(i)?;
        let f = g.sigmoid(f)?;
        let u = g.tanh(u)?;
        let o = g.sigmoid(o)?;
        let keep = g.mul(f, c)?;
        let write = g.mul(i, u)?;
        let c_next = g.add(keep, write)?;
        let tc = g.tanh(c_next)?;
        let h_next = g.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}

/// Bidirectional LSTM over a sequence of `[B,input]` steps.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

/// Per-timestep hidden states of both directions, both indexed by time.
pub struct BiLstmStates {
    pub forward: Vec<NodeId>,
    pub backward: Vec<NodeId>,
}

impl BiLstm {
    pub fn new<T: Scalar, R: Rng>(ps: &mut ParamStore<T>, rng: &mut R, name: &str, input: usize, hidden: usize) -> Self {
        Self {
            forward: LstmCell::new(ps, rng, &format!("{name}.fwd"), input, hidden),
            backward: LstmCell::new(ps, rng, &format!("{name}.bwd"), input, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    pub fn run<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, steps: &[NodeId]) -> Result<BiLstmStates> {
        let batch = steps.first().map(|&s| g.shape(s)[0]).ok_or_else(|| Error::InvalidInput("empty sequence".into()))?;
        let hd = self.hidden();
        let run_dir = |g: &mut Graph<T>, cell: &LstmCell, order: &mut dyn Iterator<Item = usize>| -> Result<Vec<(usize, NodeId)>> {
            let mut h = g.constant(Tensor::zeros(&[batch, hd]));
            let mut c = g.constant(Tensor::zeros(&[batch, hd]));
            let mut out = Vec::with_capacity(steps.len());
            for t in order {
                (h, c) = cell.step(g, p, steps[t], h, c)?;
                out.push((t, h));
            }
            Ok(out)
        };
        let fwd = run_dir(g, &self.forward, &mut (0..steps.len()))?;
        let mut bwd = run_dir(g, &self.backward, &mut (0..steps.len()).rev())?;
        bwd.sort_by_key(|&(t, _)| t);
        Ok(BiLstmStates {
            forward: fwd.into_iter().map(|(_, h)| h).collect(),
            backward: bwd.into_iter().map(|(_, h)| h).collect(),
        })
    }
}
