//! The object-oriented spatio-temporal reasoning unit.
//!
//! A unit takes `N` object sequences `[N, T, w]` with a validity mask, a
//! context vector and a query. Each sequence is summarized into one vector by
//! query-driven temporal attention (or a BiLSTM), the summaries are linked by
//! a query-induced adjacency `A = a a^T`, refined by a skip-connected GCN and
//! finally fused with the context by a two-layer MLP. Output rows keep the
//! order (and so the identities) of the input sequences.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BiLstm, Bound, Linear, Mlp2, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Graph, NodeId, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalMode {
    Attention,
    /// Projection of the last forward and first backward LSTM states.
    BilstmEnds,
    /// Temporal attention over BiLSTM hidden states.
    BilstmAttention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OstrConfig {
    pub d: usize,
    pub gcn_layers: usize,
    pub temporal_mode: TemporalMode,
    pub context_enabled: bool,
    /// When false the adjacency and GCN are skipped and `H = Z`.
    #[serde(default = "default_true")]
    pub interaction_enabled: bool,
}

fn default_true() -> bool {
    true
}

impl OstrConfig {
    pub fn new(d: usize, gcn_layers: usize, temporal_mode: TemporalMode) -> Self {
        Self {
            d,
            gcn_layers,
            temporal_mode,
            context_enabled: true,
            interaction_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.gcn_layers == 0 {
            return Err(Error::InvalidInput(format!("OSTR needs d >= 1 and gcn_layers >= 1, got {self:?}")));
        }
        if self.temporal_mode != TemporalMode::Attention && self.d % 2 != 0 {
            return Err(Error::InvalidInput(format!("BiLSTM temporal modes need an even d, got {}", self.d)));
        }
        Ok(())
    }
}

/// Query-driven attention over time:
/// `beta_t = softmax_t(W_a((W_q q + b_q) * (W_x x_t + b_x)))`, `z = sum_t beta_t x_t`.
#[derive(Clone, Debug)]
pub struct TemporalAttention {
    pub query: Linear,
    pub input: Linear,
    pub score: Linear,
}

impl TemporalAttention {
    /// Attends over `[.., T, width]` inputs with a `d`-wide query.
    pub fn new<T: Scalar, R: Rng>(ps: &mut ParamStore<T>, rng: &mut R, name: &str, width: usize, d: usize) -> Self {
        Self {
            query: Linear::new(ps, rng, &format!("{name}.query"), d, d),
            input: Linear::new(ps, rng, &format!("{name}.input"), width, d),
            score: Linear::no_bias(ps, rng, &format!("{name}.score"), d, 1),
        }
    }

    /// `x` is `[N, T, width]`, `mask` row-major `N x T`, `q` is `[1, d]`.
    /// Returns `(z [N, width], beta [N, T])`; rows with no valid step are zero.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: NodeId, mask: &[bool], q: NodeId) -> Result<(NodeId, NodeId)> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::shape("temporal_attention", &s, &[0, 0, 0]));
        }
        let (n, t, w) = (s[0], s[1], s[2]);
        if mask.len() != n * t {
            return Err(Error::shape("temporal_attention", &[n, t], &[mask.len()]));
        }
        let rows = g.reshape(x, &[n * t, w])?;
        let keys = self.input.forward(g, p, rows)?;
        let qp = self.query.forward(g, p, q)?;
        let qb = g.broadcast_rows(qp, n * t)?;
        let mixed = g.mul(keys, qb)?;
        let logits = self.score.forward(g, p, mixed)?;
        let logits = g.reshape(logits, &[n, t])?;
        let beta = g.softmax(logits, 1, Some(mask))?;
        let b3 = g.reshape(beta, &[n, 1, t])?;
        let z = g.batch_matmul(b3, x)?;
        let z = g.reshape(z, &[n, w])?;
        Ok((z, beta))
    }
}

#[derive(Clone, Debug)]
pub struct GcnLayer {
    pub inner: Linear,
    pub outer: Linear,
}

#[derive(Clone, Debug)]
enum Temporal {
    Attention(TemporalAttention),
    BilstmEnds { lstm: BiLstm, projection: Linear },
    BilstmAttention { lstm: BiLstm, attention: TemporalAttention },
}

/// Parameters of one OSTR unit. Units applied at several positions of the
/// same level share one instance.
#[derive(Clone, Debug)]
pub struct OstrUnit {
    pub config: OstrConfig,
    pub input_width: usize,
    pub context_width: usize,
    temporal: Temporal,
    pub relevance: Linear,
    pub gcn: Vec<GcnLayer>,
    pub context_mlp: Mlp2,
}

/// Everything one unit application produced, for inspection.
#[derive(Clone, Debug)]
pub struct OstrOutput {
    /// `[N, d]`
    pub y: NodeId,
    /// Temporal summaries `[N, d]`.
    pub z: NodeId,
    /// Refined states `[N, d]`.
    pub h: NodeId,
    /// Temporal attention `[N, T]` (absent for `bilstm-ends`).
    pub beta: Option<NodeId>,
    /// Relevance vectors `a` `[N, d]`.
    pub relevance: Option<NodeId>,
    /// Adjacency `[N, N]`.
    pub adjacency: Option<NodeId>,
    pub identities: Vec<usize>,
}

impl OstrUnit {
    /// `input_width` is the feature width of the object sequences and must
    /// equal `d` for BiLSTM modes; `context_width` is the width of `c`.
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        config: OstrConfig,
        input_width: usize,
        context_width: usize,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        if input_width != d {
            return Err(Error::InvalidInput(format!("OSTR input width {input_width} must equal d={d}")));
        }
        let temporal = match config.temporal_mode {
            TemporalMode::Attention => Temporal::Attention(TemporalAttention::new(ps, rng, &format!("{name}.temporal"), input_width, d)),
            TemporalMode::BilstmEnds => Temporal::BilstmEnds {
                lstm: BiLstm::new(ps, rng, &format!("{name}.lstm"), input_width, d / 2),
                projection: Linear::new(ps, rng, &format!("{name}.ends"), d, d),
            },
            TemporalMode::BilstmAttention => Temporal::BilstmAttention {
                lstm: BiLstm::new(ps, rng, &format!("{name}.lstm"), input_width, d / 2),
                attention: TemporalAttention::new(ps, rng, &format!("{name}.temporal"), d, d),
            },
        };
        let relevance = Linear::no_bias(ps, rng, &format!("{name}.relevance"), 2 * d, d);
        let gcn = (0..config.gcn_layers)
            .map(|i| GcnLayer {
                inner: Linear::new(ps, rng, &format!("{name}.gcn{i}.inner"), d, d),
                outer: Linear::no_bias(ps, rng, &format!("{name}.gcn{i}.outer"), d, d),
            })
            .collect();
        let context_mlp = Mlp2::new(ps, rng, &format!("{name}.context"), d + context_width, d, d);
        Ok(Self {
            config,
            input_width,
            context_width,
            temporal,
            relevance,
            gcn,
            context_mlp,
        })
    }

    /// Summarizes each object sequence. Returns `(z [N, d], beta)`.
    pub fn summarize<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: NodeId, mask: &[bool], q: NodeId) -> Result<(NodeId, Option<NodeId>)> {
        match &self.temporal {
            Temporal::Attention(att) => {
                let (z, beta) = att.forward(g, p, x, mask, q)?;
                Ok((z, Some(beta)))
            }
            Temporal::BilstmEnds { lstm, projection } => {
                let (n, t, states) = self.run_lstm(g, p, lstm, x, mask)?;
                let ends = g.concat(&[states.forward[t - 1], states.backward[0]], 1)?;
                let z = projection.forward(g, p, ends)?;
                let d = self.config.d;
                let alive: Vec<T> = (0..n)
                    .flat_map(|i| {
                        let any = mask[i * t..(i + 1) * t].iter().any(|&m| m);
                        std::iter::repeat(if any { T::one() } else { T::zero() }).take(d)
                    })
                    .collect();
                let alive = g.constant(Tensor::new(vec![n, d], alive)?);
                Ok((g.mul(z, alive)?, None))
            }
            Temporal::BilstmAttention { lstm, attention } => {
                let (n, t, states) = self.run_lstm(g, p, lstm, x, mask)?;
                let d = self.config.d;
                let steps = (0..t)
                    .map(|k| {
                        let h = g.concat(&[states.forward[k], states.backward[k]], 1)?;
                        g.reshape(h, &[n, 1, d])
                    })
                    .collect::<Result<Vec<_>>>()?;
                let hs = g.concat(&steps, 1)?;
                let (z, beta) = attention.forward(g, p, hs, mask, q)?;
                Ok((z, Some(beta)))
            }
        }
    }

    fn run_lstm<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        lstm: &BiLstm,
        x: NodeId,
        mask: &[bool],
    ) -> Result<(usize, usize, crate::nn::BiLstmStates)> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || mask.len() != s[0] * s[1] {
            return Err(Error::shape("ostr_bilstm", &s, &[mask.len()]));
        }
        let (n, t, w) = (s[0], s[1], s[2]);
        let keep: Vec<T> = mask
            .iter()
            .flat_map(|&m| std::iter::repeat(if m { T::one() } else { T::zero() }).take(w))
            .collect();
        let keep = g.constant(Tensor::new(vec![n, t, w], keep)?);
        let xm = g.mul(x, keep)?;
        let steps = (0..t)
            .map(|k| {
                let sl = g.narrow(xm, 1, k, 1)?;
                g.reshape(sl, &[n, w])
            })
            .collect::<Result<Vec<_>>>()?;
        let states = lstm.run(g, p, &steps)?;
        Ok((n, t, states))
    }

    /// `a = softmax over objects (W [z ; z * q])`, `A = a a^T`. Returns `(a, A)`.
    pub fn build_adjacency<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, z: NodeId, q: NodeId) -> Result<(NodeId, NodeId)> {
        let n = g.shape(z)[0];
        let qb = g.broadcast_rows(q, n)?;
        let zq = g.mul(z, qb)?;
        let cat = g.concat(&[z, zq], 1)?;
        let logits = self.relevance.forward(g, p, cat)?;
        let a = g.softmax(logits, 0, None)?;
        let at = g.transpose(a)?;
        let adj = g.matmul(a, at)?;
        Ok((a, adj))
    }

    /// `H^i = elu(H^{i-1} + W_2 elu(A H^{i-1} W_1 + b))` for every GCN layer.
    pub fn gcn_refine<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, z: NodeId, adjacency: NodeId) -> Result<NodeId> {
        let mut h = z;
        for layer in &self.gcn {
            let msg = g.matmul(adjacency, h)?;
            let pre = layer.inner.forward(g, p, msg)?;
            let act = g.elu(pre)?;
            let upd = layer.outer.forward(g, p, act)?;
            let sum = g.add(h, upd)?;
            h = g.elu(sum)?;
        }
        Ok(h)
    }

    /// `y_n = MLP([h_n ; c])`, with `c` replaced by zeros when context is disabled.
    pub fn contextualize<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, h: NodeId, context: NodeId) -> Result<NodeId> {
        let n = g.shape(h)[0];
        let c = if self.config.context_enabled {
            context
        } else {
            g.constant(Tensor::zeros(&[1, self.context_width]))
        };
        if g.shape(c) != [1, self.context_width] {
            return Err(Error::shape("contextualize", g.shape(c), &[1, self.context_width]));
        }
        let cb = g.broadcast_rows(c, n)?;
        let cat = g.concat(&[h, cb], 1)?;
        self.context_mlp.forward(g, p, cat)
    }

    /// Full unit: `x [N, T, d]`, row-major `N x T` mask, context `[1, d_c]`, query `[1, d]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: NodeId,
        mask: &[bool],
        context: NodeId,
        q: NodeId,
        identities: &[usize],
    ) -> Result<OstrOutput> {
        let n = g.shape(x)[0];
        if identities.len() != n {
            return Err(Error::shape("ostr_forward", &[n], &[identities.len()]));
        }
        let (z, beta) = self.summarize(g, p, x, mask, q)?;
        let (h, relevance, adjacency) = if self.config.interaction_enabled {
            let (a, adj) = self.build_adjacency(g, p, z, q)?;
            (self.gcn_refine(g, p, z, adj)?, Some(a), Some(adj))
        } else {
            (z, None, None)
        };
        let y = self.contextualize(g, p, h, context)?;
        Ok(OstrOutput {
            y,
            z,
            h,
            beta,
            relevance,
            adjacency,
            identities: identities.to_vec(),
        })
    }
}

/// Host-side result of a unit: output rows and the identities they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectSet<T> {
    pub features: Tensor<T>,
    pub identities: Vec<usize>,
}

impl<T: Scalar> ObjectSet<T> {
    pub fn from_output(g: &Graph<T>, out: &OstrOutput) -> Self {
        Self {
            features: g.value(out.y).clone(),
            identities: out.identities.clone(),
        }
    }
}
