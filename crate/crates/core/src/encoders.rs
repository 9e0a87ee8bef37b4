//! Input representations: joint what/where object features, frame context
//! and the query encoding.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BiLstm, Bound, Linear, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Graph, NodeId, Tensor};

pub const POSITION_DIM: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSize {
    pub width: f64,
    pub height: f64,
}

/// `[x_min/W, y_min/H, x_max/W, y_max/H, w/W, h/H, wh/WH]`
pub fn positional_features(b: &BBox, frame: FrameSize) -> Result<[f64; POSITION_DIM]> {
    let FrameSize { width, height } = frame;
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::InvalidInput(format!("frame size {width}x{height}")));
    }
    let inside = 0.0 <= b.x_min && b.x_min <= b.x_max && b.x_max <= width && 0.0 <= b.y_min && b.y_min <= b.y_max && b.y_max <= height;
    if !inside {
        return Err(Error::InvalidInput(format!("box {b:?} is inverted or outside a {width}x{height} frame")));
    }
    let w = b.x_max - b.x_min;
    let h = b.y_max - b.y_min;
    Ok([
        b.x_min / width,
        b.y_min / height,
        b.x_max / width,
        b.y_max / height,
        w / width,
        h / height,
        (w * h) / (width * height),
    ])
}

/// One tracked object over all `L` frames. Frames with `valid[t] == false`
/// are missed detections; their boxes and appearance are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawObjectTrack {
    pub identity: usize,
    pub boxes: Vec<BBox>,
    pub valid: Vec<bool>,
    pub appearance: Vec<Vec<f64>>,
}

impl RawObjectTrack {
    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }
}

/// Raw inputs of one video: tracks plus per-frame global features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawVideo {
    pub frame: FrameSize,
    pub tracks: Vec<RawObjectTrack>,
    pub frame_features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion_features: Option<Vec<Vec<f64>>>,
}

impl RawVideo {
    pub fn num_frames(&self) -> usize {
        self.frame_features.len()
    }
}

/// Encoded video on a graph: `objects` is `[N, L, d]`, `frames` is `[L, d_g]`.
#[derive(Clone, Debug)]
pub struct VideoRepresentation {
    pub objects: NodeId,
    /// Row-major `N x L` validity.
    pub mask: Vec<bool>,
    pub frames: NodeId,
    pub motion: Option<NodeId>,
    pub identities: Vec<usize>,
    pub num_objects: usize,
    pub num_frames: usize,
}

/// `tanh(W_a o^a + b_a) * sigmoid(W_p o^p + b_p)`
#[derive(Clone, Debug)]
pub struct ObjectEncoder {
    pub appearance: Linear,
    pub position: Linear,
}

impl ObjectEncoder {
    pub fn new<T: Scalar, R: Rng>(ps: &mut ParamStore<T>, rng: &mut R, d_app: usize, d: usize) -> Self {
        Self {
            appearance: Linear::new(ps, rng, "object.appearance", d_app, d),
            position: Linear::new(ps, rng, "object.position", POSITION_DIM, d),
        }
    }

    /// Encodes rows of appearance `[M, d_app]` and position `[M, 7]`.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, appearance: NodeId, position: NodeId) -> Result<NodeId> {
        let what = self.appearance.forward(g, p, appearance)?;
        let what = g.tanh(what)?;
        let gate = self.position.forward(g, p, position)?;
        let gate = g.sigmoid(gate)?;
        g.mul(what, gate)
    }

    pub fn build_video_representation<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, raw: &RawVideo) -> Result<VideoRepresentation> {
        let n = raw.tracks.len();
        let len = raw.num_frames();
        if n == 0 || len == 0 {
            return Err(Error::InvalidInput(format!("video needs at least one object and frame, got N={n}, L={len}")));
        }
        let d_app = self.appearance.fan_in;
        let d = self.appearance.fan_out;
        let mut seen = HashSet::new();
        let mut app = Vec::with_capacity(n * len * d_app);
        let mut pos = Vec::with_capacity(n * len * POSITION_DIM);
        let mut mask = Vec::with_capacity(n * len);
        for tr in &raw.tracks {
            if !seen.insert(tr.identity) {
                return Err(Error::InvalidInput(format!("duplicate object identity {}", tr.identity)));
            }
            if tr.valid.len() != len || tr.boxes.len() != len || tr.appearance.len() != len {
                return Err(Error::InvalidInput(format!(
                    "track {} spans {} frames, video has {len}",
                    tr.identity,
                    tr.valid.len()
                )));
            }
            for t in 0..len {
                if tr.valid[t] {
                    if tr.appearance[t].len() != d_app {
                        return Err(Error::shape("build_video_representation", &[d_app], &[tr.appearance[t].len()]));
                    }
                    app.extend(tr.appearance[t].iter().map(|&v| T::of(v)));
                    pos.extend(positional_features(&tr.boxes[t], raw.frame)?.iter().map(|&v| T::of(v)));
                } else {
                    app.extend(std::iter::repeat(T::zero()).take(d_app));
                    pos.extend(std::iter::repeat(T::zero()).take(POSITION_DIM));
                }
                mask.push(tr.valid[t]);
            }
        }
        let app = g.constant(Tensor::new(vec![n * len, d_app], app)?);
        let pos = g.constant(Tensor::new(vec![n * len, POSITION_DIM], pos)?);
        let enc = self.encode(g, p, app, pos)?;
        let keep: Vec<T> = mask
            .iter()
            .flat_map(|&m| std::iter::repeat(if m { T::one() } else { T::zero() }).take(d))
            .collect();
        let keep = g.constant(Tensor::new(vec![n * len, d], keep)?);
        let enc = g.mul(enc, keep)?;
        let objects = g.reshape(enc, &[n, len, d])?;

        let frames = g.constant(matrix(&raw.frame_features, "frame_features", len)?);
        let motion = match &raw.motion_features {
            Some(m) => Some(g.constant(matrix(m, "motion_features", len)?)),
            None => None,
        };
        Ok(VideoRepresentation {
            objects,
            mask,
            frames,
            motion,
            identities: raw.tracks.iter().map(|t| t.identity).collect(),
            num_objects: n,
            num_frames: len,
        })
    }
}

fn matrix<T: Scalar>(rows: &[Vec<f64>], what: &str, len: usize) -> Result<Tensor<T>> {
    if rows.len() != len {
        return Err(Error::InvalidInput(format!("{what} has {} rows, video has {len} frames", rows.len())));
    }
    let cols = rows[0].len();
    let mut data = Vec::with_capacity(len * cols);
    for r in rows {
        if r.len() != cols {
            return Err(Error::InvalidInput(format!("{what} rows have unequal widths")));
        }
        data.extend(r.iter().map(|&v| T::of(v)));
    }
    Tensor::new(vec![len, cols], data)
}

/// Query encoding on a graph.
#[derive(Clone, Debug)]
pub struct QueryEncoding {
    /// Contextual word states `[S, d]`.
    pub states: NodeId,
    /// Global state `[1, d]`.
    pub global: NodeId,
    /// Word attention `[S, 1]`.
    pub alpha: NodeId,
    /// Pooled query `[1, d]`.
    pub query: NodeId,
}

/// Embedding table, BiLSTM with `d/2` units per direction and word attention.
#[derive(Clone, Debug)]
pub struct QuestionEncoder {
    pub embedding: ParamId,
    pub lstm: BiLstm,
    pub attention: Linear,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl QuestionEncoder {
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamStore<T>,
        rng: &mut R,
        vocab_size: usize,
        embed_dim: usize,
        d: usize,
        max_len: usize,
    ) -> Result<Self> {
        if d % 2 != 0 || d == 0 {
            return Err(Error::InvalidInput(format!("model width d={d} must be even")));
        }
        let embedding = ps.xavier(rng, "question.embedding", vocab_size, embed_dim);
        Ok(Self {
            embedding,
            lstm: BiLstm::new(ps, rng, "question.lstm", embed_dim, d / 2),
            attention: Linear::no_bias(ps, rng, "question.attention", d, 1),
            vocab_size,
            max_len,
        })
    }

    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, tokens: &[usize]) -> Result<QueryEncoding> {
        let s = tokens.len();
        if s == 0 || s > self.max_len {
            return Err(Error::InvalidInput(format!("question length {s} outside 1..={}", self.max_len)));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::UnknownToken(bad));
        }
        let emb = g.embedding(p[self.embedding], tokens)?;
        let steps = (0..s).map(|t| g.narrow(emb, 0, t, 1)).collect::<Result<Vec<_>>>()?;
        let st = self.lstm.run(g, p, &steps)?;
        let rows = (0..s)
            .map(|t| g.concat(&[st.forward[t], st.backward[t]], 1))
            .collect::<Result<Vec<_>>>()?;
        let states = g.concat(&rows, 0)?;
        let global = g.concat(&[st.backward[0], st.forward[s - 1]], 1)?;
        let (alpha, query) = attention_pool(g, p, &self.attention, states, global)?;
        Ok(QueryEncoding {
            states,
            global,
            alpha,
            query,
        })
    }

    /// Overwrites embedding rows of words found in `vectors`; returns how many rows were set.
    pub fn apply_pretrained<T: Scalar>(&self, ps: &mut ParamStore<T>, vocab: &[String], vectors: &HashMap<String, Vec<f64>>) -> Result<usize> {
        let table = ps.get_mut(self.embedding);
        let e = table.shape()[1];
        let mut hits = 0;
        for (id, word) in vocab.iter().enumerate().take(self.vocab_size) {
            if let Some(v) = vectors.get(word) {
                if v.len() != e {
                    return Err(Error::shape("apply_pretrained", &[e], &[v.len()]));
                }
                for (dst, &src) in table.data_mut()[id * e..(id + 1) * e].iter_mut().zip(v) {
                    *dst = T::of(src);
                }
                hits += 1;
            }
        }
        Ok(hits)
    }
}

/// `alpha = softmax_s(W (e_s * q_g))`, `q = sum_s alpha_s e_s`. Returns `(alpha [S,1], q [1,d])`.
pub fn attention_pool<T: Scalar>(g: &mut Graph<T>, p: &Bound, w: &Linear, states: NodeId, global: NodeId) -> Result<(NodeId, NodeId)> {
    let s = g.shape(states)[0];
    let gl = g.broadcast_rows(global, s)?;
    let mixed = g.mul(states, gl)?;
    let logits = w.forward(g, p, mixed)?;
    let alpha = g.softmax(logits, 0, None)?;
    let at = g.transpose(alpha)?;
    let query = g.matmul(at, states)?;
    Ok((alpha, query))
}

/// Reads `word v1 v2 ... vE` lines.
pub fn read_embedding_file<R: BufRead>(reader: R) -> Result<HashMap<String, Vec<f64>>> {
    let mut out = HashMap::new();
    let mut width = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let v = parts
            .map(|x| x.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        if *width.get_or_insert(v.len()) != v.len() {
            return Err(Error::Format(format!("line {}: expected {} values, got {}", lineno + 1, width.unwrap_or(0), v.len())));
        }
        out.insert(word.to_string(), v);
    }
    Ok(out)
}
