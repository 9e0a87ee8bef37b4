//! The two-level network: clip-level units with shared parameters, identity
//! chaining into a video-level unit, query-driven pooling and answer heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{ObjectEncoder, QueryEncoding, QuestionEncoder, RawVideo, VideoRepresentation};
use crate::error::{Error, Result};
use crate::nn::{Bound, Linear, Mlp2, ParamStore};
use crate::ostr::{OstrConfig, OstrOutput, OstrUnit, TemporalAttention, TemporalMode};
use crate::scalar::Scalar;
use crate::tensor::{Graph, NodeId, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelMode {
    Ostr,
    MeanPool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextSource {
    FrameAppearance,
    /// Motion features join the context at the video level only.
    FrameAppearanceMotion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    OpenEnded,
    MultipleChoice,
    Count,
}

impl Task {
    pub fn is_count(self) -> bool {
        self == Task::Count
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HostrConfig {
    pub d: usize,
    pub d_app: usize,
    pub d_g: usize,
    #[serde(default)]
    pub d_motion: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
    pub max_question_len: usize,
    /// Number of clips `K`.
    pub clips: usize,
    /// Frames per clip `T`.
    pub clip_len: usize,
    /// Fixed clip stride in frames; `None` spreads clips evenly over the video.
    #[serde(default)]
    pub stride: Option<f64>,
    pub clip_level: LevelMode,
    pub video_level: LevelMode,
    pub clip_ostr: OstrConfig,
    pub video_ostr: OstrConfig,
    pub context_source: ContextSource,
    pub task: Task,
    /// Classes for classification tasks; ignored for counting.
    pub num_answers: usize,
    pub count_min: i64,
    pub count_max: i64,
}

impl Default for HostrConfig {
    /// Desk-scale widths with the reference architecture: six GCN layers,
    /// attention at the clip level and a BiLSTM at the video level.
    fn default() -> Self {
        let d = 16;
        Self {
            d,
            d_app: 32,
            d_g: 32,
            d_motion: 0,
            embed_dim: 300,
            vocab_size: 64,
            max_question_len: 16,
            clips: 10,
            clip_len: 10,
            stride: None,
            clip_level: LevelMode::Ostr,
            video_level: LevelMode::Ostr,
            clip_ostr: OstrConfig::new(d, 6, TemporalMode::Attention),
            video_ostr: OstrConfig::new(d, 6, TemporalMode::BilstmAttention),
            context_source: ContextSource::FrameAppearance,
            task: Task::OpenEnded,
            num_answers: 12,
            count_min: 1,
            count_max: 10,
        }
    }
}

impl HostrConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.clips == 0 || self.clip_len == 0 {
            return bad(format!("K={} and T={} must be >= 1", self.clips, self.clip_len));
        }
        if self.d == 0 || self.d % 2 != 0 {
            return bad(format!("d={} must be even and positive", self.d));
        }
        if self.clip_ostr.d != self.d || self.video_ostr.d != self.d {
            return bad("unit widths must equal d".into());
        }
        if !self.task.is_count() && self.num_answers < 2 {
            return bad(format!("classification needs >= 2 answers, got {}", self.num_answers));
        }
        if self.task.is_count() && self.count_min > self.count_max {
            return bad(format!("count range [{}, {}] is empty", self.count_min, self.count_max));
        }
        if self.context_source == ContextSource::FrameAppearanceMotion && self.d_motion == 0 {
            return bad("motion context needs d_motion > 0".into());
        }
        if let Some(s) = self.stride {
            if !(s >= 0.0) {
                return bad(format!("stride {s} must be non-negative"));
            }
        }
        self.clip_ostr.validate()?;
        self.video_ostr.validate()
    }

    fn video_context_width(&self) -> usize {
        match self.context_source {
            ContextSource::FrameAppearance => self.d_g,
            ContextSource::FrameAppearanceMotion => self.d_g + self.d_motion,
        }
    }

    /// Number of levels that use a reasoning unit.
    pub fn unit_levels(&self) -> usize {
        [self.clip_level, self.video_level].iter().filter(|&&m| m == LevelMode::Ostr).count()
    }
}

/// Frame window of one clip: `[start, start + len)`, clipped to the video.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRange {
    pub start: usize,
    /// Frames inside the video; the rest of the clip is padding.
    pub valid: usize,
}

/// Start of clip `k` is `round(k * stride)` with `stride = (L - T) / (K - 1)`
/// (or the configured stride), so the last clip ends on the last frame.
pub fn clip_ranges(num_frames: usize, clips: usize, clip_len: usize, stride: Option<f64>) -> Vec<ClipRange> {
    let stride = match stride {
        Some(s) => s,
        None if clips > 1 && num_frames >= clip_len => (num_frames - clip_len) as f64 / (clips - 1) as f64,
        None => 0.0,
    };
    (0..clips)
        .map(|k| {
            let start = ((k as f64) * stride).round() as usize;
            let start = start.min(num_frames.saturating_sub(1));
            ClipRange {
                start,
                valid: clip_len.min(num_frames - start),
            }
        })
        .collect()
}

/// Splits `[N, L, d]` sequences (and their `N x L` mask) into `K` chunks of
/// `[N, T, d]`; frames past the end are zero with a false mask.
pub fn split_clips<T: Scalar>(objects: &Tensor<T>, mask: &[bool], clips: usize, clip_len: usize) -> Result<Vec<(Tensor<T>, Vec<bool>)>> {
    let s = objects.shape();
    if s.len() != 3 || mask.len() != s[0] * s[1] || s[1] == 0 {
        return Err(Error::shape("split_clips", s, &[mask.len()]));
    }
    let (n, l, d) = (s[0], s[1], s[2]);
    let src = objects.data();
    Ok(clip_ranges(l, clips, clip_len, None)
        .into_iter()
        .map(|r| {
            let mut data = vec![T::zero(); n * clip_len * d];
            let mut m = vec![false; n * clip_len];
            for i in 0..n {
                for t in 0..r.valid {
                    let from = (i * l + r.start + t) * d;
                    let to = (i * clip_len + t) * d;
                    data[to..to + d].copy_from_slice(&src[from..from + d]);
                    m[i * clip_len + t] = mask[i * l + r.start + t];
                }
            }
            (Tensor::new(vec![n, clip_len, d], data).expect("clip shape"), m)
        })
        .collect())
}

/// `delta_n = softmax_n(MLP[W_y y_n ; W_y y_n * W_c q])`, `r = sum_n delta_n y_n`.
#[derive(Clone, Debug)]
pub struct FinalPool {
    pub object: Linear,
    pub query: Linear,
    pub mlp: Mlp2,
}

impl FinalPool {
    /// Returns `(delta [N, 1], r [1, d])`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, y: NodeId, q: NodeId) -> Result<(NodeId, NodeId)> {
        let n = g.shape(y)[0];
        let wy = self.object.forward(g, p, y)?;
        let wq = self.query.forward(g, p, q)?;
        let wq = g.broadcast_rows(wq, n)?;
        let prod = g.mul(wy, wq)?;
        let cat = g.concat(&[wy, prod], 1)?;
        let logits = self.mlp.forward(g, p, cat)?;
        let delta = g.softmax(logits, 0, None)?;
        let dt = g.transpose(delta)?;
        let r = g.matmul(dt, y)?;
        Ok((delta, r))
    }
}

/// `z = elu(W_r [r ; W_q q + b_q] + b_r)`, then `W_z z + b_z` as class logits
/// or, for counting, a single regression output.
#[derive(Clone, Debug)]
pub struct AnswerHead {
    pub task: Task,
    pub question: Linear,
    pub fuse: Linear,
    pub out: Linear,
}

impl AnswerHead {
    /// Returns the pre-softmax logits `[1, |A|]` (or `[1, 1]` for counts).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, r: NodeId, q: NodeId) -> Result<NodeId> {
        let qq = self.question.forward(g, p, q)?;
        let cat = g.concat(&[r, qq], 1)?;
        let z = self.fuse.forward(g, p, cat)?;
        let z = g.elu(z)?;
        self.out.forward(g, p, z)
    }
}

/// Probabilities over answers from head logits.
pub fn decode_classify<T: Scalar>(g: &mut Graph<T>, logits: NodeId) -> Result<NodeId> {
    g.softmax(logits, 1, None)
}

/// Rounds half away from zero and clamps into `[min, max]`.
pub fn decode_count(value: f64, min: i64, max: i64) -> i64 {
    (value.round() as i64).clamp(min, max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Class(usize),
    Count(f64),
}

/// Cross-entropy on class logits, squared error on the un-rounded count.
pub fn loss<T: Scalar>(g: &mut Graph<T>, output: NodeId, target: Target) -> Result<NodeId> {
    match target {
        Target::Class(c) => g.cross_entropy(output, c),
        Target::Count(c) => {
            let t = g.constant(Tensor::full(g.shape(output), T::of(c)));
            let diff = g.sub(output, t)?;
            let sq = g.mul(diff, diff)?;
            g.sum(sq)
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClipTrace {
    pub range: ClipRange,
    /// `c_k` `[1, d_g]`.
    pub context: NodeId,
    /// Attention over the clip's frames `[1, T]`.
    pub context_attention: NodeId,
    pub unit: Option<OstrOutput>,
    /// `[N, d]`
    pub y: NodeId,
    pub mask: Vec<bool>,
}

/// Every intermediate of one forward pass.
#[derive(Clone, Debug)]
pub struct HostrTrace {
    pub video: VideoRepresentation,
    pub query: QueryEncoding,
    pub clips: Vec<ClipTrace>,
    /// `c^vid` `[1, d_c]`.
    pub video_context: NodeId,
    /// Attention over clip contexts `[1, K]`.
    pub video_context_attention: NodeId,
    pub video_unit: Option<OstrOutput>,
    /// `Y^vid` `[N, d]`.
    pub y_video: NodeId,
    /// `[N, 1]`
    pub delta: NodeId,
    /// `[1, d]`
    pub r: NodeId,
    /// Head output: logits `[1, |A|]` or count `[1, 1]`.
    pub output: NodeId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Prediction {
    Class { label: usize, probs: Vec<f64> },
    Count { value: f64, rounded: i64 },
}

#[derive(Clone, Debug)]
pub struct HostrModel<T> {
    pub config: HostrConfig,
    pub params: ParamStore<T>,
    pub object_encoder: ObjectEncoder,
    pub question_encoder: QuestionEncoder,
    pub clip_context: TemporalAttention,
    pub video_context: TemporalAttention,
    pub clip_unit: Option<OstrUnit>,
    pub video_unit: Option<OstrUnit>,
    pub pool: FinalPool,
    pub head: AnswerHead,
}

impl<T: Scalar> HostrModel<T> {
    /// Glorot-initialized model; identical seeds give identical parameters.
    pub fn new(config: HostrConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut ps = ParamStore::new();
        let d = config.d;
        let object_encoder = ObjectEncoder::new(&mut ps, rng, config.d_app, d);
        let question_encoder = QuestionEncoder::new(&mut ps, rng, config.vocab_size, config.embed_dim, d, config.max_question_len)?;
        let clip_context = TemporalAttention::new(&mut ps, rng, "context.clip", config.d_g, d);
        let video_context = TemporalAttention::new(&mut ps, rng, "context.video", config.video_context_width(), d);
        let clip_unit = match config.clip_level {
            LevelMode::Ostr => Some(OstrUnit::new(&mut ps, rng, "clip", config.clip_ostr.clone(), d, config.d_g)?),
            LevelMode::MeanPool => None,
        };
        let video_unit = match config.video_level {
            LevelMode::Ostr => Some(OstrUnit::new(&mut ps, rng, "video", config.video_ostr.clone(), d, config.video_context_width())?),
            LevelMode::MeanPool => None,
        };
        let pool = FinalPool {
            object: Linear::no_bias(&mut ps, rng, "pool.object", d, d),
            query: Linear::no_bias(&mut ps, rng, "pool.query", d, d),
            mlp: Mlp2::new(&mut ps, rng, "pool.mlp", 2 * d, d, 1),
        };
        let outputs = if config.task.is_count() { 1 } else { config.num_answers };
        let head = AnswerHead {
            task: config.task,
            question: Linear::new(&mut ps, rng, "head.question", d, d),
            fuse: Linear::new(&mut ps, rng, "head.fuse", 2 * d, d),
            out: Linear::new(&mut ps, rng, "head.out", d, outputs),
        };
        Ok(Self {
            config,
            params: ps,
            object_encoder,
            question_encoder,
            clip_context,
            video_context,
            clip_unit,
            video_unit,
            pool,
            head,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Records the full forward pass on `g` using parameters bound as `p`.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, raw: &RawVideo, tokens: &[usize]) -> Result<HostrTrace> {
        let cfg = &self.config;
        if cfg.context_source == ContextSource::FrameAppearanceMotion && raw.motion_features.is_none() {
            return Err(Error::InvalidInput("motion context configured but the video has no motion features".into()));
        }
        let video = self.object_encoder.build_video_representation(g, p, raw)?;
        if g.shape(video.frames)[1] != cfg.d_g {
            return Err(Error::shape("frame_features", g.shape(video.frames), &[video.num_frames, cfg.d_g]));
        }
        let query = self.question_encoder.encode(g, p, tokens)?;
        let q = query.query;
        let (n, l, d, tl) = (video.num_objects, video.num_frames, cfg.d, cfg.clip_len);

        let ranges = clip_ranges(l, cfg.clips, tl, cfg.stride);
        let mut clips = Vec::with_capacity(ranges.len());
        let mut chained = Vec::with_capacity(ranges.len());
        let mut video_mask = vec![false; n * ranges.len()];
        let mut context_rows = Vec::with_capacity(ranges.len());
        for (k, range) in ranges.iter().enumerate() {
            let (x, mask) = chunk(g, video.objects, &video.mask, n, l, d, *range, tl)?;
            let frames3 = g.reshape(video.frames, &[1, l, cfg.d_g])?;
            let frame_mask: Vec<bool> = (0..l).map(|_| true).collect();
            let (gk, gmask) = chunk(g, frames3, &frame_mask, 1, l, cfg.d_g, *range, tl)?;
            let (ck, gamma) = self.clip_context.forward(g, p, gk, &gmask, q)?;

            let (unit, y) = match &self.clip_unit {
                Some(unit) => {
                    let out = unit.forward(g, p, x, &mask, ck, q, &video.identities)?;
                    let y = out.y;
                    (Some(out), y)
                }
                None => (None, masked_mean(g, x, &mask, n, tl)?),
            };
            for i in 0..n {
                video_mask[i * ranges.len() + k] = mask[i * tl..(i + 1) * tl].iter().any(|&m| m);
            }
            chained.push(g.reshape(y, &[n, 1, d])?);

            let row = match (cfg.context_source, video.motion) {
                (ContextSource::FrameAppearanceMotion, Some(motion)) => {
                    let dm = g.shape(motion)[1];
                    let m3 = g.reshape(motion, &[1, l, dm])?;
                    let (mk, mmask) = chunk(g, m3, &frame_mask, 1, l, dm, *range, tl)?;
                    let mbar = masked_mean(g, mk, &mmask, 1, tl)?;
                    g.concat(&[ck, mbar], 1)?
                }
                _ => ck,
            };
            context_rows.push(row);
            clips.push(ClipTrace {
                range: *range,
                context: ck,
                context_attention: gamma,
                unit,
                y,
                mask,
            });
        }

        let kk = ranges.len();
        let ctx = g.concat(&context_rows, 0)?;
        let dc = g.shape(ctx)[1];
        let ctx = g.reshape(ctx, &[1, kk, dc])?;
        let (video_context, video_context_attention) = self.video_context.forward(g, p, ctx, &vec![true; kk], q)?;

        let y_clip = g.concat(&chained, 1)?;
        let (video_unit, y_video) = match &self.video_unit {
            Some(unit) => {
                let out = unit.forward(g, p, y_clip, &video_mask, video_context, q, &video.identities)?;
                let y = out.y;
                (Some(out), y)
            }
            None => (None, masked_mean(g, y_clip, &video_mask, n, kk)?),
        };
        let (delta, r) = self.pool.forward(g, p, y_video, q)?;
        let output = self.head.forward(g, p, r, q)?;
        Ok(HostrTrace {
            video,
            query,
            clips,
            video_context,
            video_context_attention,
            video_unit,
            y_video,
            delta,
            r,
            output,
        })
    }

    /// Forward pass plus loss against `target`. Returns `(trace, loss)`.
    pub fn forward_loss(&self, g: &mut Graph<T>, p: &Bound, raw: &RawVideo, tokens: &[usize], target: Target) -> Result<(HostrTrace, NodeId)> {
        match (self.config.task.is_count(), target) {
            (true, Target::Count(_)) => {}
            (false, Target::Class(c)) if c < self.config.num_answers => {}
            (false, Target::Class(c)) => {
                return Err(Error::TargetOutOfRange {
                    target: c,
                    classes: self.config.num_answers,
                })
            }
            _ => return Err(Error::ConfigMismatch(format!("target {target:?} does not fit task {:?}", self.config.task))),
        }
        let trace = self.forward(g, p, raw, tokens)?;
        let l = loss(g, trace.output, target)?;
        Ok((trace, l))
    }

    /// Evaluates without recording gradients.
    pub fn predict(&self, raw: &RawVideo, tokens: &[usize]) -> Result<Prediction> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let trace = self.forward(&mut g, &p, raw, tokens)?;
        self.prediction(&mut g, &trace)
    }

    pub fn prediction(&self, g: &mut Graph<T>, trace: &HostrTrace) -> Result<Prediction> {
        if self.config.task.is_count() {
            let value = g.value(trace.output).data()[0].as_f64();
            Ok(Prediction::Count {
                value,
                rounded: decode_count(value, self.config.count_min, self.config.count_max),
            })
        } else {
            let probs = decode_classify(g, trace.output)?;
            let probs = g.value(probs).to_f64();
            let label = argmax(&probs);
            Ok(Prediction::Class { label, probs })
        }
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Extracts clip `range` of `[N, L, w]` as `[N, T, w]` with padding, plus its mask.
#[allow(clippy::too_many_arguments)]
fn chunk<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    mask: &[bool],
    n: usize,
    l: usize,
    w: usize,
    range: ClipRange,
    clip_len: usize,
) -> Result<(NodeId, Vec<bool>)> {
    let mut part = g.narrow(x, 1, range.start, range.valid)?;
    if range.valid < clip_len {
        let pad = g.constant(Tensor::zeros(&[n, clip_len - range.valid, w]));
        part = g.concat(&[part, pad], 1)?;
    }
    let mut m = vec![false; n * clip_len];
    for i in 0..n {
        for t in 0..range.valid {
            m[i * clip_len + t] = mask[i * l + range.start + t];
        }
    }
    Ok((part, m))
}

/// Masked average over axis 1 of `[N, T, w]`, giving `[N, w]`; rows without a
/// valid step are zero.
pub fn masked_mean<T: Scalar>(g: &mut Graph<T>, x: NodeId, mask: &[bool], n: usize, t: usize) -> Result<NodeId> {
    let w = g.shape(x)[2];
    let mut weights = vec![T::zero(); n * t];
    for i in 0..n {
        let row = &mask[i * t..(i + 1) * t];
        let cnt = row.iter().filter(|&&m| m).count();
        if cnt > 0 {
            let share = T::one() / T::of(cnt as f64);
            for (k, &m) in row.iter().enumerate() {
                if m {
                    weights[i * t + k] = share;
                }
            }
        }
    }
    let wts = g.constant(Tensor::new(vec![n, 1, t], weights)?);
    let out = g.batch_matmul(wts, x)?;
    g.reshape(out, &[n, w])
}
