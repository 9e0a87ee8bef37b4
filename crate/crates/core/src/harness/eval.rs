use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{decode_count, HostrConfig, HostrModel, Prediction, Task};
use crate::scalar::Scalar;
use crate::synth::{Answer, Episode, Manifest, TaskTemplate};

/// Environment variable holding the evaluation pool size.
pub const THREADS_ENV: &str = "HOSTR_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Accuracy,
    Mse,
}

impl MetricKind {
    pub fn for_task(task: Task) -> Self {
        if task.is_count() {
            MetricKind::Mse
        } else {
            MetricKind::Accuracy
        }
    }

    /// Whether `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            MetricKind::Accuracy => a > b,
            MetricKind::Mse => a < b,
        }
    }

    pub fn worst(self) -> f64 {
        match self {
            MetricKind::Accuracy => f64::NEG_INFINITY,
            MetricKind::Mse => f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub kind: MetricKind,
    /// Accuracy for classification, MSE of un-rounded predictions for counts.
    pub metric: f64,
    /// Exact-match accuracy; for counts, of the rounded prediction.
    pub accuracy: f64,
    pub episodes: usize,
}

/// Worker pool for evaluation, sized by `HOSTR_THREADS` (default: rayon's choice).
pub fn eval_pool() -> &'static ThreadPool {
    static POOL: OnceLock<ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(0);
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("evaluation thread pool")
    })
}

/// Predictions in episode order; forward passes run on the evaluation pool
/// with read-only parameters.
pub fn predict_all<T: Scalar>(model: &HostrModel<T>, episodes: &[Episode]) -> Result<Vec<Prediction>> {
    eval_pool().install(|| episodes.par_iter().map(|e| model.predict(&e.video, &e.question)).collect())
}

/// Scores predictions against the stored answers. Sums run in episode order,
/// so the result does not depend on how predictions were computed.
pub fn score(config: &HostrConfig, episodes: &[Episode], predictions: &[Prediction]) -> Result<Evaluation> {
    if episodes.len() != predictions.len() {
        return Err(Error::shape("score", &[episodes.len()], &[predictions.len()]));
    }
    let n = episodes.len().max(1) as f64;
    let kind = MetricKind::for_task(config.task);
    let mut hits = 0usize;
    let mut sq = 0.0;
    for (e, p) in episodes.iter().zip(predictions) {
        match (e.answer, p) {
            (Answer::Label(l), Prediction::Class { label, .. }) => hits += usize::from(*label == l),
            (Answer::Count(c), Prediction::Count { value, .. }) => {
                let rounded = decode_count(*value, config.count_min, config.count_max);
                hits += usize::from(rounded == c as i64);
                sq += (value - c as f64).powi(2);
            }
            (a, p) => return Err(Error::ConfigMismatch(format!("episode {}: answer {a:?} vs prediction {p:?}", e.video_id))),
        }
    }
    let accuracy = hits as f64 / n;
    Ok(Evaluation {
        kind,
        metric: match kind {
            MetricKind::Accuracy => accuracy,
            MetricKind::Mse => sq / n,
        },
        accuracy,
        episodes: episodes.len(),
    })
}

pub fn evaluate<T: Scalar>(model: &HostrModel<T>, episodes: &[Episode]) -> Result<Evaluation> {
    let preds = predict_all(model, episodes)?;
    score(&model.config, episodes, &preds)
}

/// The most frequent class label (smallest on ties) predicted for every episode.
pub fn majority_predictions(episodes: &[Episode]) -> Vec<Prediction> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for e in episodes {
        if let Answer::Label(l) = e.answer {
            *counts.entry(l).or_insert(0) += 1;
        }
    }
    let label = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map_or(0, |(&l, _)| l);
    vec![Prediction::Class { label, probs: Vec::new() }; episodes.len()]
}

/// The mean count predicted for every episode.
pub fn mean_predictions(episodes: &[Episode], min: i64, max: i64) -> Vec<Prediction> {
    let counts: Vec<f64> = episodes
        .iter()
        .filter_map(|e| match e.answer {
            Answer::Count(c) => Some(c as f64),
            _ => None,
        })
        .collect();
    let value = counts.iter().sum::<f64>() / counts.len().max(1) as f64;
    vec![
        Prediction::Count {
            value,
            rounded: decode_count(value, min, max),
        };
        episodes.len()
    ]
}

/// Permutes answers across episodes, keeping their marginal distribution
/// but destroying any link to the video.
pub fn shuffle_labels(episodes: &mut [Episode], seed: u64) {
    let mut answers: Vec<Answer> = episodes.iter().map(|e| e.answer).collect();
    answers.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for (e, a) in episodes.iter_mut().zip(answers) {
        e.answer = a;
    }
}

/// Checks that a model configuration can consume a corpus: task kind,
/// feature widths, vocabulary and answer ranges.
pub fn check_compatible(config: &HostrConfig, manifest: &Manifest, episodes: &[&Episode]) -> Result<()> {
    let bad = |m: String| Err(Error::ConfigMismatch(m));
    let is_count = manifest.template == TaskTemplate::Count;
    if config.task.is_count() != is_count {
        return bad(format!("model task {:?} cannot answer the {} template", config.task, manifest.template));
    }
    if config.vocab_size < manifest.vocabulary.len() {
        return bad(format!("vocab_size {} < corpus vocabulary {}", config.vocab_size, manifest.vocabulary.len()));
    }
    if !is_count && config.num_answers != manifest.answers.len() {
        return bad(format!("num_answers {} != corpus answers {}", config.num_answers, manifest.answers.len()));
    }
    if let Some([lo, hi]) = manifest.count_range {
        if lo < config.count_min || hi > config.count_max {
            return bad(format!("count range [{}, {}] does not cover corpus range [{lo}, {hi}]", config.count_min, config.count_max));
        }
    }
    let (w, motion) = (&manifest.world, manifest.world.motion_features);
    if config.d_app != w.d_app || config.d_g != w.d_g {
        return bad(format!("model d_app={} d_g={} vs corpus d_app={} d_g={}", config.d_app, config.d_g, w.d_app, w.d_g));
    }
    if config.context_source == crate::model::ContextSource::FrameAppearanceMotion && !motion {
        return bad("motion context configured but the corpus has no motion features".into());
    }
    for e in episodes {
        if e.question.len() > config.max_question_len {
            return bad(format!("episode {}: question of {} tokens exceeds {}", e.video_id, e.question.len(), config.max_question_len));
        }
        if let Answer::Label(l) = e.answer {
            if l >= config.num_answers {
                return bad(format!("episode {}: label {l} outside {} answers", e.video_id, config.num_answers));
            }
        }
    }
    Ok(())
}
