//! Corpus generation and the on-disk format: one JSON file per episode plus
//! a manifest with split counts, episode ids and vocabularies.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{answer_labels, generate_episode, moved_direction, question_vocabulary, Answer, Episode, Provenance, Query, TaskTemplate, WorldSpec};
use crate::encoders::{FrameSize, RawObjectTrack, RawVideo};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown split '{s}' (train, val, test)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            train: 4000,
            val: 500,
            test: 500,
        }
    }
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub template: TaskTemplate,
    pub world: WorldSpec,
    pub seed: u64,
    pub counts: SplitCounts,
    /// Question words indexed by token id.
    pub vocabulary: Vec<String>,
    /// Classification answers indexed by label.
    pub answers: Vec<String>,
    /// Inclusive range of count answers, for the COUNT template.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count_range: Option<[i64; 2]>,
    pub episodes: BTreeMap<Split, Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub manifest: Manifest,
    pub train: Vec<Episode>,
    pub val: Vec<Episode>,
    pub test: Vec<Episode>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Episode] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<Episode> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

/// Independent per-episode seed; episodes can be generated in any order.
pub fn episode_seed(seed: u64, split: Split, index: usize) -> u64 {
    let mut z = seed ^ ((split as u64 + 1) << 56) ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_corpus(world: &WorldSpec, template: TaskTemplate, counts: SplitCounts, seed: u64) -> Result<Corpus> {
    world.validate()?;
    let mut episodes = BTreeMap::new();
    let mut splits = Vec::new();
    for split in Split::ALL {
        let eps: Vec<Episode> = (0..counts.get(split))
            .into_par_iter()
            .map(|i| {
                let mut ep = generate_episode(world, template, episode_seed(seed, split, i))?;
                ep.video_id = format!("{template}-{split}-{i:05}");
                Ok(ep)
            })
            .collect::<Result<_>>()?;
        episodes.insert(split, eps.iter().map(|e| e.video_id.clone()).collect());
        splits.push(eps);
    }
    let test = splits.pop().expect("test");
    let val = splits.pop().expect("val");
    let train = splits.pop().expect("train");
    Ok(Corpus {
        manifest: Manifest {
            format_version: FORMAT_VERSION,
            template,
            world: world.clone(),
            seed,
            counts,
            vocabulary: question_vocabulary(),
            answers: answer_labels(),
            count_range: (template == TaskTemplate::Count).then_some([0, world.max_count as i64]),
            episodes,
        },
        train,
        val,
        test,
    })
}

/// Serialized form of one episode.
#[derive(Serialize, Deserialize)]
struct EpisodeFile {
    video_id: String,
    task: TaskTemplate,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "L")]
    l: usize,
    d_app: usize,
    d_g: usize,
    frame: FrameSize,
    objects: Vec<RawObjectTrack>,
    frame_features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    motion_features: Option<Vec<Vec<f64>>>,
    question: Vec<usize>,
    answer: Answer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

impl EpisodeFile {
    fn from_episode(ep: &Episode) -> Self {
        let v = &ep.video;
        let d_app = v
            .tracks
            .iter()
            .flat_map(|t| t.valid.iter().zip(&t.appearance).filter(|(m, _)| **m).map(|(_, a)| a.len()))
            .next()
            .unwrap_or(0);
        Self {
            video_id: ep.video_id.clone(),
            task: ep.task,
            n: v.tracks.len(),
            l: v.num_frames(),
            d_app,
            d_g: v.frame_features.first().map_or(0, |r| r.len()),
            frame: v.frame,
            objects: v.tracks.clone(),
            frame_features: v.frame_features.clone(),
            motion_features: v.motion_features.clone(),
            question: ep.question.clone(),
            answer: ep.answer,
            provenance: ep.provenance.clone(),
        }
    }

    fn into_episode(self) -> Result<Episode> {
        let bad = |m: String| Err(Error::Format(format!("episode {}: {m}", self.video_id)));
        if self.n == 0 || self.l == 0 || self.objects.len() != self.n {
            return bad(format!("N={} L={} with {} objects", self.n, self.l, self.objects.len()));
        }
        for o in &self.objects {
            if o.boxes.len() != self.l || o.valid.len() != self.l || o.appearance.len() != self.l {
                return bad(format!("object {} does not span L={} frames", o.identity, self.l));
            }
            if o.valid.iter().zip(&o.appearance).any(|(&m, a)| m && a.len() != self.d_app) {
                return bad(format!("object {} has appearance rows not of width d_app={}", o.identity, self.d_app));
            }
        }
        if self.frame_features.len() != self.l || self.frame_features.iter().any(|r| r.len() != self.d_g) {
            return bad(format!("frame_features must be {}x{}", self.l, self.d_g));
        }
        if let Some(m) = &self.motion_features {
            if m.len() != self.l {
                return bad(format!("motion_features must have {} rows", self.l));
            }
        }
        if matches!(self.answer, Answer::Count(_)) != (self.task == TaskTemplate::Count) {
            return bad(format!("answer {:?} does not fit task {}", self.answer, self.task));
        }
        Ok(Episode {
            video_id: self.video_id,
            task: self.task,
            video: RawVideo {
                frame: self.frame,
                tracks: self.objects,
                frame_features: self.frame_features,
                motion_features: self.motion_features,
            },
            question: self.question,
            answer: self.answer,
            provenance: self.provenance,
        })
    }
}

pub fn write_episode(ep: &Episode, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_vec(&EpisodeFile::from_episode(ep))?)?;
    Ok(())
}

pub fn read_episode(path: &Path) -> Result<Episode> {
    let file: EpisodeFile = serde_json::from_slice(&fs::read(path)?)?;
    file.into_episode()
}

/// Writes `dir/manifest.json` and `dir/<split>/<video_id>.json`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    for split in Split::ALL {
        let sub = dir.join(split.name());
        fs::create_dir_all(&sub)?;
        for ep in corpus.split(split) {
            write_episode(ep, &sub.join(format!("{}.json", ep.video_id)))?;
        }
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&corpus.manifest)?)?;
    Ok(())
}

/// Reads and validates a corpus written by [`write_corpus`].
pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("corpus format {} (expected {FORMAT_VERSION})", manifest.format_version)));
    }
    let mut corpus = Corpus {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        manifest,
    };
    for split in Split::ALL {
        let ids = corpus.manifest.episodes.get(&split).cloned().unwrap_or_default();
        if ids.len() != corpus.manifest.counts.get(split) {
            return Err(Error::Format(format!("manifest lists {} {split} episodes but counts {}", ids.len(), corpus.manifest.counts.get(split))));
        }
        let eps = ids
            .par_iter()
            .map(|id| read_episode(&dir.join(split.name()).join(format!("{id}.json"))))
            .collect::<Result<Vec<_>>>()?;
        for ep in &eps {
            check_vocabulary(&corpus.manifest, ep)?;
        }
        *corpus.split_mut(split) = eps;
    }
    Ok(corpus)
}

fn check_vocabulary(m: &Manifest, ep: &Episode) -> Result<()> {
    if let Some(&t) = ep.question.iter().find(|&&t| t >= m.vocabulary.len()) {
        return Err(Error::Format(format!("episode {}: token {t} outside the vocabulary of {}", ep.video_id, m.vocabulary.len())));
    }
    match ep.answer {
        Answer::Label(l) if l >= m.answers.len() => Err(Error::Format(format!("episode {}: answer label {l} outside {} answers", ep.video_id, m.answers.len()))),
        _ => Ok(()),
    }
}

fn answer_code(a: Answer) -> i64 {
    match a {
        Answer::Label(l) => l as i64,
        Answer::Count(c) => -1 - c as i64,
    }
}

fn majority(counts: &BTreeMap<i64, usize>) -> Option<i64> {
    counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(&k, _)| k)
}

/// What a classifier sees of the first track only: its color, whether it
/// moves, and whether it matches the attribute named in the question.
fn track_summary(p: &Provenance) -> (usize, bool, bool) {
    let o = &p.objects[0];
    let moved = o.centers.iter().any(|c| (c[0] - o.centers[0][0]).hypot(c[1] - o.centers[0][1]) > 1e-9);
    let matches = match p.query {
        Query::Shape(s) => o.shape == s,
        Query::Color(c) => o.color == c,
        Query::Direction(d) => moved_direction(&o.centers, p.frame) == Some(d),
    };
    (o.color, moved, matches)
}

/// Accuracy on `eval` of answering with the majority answer that `fit`
/// associates with the first track's summary.
pub fn single_track_baseline(fit: &[Episode], eval: &[Episode]) -> Result<f64> {
    let prov = |e: &Episode| e.provenance.clone().ok_or_else(|| Error::InvalidInput(format!("episode {} has no provenance", e.video_id)));
    let mut table: BTreeMap<(usize, bool, bool), BTreeMap<i64, usize>> = BTreeMap::new();
    let mut overall = BTreeMap::new();
    for e in fit {
        let key = track_summary(&prov(e)?);
        *table.entry(key).or_default().entry(answer_code(e.answer)).or_insert(0) += 1;
        *overall.entry(answer_code(e.answer)).or_insert(0) += 1;
    }
    let fallback = majority(&overall);
    let mut hits = 0;
    for e in eval {
        let guess = table.get(&track_summary(&prov(e)?)).and_then(majority).or(fallback);
        hits += usize::from(guess == Some(answer_code(e.answer)));
    }
    Ok(hits as f64 / eval.len().max(1) as f64)
}
