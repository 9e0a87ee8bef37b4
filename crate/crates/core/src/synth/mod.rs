//! Synthetic video-QA episodes whose answers are known to the generator.
//!
//! Objects carry a color and a shape, follow a trajectory program and are
//! observed through noisy appearance vectors and boxes with random
//! occlusions. Questions come from three templates: the color of the object
//! moving in a direction, the object approaching an object of some shape,
//! and how often an object crosses the vertical center line.

mod corpus;
mod oracle;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoders::{BBox, FrameSize, RawObjectTrack, RawVideo};
use crate::error::{Error, Result};
use crate::model::Target;

pub use corpus::{
    episode_seed, generate_corpus, read_corpus, read_episode, single_track_baseline, write_corpus, write_episode, Corpus, Manifest, Split,
    SplitCounts, FORMAT_VERSION,
};
pub use oracle::{center_crossings, decreasing_fraction, moved_direction, oracle_answer, APPROACH_FRACTION, MIN_MOVE_FRACTION};

pub const COLORS: [&str; 6] = ["red", "green", "blue", "yellow", "purple", "orange"];
pub const SHAPES: [&str; 4] = ["cube", "sphere", "cylinder", "cone"];
/// Leading appearance slots holding the color and shape one-hots.
pub const ATTRIBUTE_DIM: usize = COLORS.len() + SHAPES.len();
/// Per-frame motion summary: mean dx, mean dy, mean |dx|, mean |dy|.
pub const MOTION_DIM: usize = 4;

const MAX_ATTEMPTS: usize = 200;

const FIXED_WORDS: [&str; 17] = [
    "<pad>", "what", "color", "is", "the", "object", "that", "moves", "which", "approaches", "how", "many", "times", "does", "cross", "center",
    "line",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskTemplate {
    /// "what color is the object that moves <direction>"
    Attribute,
    /// "which object approaches the <shape> object"
    Interaction,
    /// "how many times does the <color> object cross the center line"
    Count,
}

impl TaskTemplate {
    pub const ALL: [TaskTemplate; 3] = [TaskTemplate::Attribute, TaskTemplate::Interaction, TaskTemplate::Count];

    pub fn name(self) -> &'static str {
        match self {
            TaskTemplate::Attribute => "attribute",
            TaskTemplate::Interaction => "interaction",
            TaskTemplate::Count => "count",
        }
    }

    /// Accuracy of uniform guessing among the answers the template can produce.
    pub fn chance(self, world: &WorldSpec) -> f64 {
        match self {
            TaskTemplate::Attribute | TaskTemplate::Interaction => 1.0 / COLORS.len().min(world.num_objects) as f64,
            TaskTemplate::Count => 1.0 / (world.max_count + 1) as f64,
        }
    }
}

impl fmt::Display for TaskTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskTemplate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskTemplate::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown template '{s}' (attribute, interaction, count)")))
    }
}

/// Image coordinates: `y` grows downwards, so `Up` is negative `y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Left, Direction::Right, Direction::Up, Direction::Down];

    pub fn word(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }

    pub fn unit(self) -> [f64; 2] {
        match self {
            Direction::Left => [-1.0, 0.0],
            Direction::Right => [1.0, 0.0],
            Direction::Up => [0.0, -1.0],
            Direction::Down => [0.0, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub width: f64,
    pub height: f64,
    pub num_objects: usize,
    pub num_frames: usize,
    pub d_app: usize,
    pub d_g: usize,
    /// Standard deviation of the additive feature noise.
    pub noise: f64,
    /// Probability that an object is missed in a frame.
    pub occlusion: f64,
    /// Side of the square object boxes.
    pub box_size: f64,
    /// Moving objects besides the one the question is about.
    pub moving_distractors: usize,
    /// Largest crossing count asked by the COUNT template.
    pub max_count: u32,
    pub motion_features: bool,
    /// Standard deviation of the per-episode scene vector added to every frame feature.
    #[serde(default = "default_scene_scale")]
    pub scene_scale: f64,
    /// With `false` every program is static and motion templates are infeasible.
    pub allow_motion: bool,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            width: 100.0,
            height: 100.0,
            num_objects: 6,
            num_frames: 32,
            d_app: 32,
            d_g: 32,
            noise: 0.05,
            occlusion: 0.05,
            box_size: 10.0,
            moving_distractors: 3,
            max_count: 4,
            motion_features: false,
            scene_scale: 0.5,
            allow_motion: true,
        }
    }
}

fn default_scene_scale() -> f64 {
    0.5
}

impl WorldSpec {
    pub fn frame(&self) -> FrameSize {
        FrameSize {
            width: self.width,
            height: self.height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad(format!("grid {}x{} must be positive", self.width, self.height));
        }
        if self.num_objects == 0 || self.num_objects > COLORS.len() {
            return bad(format!("N={} must be in 1..={} (colors are distinct)", self.num_objects, COLORS.len()));
        }
        if self.num_frames < 2 {
            return bad(format!("L={} must be >= 2", self.num_frames));
        }
        if self.d_app < ATTRIBUTE_DIM || self.d_g == 0 {
            return bad(format!("d_app={} must be >= {ATTRIBUTE_DIM} and d_g={} positive", self.d_app, self.d_g));
        }
        if !(self.noise >= 0.0 && self.scene_scale >= 0.0 && (0.0..1.0).contains(&self.occlusion)) {
            return bad(format!("noise {} and scene scale {} must be >= 0 and occlusion {} in [0, 1)", self.noise, self.scene_scale, self.occlusion));
        }
        if !(self.box_size > 0.0 && 4.0 * self.box_size < self.width.min(self.height)) {
            return bad(format!("box size {} must be positive and under a quarter of the grid", self.box_size));
        }
        Ok(())
    }

    fn check_feasible(&self, template: TaskTemplate) -> Result<()> {
        let infeasible = |m: &str| Err(Error::Generation(format!("{template} template is infeasible: {m}")));
        if !self.allow_motion {
            return infeasible("its answer depends on motion but the world only allows static programs");
        }
        match template {
            TaskTemplate::Interaction if self.num_objects < 2 => infeasible("needs at least two objects"),
            TaskTemplate::Count if self.num_objects < 2 => infeasible("needs a pivot object besides the counted one"),
            _ => Ok(()),
        }
    }

    fn margin(&self) -> f64 {
        self.box_size / 2.0 + 1.0
    }
}

/// Motion of one object over the video. `target` indexes the episode's object list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Trajectory {
    Static {
        at: [f64; 2],
    },
    /// Constant velocity between frames `start` and `end`, resting otherwise.
    LinearMove {
        from: [f64; 2],
        to: [f64; 2],
        start: usize,
        end: usize,
    },
    /// Heads straight for the target's position at frame `arrive`, stopping
    /// `gap` short of it, then rests.
    Approach {
        target: usize,
        from: [f64; 2],
        gap: f64,
        arrive: usize,
    },
    /// Circles the target; the angle sweeps `sweep` radians over the video.
    Orbit {
        target: usize,
        radius: f64,
        phase: f64,
        sweep: f64,
    },
}

impl Trajectory {
    fn target(&self) -> Option<usize> {
        match self {
            Trajectory::Approach { target, .. } | Trajectory::Orbit { target, .. } => Some(*target),
            _ => None,
        }
    }
}

/// Box centers of every object in every frame.
pub fn render_trajectories(programs: &[Trajectory], frames: usize) -> Result<Vec<Vec<[f64; 2]>>> {
    let n = programs.len();
    let mut out: Vec<Option<Vec<[f64; 2]>>> = vec![None; n];
    let mut remaining = n;
    while remaining > 0 {
        let before = remaining;
        for i in 0..n {
            if out[i].is_some() {
                continue;
            }
            let anchor = match programs[i].target() {
                Some(t) if t >= n || t == i => return Err(Error::Generation(format!("object {i} targets invalid object {t}"))),
                Some(t) => match &out[t] {
                    Some(c) => Some(c.clone()),
                    None => continue,
                },
                None => None,
            };
            out[i] = Some(render_one(&programs[i], anchor.as_deref(), frames));
            remaining -= 1;
        }
        if remaining == before {
            return Err(Error::Generation("trajectory targets form a cycle".into()));
        }
    }
    Ok(out.into_iter().map(|c| c.expect("rendered")).collect())
}

fn render_one(program: &Trajectory, anchor: Option<&[[f64; 2]]>, frames: usize) -> Vec<[f64; 2]> {
    let lerp = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
    (0..frames)
        .map(|t| match *program {
            Trajectory::Static { at } => at,
            Trajectory::LinearMove { from, to, start, end } => {
                let s = if end <= start {
                    if t >= start {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    ((t as f64 - start as f64) / (end - start) as f64).clamp(0.0, 1.0)
                };
                lerp(from, to, s)
            }
            Trajectory::Approach { from, gap, arrive, .. } => {
                let at = anchor.expect("anchor")[arrive.min(frames - 1)];
                let (dx, dy) = (from[0] - at[0], from[1] - at[1]);
                let dist = dx.hypot(dy);
                let goal = if dist > 0.0 {
                    [at[0] + gap * dx / dist, at[1] + gap * dy / dist]
                } else {
                    at
                };
                let s = (t as f64 / arrive.max(1) as f64).min(1.0);
                lerp(from, goal, s)
            }
            Trajectory::Orbit { radius, phase, sweep, .. } => {
                let c = anchor.expect("anchor")[t];
                let theta = phase + sweep * t as f64 / (frames - 1).max(1) as f64;
                [c[0] + radius * theta.cos(), c[1] + radius * theta.sin()]
            }
        })
        .collect()
}

/// What the question asks about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum Query {
    Direction(Direction),
    Shape(usize),
    Color(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectFacts {
    pub identity: usize,
    pub color: usize,
    pub shape: usize,
    pub program: Trajectory,
    /// True box centers in every frame, occluded or not.
    pub centers: Vec<[f64; 2]>,
}

/// Generator-side record from which the answer can be recomputed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub template: TaskTemplate,
    pub query: Query,
    pub frame: FrameSize,
    pub objects: Vec<ObjectFacts>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Answer {
    /// Index into [`answer_labels`].
    Label(usize),
    Count(u32),
}

impl Answer {
    pub fn target(self) -> Target {
        match self {
            Answer::Label(l) => Target::Class(l),
            Answer::Count(c) => Target::Count(c as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub video_id: String,
    pub task: TaskTemplate,
    pub video: RawVideo,
    pub question: Vec<usize>,
    pub answer: Answer,
    pub provenance: Option<Provenance>,
}

/// Question words; a word's token id is its index.
pub fn question_vocabulary() -> Vec<String> {
    FIXED_WORDS
        .iter()
        .copied()
        .chain(Direction::ALL.iter().map(|d| d.word()))
        .chain(COLORS)
        .chain(SHAPES)
        .map(String::from)
        .collect()
}

/// Classification answers: the colors followed by the shapes.
pub fn answer_labels() -> Vec<String> {
    COLORS.iter().chain(SHAPES.iter()).map(|s| s.to_string()).collect()
}

pub fn color_label(color: usize) -> usize {
    color
}

pub fn shape_label(shape: usize) -> usize {
    COLORS.len() + shape
}

pub fn tokenize(text: &str) -> Result<Vec<usize>> {
    let vocab = question_vocabulary();
    text.split_whitespace()
        .map(|w| {
            vocab
                .iter()
                .position(|v| v == w)
                .ok_or_else(|| Error::InvalidInput(format!("word '{w}' is not in the question vocabulary")))
        })
        .collect()
}

pub fn question_text(template: TaskTemplate, query: Query) -> Result<String> {
    Ok(match (template, query) {
        (TaskTemplate::Attribute, Query::Direction(d)) => format!("what color is the object that moves {}", d.word()),
        (TaskTemplate::Interaction, Query::Shape(s)) if s < SHAPES.len() => format!("which object approaches the {} object", SHAPES[s]),
        (TaskTemplate::Count, Query::Color(c)) if c < COLORS.len() => {
            format!("how many times does the {} object cross the center line", COLORS[c])
        }
        _ => return Err(Error::InvalidInput(format!("query {query:?} does not fit the {template} template"))),
    })
}

struct Draft {
    query: Query,
    programs: Vec<Trajectory>,
    colors: Vec<usize>,
    shapes: Vec<usize>,
    answer: Answer,
}

/// Samples an episode; identical `(spec, template, seed)` give identical episodes.
/// Draws whose oracle answer is ambiguous or disagrees with the intended
/// answer are rejected and redrawn.
pub fn generate_episode(spec: &WorldSpec, template: TaskTemplate, seed: u64) -> Result<Episode> {
    spec.validate()?;
    spec.check_feasible(template)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let draft = match template {
            TaskTemplate::Attribute => draft_attribute(spec, &mut rng),
            TaskTemplate::Interaction => draft_interaction(spec, &mut rng),
            TaskTemplate::Count => draft_count(spec, &mut rng),
        };
        let Some(draft) = draft else { continue };
        let centers = render_trajectories(&draft.programs, spec.num_frames)?;
        if !centers.iter().flatten().all(|&c| box_inside(spec, c)) {
            continue;
        }
        let ids = rand::seq::index::sample(&mut rng, 100 * spec.num_objects, spec.num_objects).into_vec();
        let objects: Vec<ObjectFacts> = (0..spec.num_objects)
            .map(|i| ObjectFacts {
                identity: ids[i],
                color: draft.colors[i],
                shape: draft.shapes[i],
                program: draft.programs[i].clone(),
                centers: centers[i].clone(),
            })
            .collect();
        let provenance = Provenance {
            template,
            query: draft.query,
            frame: spec.frame(),
            objects,
        };
        match oracle_answer(&provenance) {
            Ok(a) if a == draft.answer => {}
            _ => continue,
        }
        let video = observe(spec, &provenance, &mut rng);
        return Ok(Episode {
            video_id: format!("{template}-{seed:016x}"),
            task: template,
            video,
            question: tokenize(&question_text(template, draft.query)?)?,
            answer: draft.answer,
            provenance: Some(provenance),
        });
    }
    Err(Error::Generation(format!("no unambiguous {template} episode after {MAX_ATTEMPTS} draws (seed {seed})")))
}

fn box_inside(spec: &WorldSpec, c: [f64; 2]) -> bool {
    let h = spec.box_size / 2.0;
    c[0] - h >= 0.0 && c[0] + h <= spec.width && c[1] - h >= 0.0 && c[1] + h <= spec.height
}

fn sample_point<R: Rng>(spec: &WorldSpec, rng: &mut R) -> [f64; 2] {
    let m = spec.margin();
    [rng.gen_range(m..spec.width - m), rng.gen_range(m..spec.height - m)]
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn attributes<R: Rng>(spec: &WorldSpec, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let colors = rand::seq::index::sample(rng, COLORS.len(), spec.num_objects).into_vec();
    let shapes = (0..spec.num_objects).map(|_| rng.gen_range(0..SHAPES.len())).collect();
    (colors, shapes)
}

fn shuffled_slots<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(rng);
    slots
}

/// Full-length straight move along `dir` covering 35-60% of the grid.
fn directed_move<R: Rng>(spec: &WorldSpec, rng: &mut R, dir: Direction) -> Option<Trajectory> {
    let u = dir.unit();
    let along = if u[0] != 0.0 { spec.width } else { spec.height };
    let across = if u[0] != 0.0 { spec.height } else { spec.width };
    let mag = rng.gen_range(0.35..0.6) * along;
    let jitter = rng.gen_range(-0.1..0.1) * across;
    let v = [u[0] * mag + u[1].abs() * jitter, u[1] * mag + u[0].abs() * jitter];
    let m = spec.margin();
    let lo = [m - v[0].min(0.0), m - v[1].min(0.0)];
    let hi = [spec.width - m - v[0].max(0.0), spec.height - m - v[1].max(0.0)];
    if lo[0] >= hi[0] || lo[1] >= hi[1] {
        return None;
    }
    let from = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])];
    Some(Trajectory::LinearMove {
        from,
        to: [from[0] + v[0], from[1] + v[1]],
        start: 0,
        end: spec.num_frames - 1,
    })
}

fn draft_attribute<R: Rng>(spec: &WorldSpec, rng: &mut R) -> Option<Draft> {
    let n = spec.num_objects;
    let (colors, shapes) = attributes(spec, rng);
    let dir = Direction::ALL[rng.gen_range(0..4)];
    let slots = shuffled_slots(n, rng);
    let mut programs = vec![Trajectory::Static { at: [0.0, 0.0] }; n];
    programs[slots[0]] = directed_move(spec, rng, dir)?;
    for (j, &s) in slots[1..].iter().enumerate() {
        programs[s] = if j < spec.moving_distractors {
            let others: Vec<Direction> = Direction::ALL.into_iter().filter(|&d| d != dir).collect();
            let d = others[rng.gen_range(0..others.len())];
            directed_move(spec, rng, d)?
        } else {
            Trajectory::Static { at: sample_point(spec, rng) }
        };
    }
    Some(Draft {
        query: Query::Direction(dir),
        answer: Answer::Label(color_label(colors[slots[0]])),
        programs,
        colors,
        shapes,
    })
}

fn draft_interaction<R: Rng>(spec: &WorldSpec, rng: &mut R) -> Option<Draft> {
    let n = spec.num_objects;
    let (colors, mut shapes) = attributes(spec, rng);
    let slots = shuffled_slots(n, rng);
    let (target, approacher) = (slots[0], slots[1]);
    let asked = shapes[target];
    for (i, s) in shapes.iter_mut().enumerate() {
        if i != target && *s == asked {
            *s = (asked + rng.gen_range(1..SHAPES.len())) % SHAPES.len();
        }
    }
    let scale = spec.width.min(spec.height);
    let at = sample_point(spec, rng);
    let mut programs = vec![Trajectory::Static { at }; n];
    let from = (0..50).map(|_| sample_point(spec, rng)).find(|&p| distance(p, at) >= 0.45 * scale)?;
    programs[approacher] = Trajectory::Approach {
        target,
        from,
        gap: 1.2 * spec.box_size,
        arrive: ((0.75 * (spec.num_frames - 1) as f64).round() as usize).max(1),
    };
    let movers = spec.moving_distractors.min(n - 2);
    for (j, &s) in slots[2..].iter().enumerate() {
        programs[s] = if j < movers {
            (0..50).find_map(|_| {
                let (a, b) = (sample_point(spec, rng), sample_point(spec, rng));
                if distance(a, b) < 0.3 * scale || distance(b, at) < 0.3 * scale {
                    return None;
                }
                let p = Trajectory::LinearMove {
                    from: a,
                    to: b,
                    start: 0,
                    end: spec.num_frames - 1,
                };
                let path = render_one(&p, None, spec.num_frames);
                (decreasing_fraction(&path, &vec![at; spec.num_frames]) <= 0.5).then_some(p)
            })?
        } else {
            let p = (0..50).map(|_| sample_point(spec, rng)).find(|&p| distance(p, at) >= 0.25 * scale)?;
            Trajectory::Static { at: p }
        };
    }
    Some(Draft {
        query: Query::Shape(asked),
        answer: Answer::Label(color_label(colors[approacher])),
        programs,
        colors,
        shapes,
    })
}

/// Orbit around `pivot` whose angle starts just past a vertical crossing and
/// sweeps through `count` more of them.
fn crossing_orbit<R: Rng>(spec: &WorldSpec, rng: &mut R, pivot: usize, count: u32) -> Trajectory {
    let scale = spec.width.min(spec.height);
    let eps = rng.gen_range(0.15..0.3);
    let extra = rng.gen_range(0.35..0.6);
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    Trajectory::Orbit {
        target: pivot,
        radius: rng.gen_range(0.18..0.3) * scale,
        phase: PI / 2.0 + sign * eps * PI,
        sweep: sign * PI * (count as f64 + extra),
    }
}

/// A program that stays on one side of the center line.
fn one_sided<R: Rng>(spec: &WorldSpec, rng: &mut R) -> Trajectory {
    let m = spec.margin();
    let gap = 0.05 * spec.width;
    let (lo, hi) = if rng.gen_bool(0.5) {
        (m, spec.width / 2.0 - gap)
    } else {
        (spec.width / 2.0 + gap, spec.width - m)
    };
    let mut point = || [rng.gen_range(lo..hi), rng.gen_range(m..spec.height - m)];
    let from = point();
    if spec.allow_motion {
        let to = point();
        Trajectory::LinearMove {
            from,
            to,
            start: 0,
            end: spec.num_frames - 1,
        }
    } else {
        Trajectory::Static { at: from }
    }
}

fn draft_count<R: Rng>(spec: &WorldSpec, rng: &mut R) -> Option<Draft> {
    let n = spec.num_objects;
    let (colors, shapes) = attributes(spec, rng);
    let slots = shuffled_slots(n, rng);
    let (asked, pivot) = (slots[0], slots[1]);
    let count = rng.gen_range(0..=spec.max_count);
    let pivot_at = [
        spec.width / 2.0 + rng.gen_range(-0.05..0.05) * spec.width,
        spec.height / 2.0 + rng.gen_range(-0.1..0.1) * spec.height,
    ];
    let mut programs = vec![Trajectory::Static { at: pivot_at }; n];
    programs[asked] = if count == 0 { one_sided(spec, rng) } else { crossing_orbit(spec, rng, pivot, count) };
    for (j, &s) in slots[2..].iter().enumerate() {
        programs[s] = match rng.gen_range(0..=spec.max_count) {
            _ if j >= spec.moving_distractors => match one_sided(spec, rng) {
                Trajectory::LinearMove { from, .. } => Trajectory::Static { at: from },
                p => p,
            },
            0 => one_sided(spec, rng),
            c => crossing_orbit(spec, rng, pivot, c),
        };
    }
    Some(Draft {
        query: Query::Color(colors[asked]),
        answer: Answer::Count(count),
        programs,
        colors,
        shapes,
    })
}

/// Appearance one-hots for color and shape, zero elsewhere.
pub fn attribute_vector(color: usize, shape: usize, d_app: usize) -> Vec<f64> {
    let mut v = vec![0.0; d_app];
    v[color] = 1.0;
    v[COLORS.len() + shape] = 1.0;
    v
}

/// Turns true trajectories into what a detector and tracker would report:
/// noisy appearance, boxes and occlusions, plus frame and motion features.
fn observe<R: Rng>(spec: &WorldSpec, prov: &Provenance, rng: &mut R) -> RawVideo {
    let l = spec.num_frames;
    let h = spec.box_size / 2.0;
    let noise = |rng: &mut R| spec.noise * rng.sample::<f64, _>(StandardNormal);
    let mut tracks = Vec::with_capacity(prov.objects.len());
    for o in &prov.objects {
        let base = attribute_vector(o.color, o.shape, spec.d_app);
        let mut track = RawObjectTrack {
            identity: o.identity,
            boxes: Vec::with_capacity(l),
            valid: Vec::with_capacity(l),
            appearance: Vec::with_capacity(l),
        };
        for &c in &o.centers {
            let visible = rng.gen::<f64>() >= spec.occlusion;
            track.valid.push(visible);
            if visible {
                track.boxes.push(BBox::new(c[0] - h, c[1] - h, c[0] + h, c[1] + h));
                track.appearance.push(base.iter().map(|&b| b + noise(rng)).collect());
            } else {
                track.boxes.push(BBox::new(0.0, 0.0, 0.0, 0.0));
                track.appearance.push(vec![0.0; spec.d_app]);
            }
        }
        tracks.push(track);
    }
    let scene: Vec<f64> = (0..spec.d_g).map(|_| spec.scene_scale * rng.sample::<f64, _>(StandardNormal)).collect();
    let frame_features = (0..l)
        .map(|t| {
            let visible: Vec<&RawObjectTrack> = tracks.iter().filter(|tr| tr.valid[t]).collect();
            (0..spec.d_g)
                .map(|j| {
                    let mean = if visible.is_empty() || j >= spec.d_app {
                        0.0
                    } else {
                        visible.iter().map(|tr| tr.appearance[t][j]).sum::<f64>() / visible.len() as f64
                    };
                    scene[j] + mean + noise(rng)
                })
                .collect()
        })
        .collect();
    let motion_features = spec.motion_features.then(|| {
        (0..l)
            .map(|t| {
                let mut acc = [0.0; MOTION_DIM];
                let mut seen = 0;
                if t > 0 {
                    for (o, tr) in prov.objects.iter().zip(&tracks) {
                        if tr.valid[t] && tr.valid[t - 1] {
                            let dx = (o.centers[t][0] - o.centers[t - 1][0]) / spec.width;
                            let dy = (o.centers[t][1] - o.centers[t - 1][1]) / spec.height;
                            acc[0] += dx;
                            acc[1] += dy;
                            acc[2] += dx.abs();
                            acc[3] += dy.abs();
                            seen += 1;
                        }
                    }
                }
                acc.iter().map(|a| if seen > 0 { a / seen as f64 } else { 0.0 }).collect()
            })
            .collect()
    });
    RawVideo {
        frame: spec.frame(),
        tracks,
        frame_features,
        motion_features,
    }
}
