#![allow(dead_code)]

pub mod oracle;

use hostr::harness::RunConfig;
use hostr::model::HostrConfig;
use hostr::synth::{generate_corpus, Corpus, SplitCounts, TaskTemplate, WorldSpec};

pub fn tiny_world() -> WorldSpec {
    WorldSpec {
        num_objects: 3,
        num_frames: 8,
        d_app: 12,
        d_g: 6,
        moving_distractors: 1,
        max_count: 2,
        ..WorldSpec::default()
    }
}

/// Small but complete model for `world`: d = 8, two clips of three frames,
/// two GCN layers per unit.
pub fn tiny_config(world: &WorldSpec, template: TaskTemplate) -> HostrConfig {
    let mut c = RunConfig::for_world(world, template).model;
    c.d = 8;
    c.clip_ostr.d = 8;
    c.video_ostr.d = 8;
    c.clip_ostr.gcn_layers = 2;
    c.video_ostr.gcn_layers = 2;
    c.embed_dim = 8;
    c.clips = 2;
    c.clip_len = 3;
    c
}

pub fn tiny_corpus(template: TaskTemplate, train: usize, seed: u64) -> Corpus {
    generate_corpus(&tiny_world(), template, SplitCounts { train, val: 6, test: 6 }, seed).unwrap()
}
