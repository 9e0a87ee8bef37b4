mod common;

use common::oracle::*;
use common::{tiny_config, tiny_world};
use hostr::encoders::{positional_features, BBox, FrameSize, RawObjectTrack, RawVideo};
use hostr::model::*;
use hostr::ostr::TemporalMode;
use hostr::synth::{generate_episode, TaskTemplate};
use hostr::tensor::{Graph, Tensor};
use hostr::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn clip_ranges_follow_the_stride_rule() {
    let r = clip_ranges(100, 10, 10, None);
    assert_eq!(r.iter().map(|c| c.start).collect::<Vec<_>>(), (0..10).map(|k| 10 * k).collect::<Vec<_>>());
    assert!(r.iter().all(|c| c.valid == 10));
    let r = clip_ranges(19, 2, 10, None);
    assert_eq!((r[0].start, r[1].start), (0, 9));
    assert_eq!(clip_ranges(4, 1, 10, None), vec![ClipRange { start: 0, valid: 4 }]);
    let fixed = clip_ranges(40, 3, 10, Some(5.0));
    assert_eq!(fixed.iter().map(|c| c.start).collect::<Vec<_>>(), vec![0, 5, 10]);
}

#[test]
fn split_clips_pads_short_videos() {
    let objects = Tensor::<f64>::from_f64(&[2, 4, 1], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
    let mask = [true, true, false, true, true, true, true, true];
    let clips = split_clips(&objects, &mask, 1, 6).unwrap();
    let (x, m) = &clips[0];
    assert_eq!(x.shape(), &[2, 6, 1]);
    assert_eq!(x.data(), &[1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 5.0, 6.0, 7.0, 8.0, 0.0, 0.0]);
    assert_eq!(m, &vec![true, true, false, true, false, false, true, true, true, true, false, false]);

    let overlapping = split_clips(&objects, &mask, 2, 3).unwrap();
    assert_eq!(overlapping[1].0.data(), &[2.0, 3.0, 4.0, 6.0, 7.0, 8.0]);
}

#[test]
fn count_decoding_rounds_half_away_and_clamps() {
    assert_eq!(decode_count(3.4, 0, 10), 3);
    assert_eq!(decode_count(3.5, 0, 10), 4);
    assert_eq!(decode_count(-2.7, 1, 10), 1);
    assert_eq!(decode_count(-0.5, -5, 5), -1);
    assert_eq!(decode_count(42.0, 0, 10), 10);
}

#[test]
fn losses_match_hand_values() {
    let mut g = Graph::<f64>::new();
    let logits = g.constant(Tensor::row(vec![0.3; 4]));
    let l = loss(&mut g, logits, Target::Class(2)).unwrap();
    assert!((g.value(l).data()[0] - 4f64.ln()).abs() < 1e-12);

    let out = g.constant(Tensor::row(vec![3.0]));
    let l = loss(&mut g, out, Target::Count(3.0)).unwrap();
    assert_eq!(g.value(l).data()[0], 0.0);
    let l = loss(&mut g, out, Target::Count(5.5)).unwrap();
    assert!((g.value(l).data()[0] - 6.25).abs() < 1e-15);

    let v = vec![1.2, -0.4, 2.5];
    let logits = g.constant(Tensor::row(v.clone()));
    let l = loss(&mut g, logits, Target::Class(1)).unwrap();
    let lse = v.iter().map(|x| x.exp()).sum::<f64>().ln();
    assert!((g.value(l).data()[0] - (lse + 0.4)).abs() < 1e-12);
    assert!(matches!(loss(&mut g, logits, Target::Class(3)), Err(Error::TargetOutOfRange { .. })));
}

#[test]
fn classification_decoding_edge_cases() {
    let mut g = Graph::<f64>::new();
    let zero = g.constant(Tensor::row(vec![0.0; 5]));
    let p = decode_classify(&mut g, zero).unwrap();
    assert!(g.value(p).data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    let sat = g.constant(Tensor::row(vec![400.0, -400.0]));
    let p = decode_classify(&mut g, sat).unwrap();
    assert_eq!(g.value(p).data(), &[1.0, 0.0]);
    assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
}

fn model(config: HostrConfig, seed: u64) -> HostrModel<f64> {
    let mut m = HostrModel::new(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
    randomize(&mut m.params, &mut rng, 0.6);
    m
}

#[test]
fn head_and_pooling_match_scalar_oracles() {
    let m = model(tiny_config(&tiny_world(), TaskTemplate::Attribute), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let y = random_mat(&mut rng, 4, 8);
        let q: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let p = m.params.bind(&mut g);
        let yn = g.constant(tensor(&y));
        let qn = g.constant(Tensor::row(q.clone()));
        let (delta, r) = m.pool.forward(&mut g, &p, yn, qn).unwrap();
        let logits = m.head.forward(&mut g, &p, r, qn).unwrap();
        let probs = decode_classify(&mut g, logits).unwrap();
        let (od, or) = final_pool(&m.params, &m.pool, &y, &q);
        assert!(max_diff(g.value(delta).data(), &od) <= 1e-12);
        assert!(max_diff(g.value(r).data(), &or) <= 1e-12);
        let ol = head(&m.params, &m.head, &or, &q);
        assert!(max_diff(g.value(logits).data(), &ol) <= 1e-12);
        assert!(max_diff(g.value(probs).data(), &softmax(&ol)) <= 1e-12);
        assert!((od.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for j in 0..8 {
            let lo = y.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            let hi = y.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            assert!(lo - 1e-12 <= or[j] && or[j] <= hi + 1e-12);
        }
    }
}

fn one_object_video(rng: &mut impl Rng, d_app: usize, d_g: usize) -> RawVideo {
    let (x, y) = (rng.gen_range(0.0..60.0), rng.gen_range(0.0..60.0));
    RawVideo {
        frame: FrameSize { width: 100.0, height: 100.0 },
        tracks: vec![RawObjectTrack {
            identity: 3,
            boxes: vec![BBox::new(x, y, x + 20.0, y + 30.0)],
            valid: vec![true],
            appearance: vec![(0..d_app).map(|_| rng.gen_range(-1.0..1.0)).collect()],
        }],
        frame_features: vec![(0..d_g).map(|_| rng.gen_range(-1.0..1.0)).collect()],
        motion_features: None,
    }
}

#[test]
fn single_object_single_step_model_composes_by_hand() {
    let mut config = tiny_config(&tiny_world(), TaskTemplate::Attribute);
    config.d = 4;
    config.clip_ostr.d = 4;
    config.video_ostr.d = 4;
    config.clips = 1;
    config.clip_len = 1;
    config.video_ostr.temporal_mode = TemporalMode::Attention;
    let m = model(config, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let raw = one_object_video(&mut rng, 12, 6);
    let tokens = [4, 1, 9];

    let mut g = Graph::new();
    let p = m.params.bind(&mut g);
    let trace = m.forward(&mut g, &p, &raw, &tokens).unwrap();
    let q = g.value(trace.query.query).data().to_vec();

    let pos = positional_features(&raw.tracks[0].boxes[0], raw.frame).unwrap();
    let what = linear(&m.params, &m.object_encoder.appearance, &raw.tracks[0].appearance[0]);
    let gate = linear(&m.params, &m.object_encoder.position, &pos);
    let o: Vec<f64> = what.iter().zip(&gate).map(|(w, s)| w.tanh() * sigmoid(*s)).collect();
    let adj = vec![vec![4.0]];
    let clip_unit = m.clip_unit.as_ref().unwrap();
    let h = gcn(&m.params, &clip_unit.gcn, &vec![o], &adj);
    let c = raw.frame_features[0].clone();
    let y_clip = contextualize(&m.params, &clip_unit.context_mlp, &h, &c);
    let video_unit = m.video_unit.as_ref().unwrap();
    let h = gcn(&m.params, &video_unit.gcn, &y_clip, &adj);
    let y = contextualize(&m.params, &video_unit.context_mlp, &h, &c);
    let (delta, r) = final_pool(&m.params, &m.pool, &y, &q);
    let logits = head(&m.params, &m.head, &r, &q);

    assert_eq!(delta, vec![1.0]);
    assert!(max_diff(g.value(trace.clips[0].context).data(), &c) <= 1e-12);
    assert!(max_diff(g.value(trace.video_context).data(), &c) <= 1e-12);
    assert!(max_diff(g.value(trace.r).data(), &r) <= 1e-10);
    assert!(max_diff(g.value(trace.output).data(), &logits) <= 1e-10);
}

#[test]
fn clip_context_is_frame_attention() {
    let m = model(tiny_config(&tiny_world(), TaskTemplate::Attribute), 5);
    let ep = generate_episode(&tiny_world(), TaskTemplate::Attribute, 5).unwrap();
    let mut g = Graph::new();
    let p = m.params.bind(&mut g);
    let trace = m.forward(&mut g, &p, &ep.video, &ep.question).unwrap();
    let q = g.value(trace.query.query).data().to_vec();
    let frames = &ep.video.frame_features;
    let mut rows_k = Vec::new();
    for clip in &trace.clips {
        let r = clip.range;
        let x: Mat = (0..m.config.clip_len).map(|t| if t < r.valid { frames[r.start + t].clone() } else { vec![0.0; 6] }).collect();
        let mask: Vec<bool> = (0..m.config.clip_len).map(|t| t < r.valid).collect();
        let (ck, gamma) = temporal_attention(&m.params, &m.clip_context, &x, &mask, &q);
        assert!(max_diff(g.value(clip.context).data(), &ck) <= 1e-12);
        assert!(max_diff(g.value(clip.context_attention).data(), &gamma) <= 1e-12);
        rows_k.push(ck);
    }
    let (cv, _) = temporal_attention(&m.params, &m.video_context, &rows_k, &vec![true; rows_k.len()], &q);
    assert!(max_diff(g.value(trace.video_context).data(), &cv) <= 1e-12);
}

#[test]
fn hierarchy_variants_run_and_chain_identities() {
    let world = tiny_world();
    let ep = generate_episode(&world, TaskTemplate::Count, 6).unwrap();
    let base = tiny_config(&world, TaskTemplate::Count);
    for (clip_level, video_level) in [
        (LevelMode::Ostr, LevelMode::Ostr),
        (LevelMode::MeanPool, LevelMode::Ostr),
        (LevelMode::Ostr, LevelMode::MeanPool),
        (LevelMode::MeanPool, LevelMode::MeanPool),
    ] {
        let m = HostrModel::<f64>::new(
            HostrConfig {
                clip_level,
                video_level,
                ..base.clone()
            },
            0,
        )
        .unwrap();
        let mut g = Graph::new();
        let p = m.params.bind(&mut g);
        let trace = m.forward(&mut g, &p, &ep.video, &ep.question).unwrap();
        assert_eq!(g.shape(trace.y_video), &[3, 8]);
        assert!(g.value(trace.r).is_finite());
        assert!((g.value(trace.delta).data().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert_eq!(trace.video.identities, ep.video.tracks.iter().map(|t| t.identity).collect::<Vec<_>>());
        for c in &trace.clips {
            assert_eq!(c.unit.is_some(), clip_level == LevelMode::Ostr);
            if let Some(u) = &c.unit {
                assert_eq!(u.identities, trace.video.identities);
            }
        }
    }
}

fn permuted(raw: &RawVideo, perm: &[usize]) -> RawVideo {
    RawVideo {
        tracks: perm.iter().map(|&i| raw.tracks[i].clone()).collect(),
        ..raw.clone()
    }
}

#[test]
fn answer_ignores_object_order_and_masked_slots() {
    let world = tiny_world();
    for template in [TaskTemplate::Attribute, TaskTemplate::Interaction, TaskTemplate::Count] {
        let m = model(tiny_config(&world, template), 7);
        for seed in 0..4 {
            let mut ep = generate_episode(&world, template, seed).unwrap();
            ep.video.tracks[1].valid[2] = false;
            let run = |raw: &RawVideo| {
                let mut g = Graph::new();
                let p = m.params.bind(&mut g);
                let t = m.forward(&mut g, &p, raw, &ep.question).unwrap();
                (g.value(t.r).data().to_vec(), g.value(t.output).data().to_vec())
            };
            let (r, out) = run(&ep.video);
            let (rp, _) = run(&permuted(&ep.video, &[2, 0, 1]));
            assert!(max_diff(&r, &rp) < 1e-10, "{template}");

            let mut noisy = ep.video.clone();
            noisy.tracks[1].appearance[2] = vec![9.0; world.d_app];
            noisy.tracks[1].boxes[2] = BBox::new(1.0, 2.0, 3.0, 4.0);
            assert_eq!(run(&noisy).1, out, "{template}");
        }
    }
}

#[test]
fn parameter_count_ignores_object_count_and_video_length() {
    let template = TaskTemplate::Interaction;
    let counts: Vec<usize> = [(2, 8), (8, 12), (32, 40)]
        .iter()
        .map(|&(n, l)| {
            let world = hostr::synth::WorldSpec {
                num_objects: n.min(6),
                num_frames: l,
                ..tiny_world()
            };
            HostrModel::<f64>::new(tiny_config(&world, template), 0).unwrap().param_count()
        })
        .collect();
    assert!(counts.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn parameter_count_is_linear_in_unit_levels() {
    let mut base = tiny_config(&tiny_world(), TaskTemplate::Attribute);
    base.video_ostr.temporal_mode = base.clip_ostr.temporal_mode;
    let count = |clip_level, video_level| {
        HostrModel::<f64>::new(
            HostrConfig {
                clip_level,
                video_level,
                ..base.clone()
            },
            0,
        )
        .unwrap()
        .param_count()
    };
    let p0 = count(LevelMode::MeanPool, LevelMode::MeanPool);
    let p1a = count(LevelMode::MeanPool, LevelMode::Ostr);
    let p1b = count(LevelMode::Ostr, LevelMode::MeanPool);
    let p2 = count(LevelMode::Ostr, LevelMode::Ostr);
    assert_eq!(p1a, p1b);
    assert_eq!(p2 - p1a, p1a - p0);
    assert!(p1a > p0);
}

#[test]
fn mismatched_targets_are_rejected() {
    let world = tiny_world();
    let ep = generate_episode(&world, TaskTemplate::Attribute, 0).unwrap();
    let m = HostrModel::<f64>::new(tiny_config(&world, TaskTemplate::Attribute), 0).unwrap();
    let mut g = Graph::new();
    let p = m.params.bind(&mut g);
    assert!(matches!(
        m.forward_loss(&mut g, &p, &ep.video, &ep.question, Target::Class(10)),
        Err(Error::TargetOutOfRange { target: 10, classes: 10 })
    ));
    assert!(matches!(
        m.forward_loss(&mut g, &p, &ep.video, &ep.question, Target::Count(1.0)),
        Err(Error::ConfigMismatch(_))
    ));
    let mut bad = tiny_config(&world, TaskTemplate::Attribute);
    bad.d = 7;
    assert!(HostrModel::<f64>::new(bad, 0).is_err());
}

#[test]
fn single_precision_tracks_double_precision() {
    let world = tiny_world();
    let ep = generate_episode(&world, TaskTemplate::Count, 9).unwrap();
    let config = tiny_config(&world, TaskTemplate::Count);
    let m64 = HostrModel::<f64>::new(config.clone(), 9).unwrap();
    let m32 = HostrModel::<f32>::new(config, 9).unwrap();
    let (Prediction::Count { value: a, .. }, Prediction::Count { value: b, .. }) =
        (m64.predict(&ep.video, &ep.question).unwrap(), m32.predict(&ep.video, &ep.question).unwrap())
    else {
        panic!("count predictions expected");
    };
    assert!((a - b).abs() < 1e-4, "{a} vs {b}");
}
