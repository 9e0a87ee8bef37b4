//! Brute-force answers recomputed from true trajectories.

use super::{color_label, Answer, Direction, Provenance, Query, TaskTemplate};
use crate::encoders::FrameSize;
use crate::error::{Error, Result};

/// Share of frame transitions over which the distance must shrink for an
/// object to count as approaching.
pub const APPROACH_FRACTION: f64 = 0.6;
/// Net displacement, as a share of the grid, below which an object has not moved.
pub const MIN_MOVE_FRACTION: f64 = 0.15;

/// Direction of the net displacement from the first to the last frame,
/// judged on the dominant axis.
pub fn moved_direction(centers: &[[f64; 2]], frame: FrameSize) -> Option<Direction> {
    let (first, last) = (centers.first()?, centers.last()?);
    let (dx, dy) = (last[0] - first[0], last[1] - first[1]);
    if dx.abs() >= dy.abs() {
        if dx.abs() < MIN_MOVE_FRACTION * frame.width {
            None
        } else if dx > 0.0 {
            Some(Direction::Right)
        } else {
            Some(Direction::Left)
        }
    } else if dy.abs() < MIN_MOVE_FRACTION * frame.height {
        None
    } else if dy > 0.0 {
        Some(Direction::Down)
    } else {
        Some(Direction::Up)
    }
}

/// Fraction of consecutive frame pairs over which the distance between the
/// two paths strictly decreases.
pub fn decreasing_fraction(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let dist = |t: usize| (a[t][0] - b[t][0]).hypot(a[t][1] - b[t][1]);
    let shrinking = (0..n - 1).filter(|&t| dist(t + 1) < dist(t)).count();
    shrinking as f64 / (n - 1) as f64
}

/// Sign changes of the offset from the vertical line `x = width / 2`;
/// frames exactly on the line keep the previous side.
pub fn center_crossings(centers: &[[f64; 2]], width: f64) -> u32 {
    let mid = width / 2.0;
    let mut side = 0.0;
    let mut count = 0;
    for c in centers {
        let s = (c[0] - mid).signum();
        if c[0] == mid {
            continue;
        }
        if side != 0.0 && s != side {
            count += 1;
        }
        side = s;
    }
    count
}

fn unique<I: Iterator<Item = usize>>(mut it: I, what: &str) -> Result<usize> {
    match (it.next(), it.next()) {
        (Some(i), None) => Ok(i),
        (None, _) => Err(Error::Generation(format!("no object is {what}"))),
        _ => Err(Error::Generation(format!("more than one object is {what}"))),
    }
}

/// Recomputes the answer from the provenance record. Ambiguous records (no
/// or several objects matching the question) are errors.
pub fn oracle_answer(prov: &Provenance) -> Result<Answer> {
    let objs = &prov.objects;
    match (prov.template, prov.query) {
        (TaskTemplate::Attribute, Query::Direction(dir)) => {
            let i = unique(
                (0..objs.len()).filter(|&i| moved_direction(&objs[i].centers, prov.frame) == Some(dir)),
                &format!("moving {}", dir.word()),
            )?;
            Ok(Answer::Label(color_label(objs[i].color)))
        }
        (TaskTemplate::Interaction, Query::Shape(shape)) => {
            let target = unique((0..objs.len()).filter(|&i| objs[i].shape == shape), "of the asked shape")?;
            let i = unique(
                (0..objs.len()).filter(|&i| i != target && decreasing_fraction(&objs[i].centers, &objs[target].centers) >= APPROACH_FRACTION),
                "approaching the target",
            )?;
            Ok(Answer::Label(color_label(objs[i].color)))
        }
        (TaskTemplate::Count, Query::Color(color)) => {
            let i = unique((0..objs.len()).filter(|&i| objs[i].color == color), "of the asked color")?;
            Ok(Answer::Count(center_crossings(&objs[i].centers, prov.frame.width)))
        }
        (t, q) => Err(Error::Generation(format!("query {q:?} does not fit the {t} template"))),
    }
}
