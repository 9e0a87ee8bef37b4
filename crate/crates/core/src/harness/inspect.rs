use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HostrModel, Prediction};
use crate::ostr::OstrOutput;
use crate::scalar::Scalar;
use crate::synth::Episode;
use crate::tensor::{Graph, NodeId};

pub const DEFAULT_TOP_K: usize = 6;

/// Attention and graph state of one reasoning unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitInspection {
    /// `clip-<k>` or `video`.
    pub level: String,
    pub identities: Vec<usize>,
    /// Temporal attention of each object over its steps.
    pub beta: Option<Vec<Vec<f64>>>,
    /// Relevance vectors `a_n` (normalized over objects per coordinate).
    pub relevance: Option<Vec<Vec<f64>>>,
    pub adjacency: Option<Vec<Vec<f64>>>,
    pub row_sums: Option<Vec<f64>>,
    /// Identities of the objects with the largest adjacency row sums.
    pub top_objects: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InspectionRecord {
    pub video_id: String,
    pub question: Vec<usize>,
    pub prediction: Prediction,
    pub top_k: usize,
    pub units: Vec<UnitInspection>,
    /// Context attention over the frames of each clip.
    pub clip_attention: Vec<Vec<f64>>,
    /// Context attention over clips.
    pub video_context_attention: Vec<f64>,
    /// Final pooling weights `delta_n`, aligned with `delta_identities`.
    pub delta: Vec<f64>,
    pub delta_identities: Vec<usize>,
}

fn rows<T: Scalar>(g: &Graph<T>, id: NodeId) -> Vec<Vec<f64>> {
    let v = g.value(id);
    let s = v.shape();
    let cols = if s.len() > 1 { s[1..].iter().product() } else { 1 };
    v.to_f64().chunks(cols.max(1)).map(<[f64]>::to_vec).collect()
}

fn unit_record<T: Scalar>(g: &Graph<T>, level: String, out: &OstrOutput, k: usize) -> UnitInspection {
    let adjacency = out.adjacency.map(|a| rows(g, a));
    let row_sums: Option<Vec<f64>> = adjacency.as_ref().map(|a| a.iter().map(|r| r.iter().sum()).collect());
    let mut order: Vec<usize> = (0..out.identities.len()).collect();
    if let Some(s) = &row_sums {
        order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
    }
    UnitInspection {
        level,
        identities: out.identities.clone(),
        beta: out.beta.map(|b| rows(g, b)),
        relevance: out.relevance.map(|a| rows(g, a)),
        adjacency,
        row_sums,
        top_objects: order.into_iter().take(k).map(|i| out.identities[i]).collect(),
    }
}

/// Runs one episode and exports the unit internals. Parameters are bound as
/// constants, so the model is left untouched.
pub fn dump_graph<T: Scalar>(model: &HostrModel<T>, episode: &Episode, top_k: usize) -> Result<InspectionRecord> {
    let mut g = Graph::new();
    let p = model.params.bind_frozen(&mut g);
    let trace = model.forward(&mut g, &p, &episode.video, &episode.question)?;
    let prediction = model.prediction(&mut g, &trace)?;
    let mut units = Vec::new();
    for (k, c) in trace.clips.iter().enumerate() {
        if let Some(u) = &c.unit {
            units.push(unit_record(&g, format!("clip-{k}"), u, top_k));
        }
    }
    if let Some(u) = &trace.video_unit {
        units.push(unit_record(&g, "video".into(), u, top_k));
    }
    Ok(InspectionRecord {
        video_id: episode.video_id.clone(),
        question: episode.question.clone(),
        prediction,
        top_k,
        units,
        clip_attention: trace.clips.iter().map(|c| g.value(c.context_attention).to_f64()).collect(),
        video_context_attention: g.value(trace.video_context_attention).to_f64(),
        delta: g.value(trace.delta).to_f64(),
        delta_identities: trace.video.identities.clone(),
    })
}

/// Recomputes `A = a a^T` and its row sums from the exported relevance
/// vectors and checks symmetry and agreement within `tol`.
pub fn verify_inspection(rec: &InspectionRecord, tol: f64) -> Result<()> {
    let fail = |m: String| Err(Error::InvalidInput(format!("{}: {m}", rec.video_id)));
    for u in &rec.units {
        let (Some(a), Some(adj), Some(sums)) = (&u.relevance, &u.adjacency, &u.row_sums) else {
            continue;
        };
        let n = a.len();
        if adj.len() != n || sums.len() != n {
            return fail(format!("{} has inconsistent sizes", u.level));
        }
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                if adj[i][j] != adj[j][i] {
                    return fail(format!("{} adjacency is not symmetric at ({i}, {j})", u.level));
                }
                let dot: f64 = a[i].iter().zip(&a[j]).map(|(x, y)| x * y).sum();
                if (dot - adj[i][j]).abs() > tol {
                    return fail(format!("{} A[{i}][{j}] = {} but a_i . a_j = {dot}", u.level, adj[i][j]));
                }
                row += dot;
            }
            if (row - sums[i]).abs() > tol {
                return fail(format!("{} row sum {i}: exported {} vs recomputed {row}", u.level, sums[i]));
            }
        }
    }
    Ok(())
}
