use serde::Serialize;

use super::{Graph, NodeId, Tensor};
use crate::error::Result;
use crate::scalar::Scalar;

/// Denominators below this are clamped so that near-zero gradients are
/// compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct LeafReport {
    pub index: usize,
    pub numel: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub leaves: Vec<LeafReport>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Set when the builder itself failed; the check then fails.
    pub error: Option<String>,
}

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares reverse-mode gradients of the scalar produced by `build` against
/// central finite differences with step `step`, one input element at a time.
pub fn grad_check<T, F>(build: F, inputs: &[Tensor<T>], step: f64, tolerance: f64) -> GradCheckReport
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[NodeId]) -> Result<NodeId>,
{
    match run(&build, inputs, step) {
        Ok(leaves) => {
            let max_rel_error = leaves.iter().map(|l| l.max_rel_error).fold(0.0, f64::max);
            GradCheckReport {
                leaves,
                max_rel_error,
                tolerance,
                passed: max_rel_error < tolerance,
                error: None,
            }
        }
        Err(e) => GradCheckReport {
            leaves: Vec::new(),
            max_rel_error: f64::INFINITY,
            tolerance,
            passed: false,
            error: Some(e.to_string()),
        },
    }
}

fn eval<T, F>(build: &F, inputs: &[Tensor<T>]) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let root = build(&mut g, &ids)?;
    Ok(g.value(root).data()[0].as_f64())
}

fn run<T, F>(build: &F, inputs: &[Tensor<T>], step: f64) -> Result<Vec<LeafReport>>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = build(&mut g, &ids)?;
    let grads = g.backward(root)?;

    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    let mut reports = Vec::with_capacity(inputs.len());
    for (li, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).map(|t| t.to_f64()).unwrap_or_else(|| vec![0.0; inputs[li].numel()]);
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for k in 0..inputs[li].numel() {
            let orig = work[li].data()[k];
            let h = T::of(step);
            let (up, down) = (orig + h, orig - h);
            work[li].data_mut()[k] = up;
            let fp = eval(build, &work)?;
            work[li].data_mut()[k] = down;
            let fm = eval(build, &work)?;
            work[li].data_mut()[k] = orig;
            let numeric = (fp - fm) / (up - down).as_f64();
            max_rel = max_rel.max(relative_error(analytic[k], numeric));
            max_abs = max_abs.max((analytic[k] - numeric).abs());
        }
        reports.push(LeafReport {
            index: li,
            numel: inputs[li].numel(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    Ok(reports)
}
