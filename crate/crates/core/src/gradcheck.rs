//! Central finite-difference oracle for tape gradients.
//!
//! The numeric side only evaluates forward values, so it is independent of
//! every backward rule it checks.

use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tape::{Graph, NodeId};
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(1, |analytic|, |numeric|)` seen.
    pub max_error: f64,
    /// (input index, flat element index) where `max_error` occurred.
    pub worst: (usize, usize),
    pub coords_checked: usize,
}

/// Absolute error for small magnitudes, relative error for large ones.
pub fn mixed_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn eval_loss<F>(build: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    Ok(g.value(loss).item())
}

/// Check every coordinate of every input.
pub fn check<F>(inputs: &[Tensor], h: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    check_sampled(inputs, h, usize::MAX, 0, build)
}

/// Check at most `per_input` seeded coordinates of each input.
pub fn check_sampled<F>(
    inputs: &[Tensor],
    h: f64,
    per_input: usize,
    seed: u64,
    build: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let grads = g.backward(loss)?;

    let mut rng = SplitMix64::new(seed);
    let mut work = inputs.to_vec();
    let mut out = GradCheck {
        max_error: 0.0,
        worst: (0, 0),
        coords_checked: 0,
    };
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).expect("param leaf has a gradient");
        let n = inputs[k].len();
        let coords: Vec<usize> = if n <= per_input {
            (0..n).collect()
        } else {
            let mut p = rng.permutation(n);
            p.truncate(per_input);
            p
        };
        for j in coords {
            let orig = work[k].data()[j];
            work[k].data_mut()[j] = orig + h;
            let up = eval_loss(&build, &work)?;
            work[k].data_mut()[j] = orig - h;
            let down = eval_loss(&build, &work)?;
            work[k].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = mixed_error(analytic.data()[j], numeric);
            if err > out.max_error {
                out.max_error = err;
                out.worst = (k, j);
            }
            out.coords_checked += 1;
        }
    }
    Ok(out)
}
