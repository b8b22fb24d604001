use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid_time::HybridGraph;
use crate::vecops;
use crate::State;

/// Values above this norm make a graph count as unbounded.
pub const UNBOUNDED_NORM: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaEstimate {
    /// Representatives of the final tail cloud.
    pub points: Vec<State>,
    /// The `n` of the final cloud `S_n`.
    pub tail_threshold: f64,
    /// `(n_{i+1}, d_H(S_{n_i}, S_{n_{i+1}}))` for consecutive thresholds.
    pub hausdorff_trace: Vec<(f64, f64)>,
    pub eps: f64,
    /// The last trace entry is at most `eps`.
    pub converged: bool,
}

impl OmegaEstimate {
    pub fn distance_to(&self, y: &[f64]) -> f64 {
        cloud_distance(&self.points, y)
    }

    /// `max |x_i|` over the cloud for one coordinate.
    pub fn component_sup(&self, i: usize) -> f64 {
        self.points.iter().map(|p| p[i].abs()).fold(0.0, f64::max)
    }

    /// `sup_{x ∈ cloud} dist(x, A)` for an arbitrary target set.
    pub fn excess_over(&self, dist_to_target: impl Fn(&[f64]) -> f64) -> f64 {
        self.points.iter().map(|p| dist_to_target(p)).fold(0.0, f64::max)
    }
}

/// `{25, 50, 75, 90}%` of `length`.
pub fn default_thresholds(length: f64) -> Vec<f64> {
    [0.25, 0.5, 0.75, 0.9].iter().map(|f| f * length).collect()
}

pub fn cloud_distance(points: &[State], y: &[f64]) -> f64 {
    points.iter().map(|p| vecops::dist(p, y)).fold(f64::INFINITY, f64::min)
}

pub fn hausdorff(a: &[State], b: &[State]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() && b.is_empty() {
            0.0
        } else {
            f64::INFINITY
        };
    }
    let one = |from: &[State], to: &[State]| from.iter().map(|p| cloud_distance(to, p)).fold(0.0, f64::max);
    one(a, b).max(one(b, a))
}

/// One representative per voxel of side `cell`; the first value seen wins.
fn voxelize<'a>(values: impl Iterator<Item = &'a State>, cell: f64) -> Vec<State> {
    let mut seen: HashMap<Vec<i64>, ()> = HashMap::new();
    let mut out = Vec::new();
    for v in values {
        let key: Vec<i64> = v.iter().map(|c| (c / cell).floor() as i64).collect();
        if seen.insert(key, ()).is_none() {
            out.push(v.clone());
        }
    }
    out
}

/// Estimates `ω(φ) = ⋂ S_n` from the graph of a curve, using the clouds
/// `S_n = {φ(t,j) : t + j ≥ n}` at the given thresholds.
///
/// Clouds are thinned to one point per voxel of side `eps / 4`, which moves
/// Hausdorff distances by at most `eps / 2`.
pub fn omega_estimate(graph: &HybridGraph, thresholds: &[f64], eps: f64) -> Result<OmegaEstimate> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    if graph.is_empty() {
        return Err(Error::Horizon("empty graph".into()));
    }
    if let Some(p) = graph
        .points()
        .iter()
        .find(|p| !vecops::is_finite(&p.x) || vecops::norm(&p.x) > UNBOUNDED_NORM)
    {
        return Err(Error::Unbounded(format!("value {:?} at (t={}, j={})", p.x, p.t, p.j)));
    }
    let mut th = if thresholds.is_empty() {
        default_thresholds(graph.length())
    } else {
        thresholds.to_vec()
    };
    th.sort_by(f64::total_cmp);
    let last = *th.last().unwrap();
    if last >= graph.length() {
        return Err(Error::Horizon(format!(
            "threshold {last} is not below the domain length {}",
            graph.length()
        )));
    }
    let cell = eps / 4.0;
    let clouds: Vec<Vec<State>> = th
        .iter()
        .map(|&n| {
            voxelize(
                graph.points().iter().filter(|p| p.t + p.j as f64 >= n).map(|p| &p.x),
                cell,
            )
        })
        .collect();
    let trace: Vec<(f64, f64)> = clouds
        .windows(2)
        .zip(th.iter().skip(1))
        .map(|(w, &n)| (n, hausdorff(&w[0], &w[1])))
        .collect();
    let converged = trace.last().is_none_or(|&(_, d)| d <= eps);
    Ok(OmegaEstimate {
        points: clouds.into_iter().last().unwrap(),
        tail_threshold: last,
        hausdorff_trace: trace,
        eps,
        converged,
    })
}
