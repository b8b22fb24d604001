//! Hybrid time domains, sampled hybrid arcs and their algebra.
//!
//! Arcs are stored as per-jump segments of samples `(t, x)`. The first and
//! last sample of each segment are the exact endpoints of the corresponding
//! interval of the hybrid time domain; values between samples are linear.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecops;
use crate::State;

/// A hybrid time `(t, j)`: flow time and jump count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridTime {
    pub t: f64,
    pub j: usize,
}

impl HybridTime {
    pub const ZERO: HybridTime = HybridTime { t: 0.0, j: 0 };

    pub fn new(t: f64, j: usize) -> Self {
        Self { t, j }
    }

    /// `t + j`, the quantity all length comparisons use.
    pub fn length(&self) -> f64 {
        self.t + self.j as f64
    }
}

impl PartialOrd for HybridTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.length().partial_cmp(&other.length())? {
            Ordering::Equal => Some(self.j.cmp(&other.j)),
            o => Some(o),
        }
    }
}

/// One interval `([t_start, t_end], j)` of a hybrid time domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64, usize)", into = "(f64, f64, usize)")]
pub struct Interval {
    pub t_start: f64,
    pub t_end: f64,
    pub j: usize,
}

impl From<(f64, f64, usize)> for Interval {
    fn from((t_start, t_end, j): (f64, f64, usize)) -> Self {
        Self { t_start, t_end, j }
    }
}

impl From<Interval> for (f64, f64, usize) {
    fn from(i: Interval) -> Self {
        (i.t_start, i.t_end, i.j)
    }
}

/// A hybrid time domain `([t_0,t_1],0) ∪ ([t_1,t_2],1) ∪ …`.
///
/// An unbounded flow tail is represented by `t_end = +∞` on the last interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Interval>", into = "Vec<Interval>")]
pub struct HybridTimeDomain {
    intervals: Vec<Interval>,
}

impl TryFrom<Vec<Interval>> for HybridTimeDomain {
    type Error = Error;
    fn try_from(v: Vec<Interval>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<HybridTimeDomain> for Vec<Interval> {
    fn from(d: HybridTimeDomain) -> Self {
        d.intervals
    }
}

impl HybridTimeDomain {
    pub fn new(intervals: Vec<Interval>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::InvalidDomain("no intervals".into()));
        }
        if intervals[0].t_start != 0.0 {
            return Err(Error::InvalidDomain("domain must start at t = 0".into()));
        }
        for (idx, iv) in intervals.iter().enumerate() {
            if iv.j != idx {
                return Err(Error::InvalidDomain(format!("interval {idx} has jump index {}", iv.j)));
            }
            if !(iv.t_start <= iv.t_end) {
                return Err(Error::InvalidDomain(format!("interval {idx} has t_start > t_end")));
            }
            if iv.t_end.is_infinite() && idx + 1 != intervals.len() {
                return Err(Error::InvalidDomain("only the last interval may be unbounded".into()));
            }
            if idx > 0 && intervals[idx - 1].t_end != iv.t_start {
                return Err(Error::InvalidDomain(format!(
                    "interval {idx} does not start where interval {} ends",
                    idx - 1
                )));
            }
        }
        Ok(Self { intervals })
    }

    /// The trivial domain `{(0,0)}`.
    pub fn trivial() -> Self {
        Self {
            intervals: vec![Interval {
                t_start: 0.0,
                t_end: 0.0,
                j: 0,
            }],
        }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn contains(&self, at: HybridTime) -> bool {
        self.intervals
            .get(at.j)
            .is_some_and(|iv| iv.t_start <= at.t && at.t <= iv.t_end)
    }

    pub fn is_bounded(&self) -> bool {
        self.intervals.last().unwrap().t_end.is_finite()
    }

    pub fn last_time(&self) -> HybridTime {
        let iv = self.intervals.last().unwrap();
        HybridTime::new(iv.t_end, iv.j)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("finite domains serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `sup { t + j : (t, j) ∈ E }`; `+∞` for unbounded domains.
pub fn length(domain: &HybridTimeDomain) -> f64 {
    let last = domain.intervals.last().unwrap();
    last.t_end + last.j as f64
}

/// A hybrid sequence domain: a staircase of `(k, j)` pairs from `(0, 0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridSequenceDomain {
    steps: Vec<(usize, usize)>,
}

impl HybridSequenceDomain {
    pub fn new(steps: Vec<(usize, usize)>) -> Result<Self> {
        if steps.first() != Some(&(0, 0)) {
            return Err(Error::InvalidDomain("sequence domain must start at (0,0)".into()));
        }
        for w in steps.windows(2) {
            let (k0, j0) = w[0];
            let (k1, j1) = w[1];
            let ok = (k1 == k0 + 1 && j1 == j0) || (k1 == k0 && j1 == j0 + 1);
            if !ok {
                return Err(Error::InvalidDomain(format!(
                    "step ({k0},{j0}) -> ({k1},{j1}) is not a unit staircase move"
                )));
            }
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[(usize, usize)] {
        &self.steps
    }

    pub fn contains(&self, k: usize, j: usize) -> bool {
        // Points are sorted lexicographically by (j, k) along a staircase.
        self.steps.binary_search_by(|&(kk, jj)| (jj, kk).cmp(&(j, k))).is_ok()
    }

    pub fn last(&self) -> (usize, usize) {
        *self.steps.last().unwrap()
    }
}

/// A state trajectory on a hybrid sequence domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridSequence {
    pub domain: HybridSequenceDomain,
    pub values: Vec<State>,
}

impl HybridSequence {
    pub fn new(domain: HybridSequenceDomain, values: Vec<State>) -> Result<Self> {
        if domain.steps.len() != values.len() {
            return Err(Error::InvalidDomain(format!(
                "{} domain points but {} values",
                domain.steps.len(),
                values.len()
            )));
        }
        Ok(Self { domain, values })
    }

    pub fn get(&self, k: usize, j: usize) -> Option<&State> {
        self.domain
            .steps
            .binary_search_by(|&(kk, jj)| (jj, kk).cmp(&(j, k)))
            .ok()
            .map(|i| &self.values[i])
    }
}

/// Samples of an arc on one flow interval `([t_start, t_end], j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArcSegment {
    pub j: usize,
    pub times: Vec<f64>,
    pub values: Vec<State>,
}

impl ArcSegment {
    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn eval(&self, t: f64) -> Option<State> {
        if t < self.t_start() || t > self.t_end() {
            return None;
        }
        let idx = self.times.partition_point(|&s| s < t);
        if idx < self.times.len() && self.times[idx] == t {
            return Some(self.values[idx].clone());
        }
        let (t0, t1) = (self.times[idx - 1], self.times[idx]);
        let w = (t - t0) / (t1 - t0);
        Some(vecops::lerp(&self.values[idx - 1], &self.values[idx], w))
    }
}

/// A sampled hybrid arc.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridArc {
    dim: usize,
    segments: Vec<ArcSegment>,
}

impl HybridArc {
    pub fn new(dim: usize, segments: Vec<ArcSegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidDomain("arc has no segments".into()));
        }
        for (idx, seg) in segments.iter().enumerate() {
            if seg.j != idx {
                return Err(Error::InvalidDomain(format!("segment {idx} has j = {}", seg.j)));
            }
            if seg.times.is_empty() || seg.times.len() != seg.values.len() {
                return Err(Error::InvalidDomain(format!("segment {idx} sample mismatch")));
            }
            if seg.times.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidDomain(format!(
                    "segment {idx} times are not strictly increasing"
                )));
            }
            if let Some(v) = seg.values.iter().find(|v| v.len() != dim) {
                return Err(Error::Dimension {
                    expected: dim,
                    got: v.len(),
                });
            }
            if idx == 0 && seg.times[0] != 0.0 {
                return Err(Error::InvalidDomain("arc must start at t = 0".into()));
            }
            if idx > 0 && segments[idx - 1].t_end() != seg.t_start() {
                return Err(Error::InvalidDomain(format!(
                    "segment {idx} starts at {} but segment {} ends at {}",
                    seg.t_start(),
                    idx - 1,
                    segments[idx - 1].t_end()
                )));
            }
        }
        Ok(Self { dim, segments })
    }

    /// The trivial arc `{(0,0)} -> x`.
    pub fn trivial(x: State) -> Self {
        Self {
            dim: x.len(),
            segments: vec![ArcSegment {
                j: 0,
                times: vec![0.0],
                values: vec![x],
            }],
        }
    }

    /// A flow-only arc sampling `f` on `[0, t_end]` with `n` uniform steps.
    pub fn from_fn(dim: usize, t_end: f64, n: usize, f: impl Fn(f64) -> State) -> Self {
        let n = n.max(1);
        let times: Vec<f64> = if t_end == 0.0 {
            vec![0.0]
        } else {
            (0..=n)
                .map(|i| if i == n { t_end } else { t_end * i as f64 / n as f64 })
                .collect()
        };
        let values = times.iter().map(|&t| f(t)).collect();
        Self::new(dim, vec![ArcSegment { j: 0, times, values }]).expect("uniform grid is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn segments(&self) -> &[ArcSegment] {
        &self.segments
    }

    pub fn domain(&self) -> HybridTimeDomain {
        HybridTimeDomain {
            intervals: self
                .segments
                .iter()
                .map(|s| Interval {
                    t_start: s.t_start(),
                    t_end: s.t_end(),
                    j: s.j,
                })
                .collect(),
        }
    }

    pub fn length(&self) -> f64 {
        self.end_time().length()
    }

    pub fn end_time(&self) -> HybridTime {
        let s = self.segments.last().unwrap();
        HybridTime::new(s.t_end(), s.j)
    }

    pub fn initial_value(&self) -> &State {
        &self.segments[0].values[0]
    }

    pub fn final_value(&self) -> &State {
        self.segments.last().unwrap().values.last().unwrap()
    }

    pub fn contains(&self, at: HybridTime) -> bool {
        self.segments
            .get(at.j)
            .is_some_and(|s| s.t_start() <= at.t && at.t <= s.t_end())
    }

    pub fn eval(&self, at: HybridTime) -> Result<State> {
        self.segments
            .get(at.j)
            .and_then(|s| s.eval(at.t))
            .ok_or(Error::NotInDomain { t: at.t, j: at.j })
    }

    /// Every sample as `(t, j, x)`, in domain order.
    pub fn samples(&self) -> impl Iterator<Item = (f64, usize, &State)> {
        self.segments
            .iter()
            .flat_map(|s| s.times.iter().zip(&s.values).map(move |(&t, x)| (t, s.j, x)))
    }

    pub fn max_norm(&self) -> f64 {
        self.samples().map(|(_, _, x)| vecops::norm(x)).fold(0.0, f64::max)
    }

    pub fn graph(&self) -> HybridGraph {
        HybridGraph::from_points(
            self.samples()
                .map(|(t, j, x)| GraphPoint { t, j, x: x.clone() })
                .collect(),
        )
    }

    /// Domain points `(t, j)` up to and including `at` (exact at `at`).
    pub fn restrict_upto(&self, at: HybridTime) -> Result<HybridArc> {
        if !self.contains(at) {
            return Err(Error::NotInDomain { t: at.t, j: at.j });
        }
        let mut segments: Vec<ArcSegment> = self.segments[..at.j].to_vec();
        let seg = &self.segments[at.j];
        let keep = seg.times.partition_point(|&t| t < at.t);
        let mut times = seg.times[..keep].to_vec();
        let mut values = seg.values[..keep].to_vec();
        times.push(at.t);
        values.push(seg.eval(at.t).unwrap());
        segments.push(ArcSegment { j: at.j, times, values });
        Ok(HybridArc {
            dim: self.dim,
            segments,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,j");
        for i in 0..self.dim {
            write!(out, ",x_{i}").unwrap();
        }
        out.push('\n');
        for (t, j, x) in self.samples() {
            write!(out, "{t:?},{j}").unwrap();
            for v in x {
                write!(out, ",{v:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(s: &str) -> Result<Self> {
        let mut lines = s.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty arc csv".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 3 || cols[0] != "t" || cols[1] != "j" {
            return Err(Error::Parse(format!("unexpected arc csv header: {header}")));
        }
        let dim = cols.len() - 2;
        let mut segments: Vec<ArcSegment> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 2 {
                return Err(Error::Parse(format!("row {} has {} fields", lineno + 2, fields.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", lineno + 2)))
            };
            let t = num(fields[0])?;
            let j: usize = fields[1]
                .parse()
                .map_err(|e| Error::Parse(format!("row {}: {e}", lineno + 2)))?;
            let x = fields[2..].iter().map(|f| num(f)).collect::<Result<State>>()?;
            match segments.last_mut() {
                Some(seg) if seg.j == j => {
                    seg.times.push(t);
                    seg.values.push(x);
                }
                _ => segments.push(ArcSegment {
                    j,
                    times: vec![t],
                    values: vec![x],
                }),
            }
        }
        Self::new(dim, segments)
    }
}

/// `φ^{(s,i)}(t,j) = φ(s+t, i+j)`.
pub fn tail(arc: &HybridArc, at: HybridTime) -> Result<HybridArc> {
    if !arc.contains(at) {
        return Err(Error::NotInDomain { t: at.t, j: at.j });
    }
    let mut segments = Vec::with_capacity(arc.segments.len() - at.j);
    let first = &arc.segments[at.j];
    let skip = first.times.partition_point(|&t| t < at.t);
    let mut times = vec![0.0];
    let mut values = vec![first.eval(at.t).unwrap()];
    let from = if first.times.get(skip) == Some(&at.t) {
        skip + 1
    } else {
        skip
    };
    for idx in from..first.times.len() {
        times.push(first.times[idx] - at.t);
        values.push(first.values[idx].clone());
    }
    segments.push(ArcSegment { j: 0, times, values });
    for seg in &arc.segments[at.j + 1..] {
        segments.push(ArcSegment {
            j: seg.j - at.j,
            times: seg.times.iter().map(|t| t - at.t).collect(),
            values: seg.values.clone(),
        });
    }
    Ok(HybridArc { dim: arc.dim, segments })
}

/// Restriction of `arc` to `t + j ≤ big_t`.
pub fn truncate(arc: &HybridArc, big_t: f64) -> Result<HybridArc> {
    if big_t < 0.0 || big_t.is_nan() {
        return Err(Error::InvalidDomain(format!("truncation bound {big_t} < 0")));
    }
    let mut segments = Vec::new();
    for seg in &arc.segments {
        let jf = seg.j as f64;
        if seg.t_start() + jf > big_t {
            break;
        }
        let keep = seg.times.partition_point(|&t| t + jf <= big_t);
        let mut times = seg.times[..keep].to_vec();
        let mut values = seg.values[..keep].to_vec();
        if keep < seg.times.len() {
            let cut = big_t - jf;
            if cut > *times.last().unwrap() {
                values.push(seg.eval(cut).unwrap());
                times.push(cut);
            }
        }
        segments.push(ArcSegment {
            j: seg.j,
            times,
            values,
        });
    }
    Ok(HybridArc { dim: arc.dim, segments })
}

/// Concatenation of `first` (up to `at`) and `second` shifted to start at `at`.
///
/// `tol` bounds `|first(at) - second(0,0)|`; `0` demands equality.
pub fn concatenate(first: &HybridArc, second: &HybridArc, at: HybridTime, tol: f64) -> Result<HybridArc> {
    let head = first.restrict_upto(at)?;
    let gap = vecops::dist(head.final_value(), second.initial_value());
    if gap > tol {
        return Err(Error::EndpointMismatch { gap, tol });
    }
    if first.dim != second.dim {
        return Err(Error::Dimension {
            expected: first.dim,
            got: second.dim,
        });
    }
    let mut segments = head.segments;
    for seg in &second.segments {
        let times: Vec<f64> = seg.times.iter().map(|t| t + at.t).collect();
        if seg.j == 0 {
            let last = segments.last_mut().unwrap();
            last.times.extend_from_slice(&times[1..]);
            last.values.extend_from_slice(&seg.values[1..]);
        } else {
            segments.push(ArcSegment {
                j: seg.j + at.j,
                times,
                values: seg.values.clone(),
            });
        }
    }
    HybridArc::new(first.dim, segments)
}

/// A point `(t, j, x)` of a (possibly set-valued) hybrid graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphPoint {
    pub t: f64,
    pub j: usize,
    pub x: State,
}

impl GraphPoint {
    pub fn time(&self) -> HybridTime {
        HybridTime::new(self.t, self.j)
    }
}

/// Max-norm distance in `(t, j, x)` space: `max(|Δt|, |Δj|, |Δx|)`.
pub fn graph_metric(a: &GraphPoint, b: &GraphPoint) -> f64 {
    let dj = (a.j as f64 - b.j as f64).abs();
    (a.t - b.t).abs().max(dj).max(vecops::dist(&a.x, &b.x))
}

/// A finite sample of the graph of a set-valued hybrid mapping.
///
/// Points are kept sorted by `(j, t)`; several points may share a hybrid time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HybridGraph {
    points: Vec<GraphPoint>,
}

impl HybridGraph {
    pub fn from_points(mut points: Vec<GraphPoint>) -> Self {
        points.sort_by(|a, b| a.j.cmp(&b.j).then(a.t.total_cmp(&b.t)));
        Self { points }
    }

    pub fn points(&self) -> &[GraphPoint] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Distinct hybrid times in domain order.
    pub fn times(&self) -> Vec<HybridTime> {
        let mut out: Vec<HybridTime> = Vec::new();
        for p in &self.points {
            if out.last().is_none_or(|h| h.t != p.t || h.j != p.j) {
                out.push(p.time());
            }
        }
        out
    }

    pub fn values_at(&self, at: HybridTime) -> Vec<&State> {
        self.points
            .iter()
            .filter(|p| p.t == at.t && p.j == at.j)
            .map(|p| &p.x)
            .collect()
    }

    /// Hybrid times carrying more than one distinct value.
    pub fn multivalued_times(&self) -> Vec<HybridTime> {
        self.times()
            .into_iter()
            .filter(|&h| {
                let vals = self.values_at(h);
                vals.iter().any(|v| *v != vals[0])
            })
            .collect()
    }

    pub fn length(&self) -> f64 {
        self.points.iter().map(|p| p.t + p.j as f64).fold(0.0, f64::max)
    }

    /// Graph points with `t + j ≤ big_t`.
    pub fn restrict(&self, big_t: f64) -> HybridGraph {
        HybridGraph {
            points: self
                .points
                .iter()
                .filter(|p| p.t + p.j as f64 <= big_t)
                .cloned()
                .collect(),
        }
    }

    /// Shifted graph of the tail after `at`.
    pub fn tail(&self, at: HybridTime) -> HybridGraph {
        HybridGraph {
            points: self
                .points
                .iter()
                .filter(|p| p.j >= at.j && p.t >= at.t)
                .map(|p| GraphPoint {
                    t: p.t - at.t,
                    j: p.j - at.j,
                    x: p.x.clone(),
                })
                .collect(),
        }
    }

    /// Distance from `q` to the nearest graph point under [`graph_metric`].
    pub fn distance_to(&self, q: &GraphPoint) -> f64 {
        let mut best = f64::INFINITY;
        let pts = &self.points;
        let mut start = 0;
        while start < pts.len() {
            let j = pts[start].j;
            let end = start + pts[start..].partition_point(|p| p.j == j);
            if ((j as f64) - (q.j as f64)).abs() < best {
                let group = &pts[start..end];
                let mid = group.partition_point(|p| p.t < q.t);
                for p in group[mid..].iter() {
                    if p.t - q.t >= best {
                        break;
                    }
                    best = best.min(graph_metric(p, q));
                }
                for p in group[..mid].iter().rev() {
                    if q.t - p.t >= best {
                        break;
                    }
                    best = best.min(graph_metric(p, q));
                }
            }
            start = end;
        }
        best
    }
}

/// Which inclusion of a closeness test a witness violates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// A point of `gph a` (with `t+j ≤ T`) far from `gph b`.
    AInB,
    /// A point of `gph b` (with `t+j ≤ T`) far from `gph a`.
    BInA,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Closeness {
    pub close: bool,
    /// `sup` over restricted `gph a` of the distance to `gph b`.
    pub sup_a_to_b: f64,
    pub sup_b_to_a: f64,
    pub witness: Option<(Side, GraphPoint)>,
}

impl Closeness {
    pub fn distance(&self) -> f64 {
        self.sup_a_to_b.max(self.sup_b_to_a)
    }
}

fn one_sided(from: &HybridGraph, to: &HybridGraph, big_t: f64) -> (f64, Option<GraphPoint>) {
    let mut worst = 0.0;
    let mut arg = None;
    for p in from.points.iter().filter(|p| p.t + p.j as f64 <= big_t) {
        let d = to.distance_to(p);
        if d > worst || arg.is_none() {
            worst = d.max(worst);
            arg = Some(p.clone());
        }
    }
    (worst, arg)
}

/// Two-sided graph distance on `t + j <= T`, or `None` as soon as it is
/// known to reach `cap`.
pub fn graph_distance_below(a: &HybridGraph, b: &HybridGraph, big_t: f64, cap: f64) -> Option<f64> {
    let mut worst: f64 = 0.0;
    for (from, to) in [(a, b), (b, a)] {
        for p in from.points.iter().filter(|p| p.t + p.j as f64 <= big_t) {
            worst = worst.max(to.distance_to(p));
            if cap.is_finite() && worst >= cap {
                return None;
            }
        }
    }
    Some(worst)
}

/// Two-sided `(T, ε)` graph closeness on sampled graphs.
pub fn graph_closeness(a: &HybridGraph, b: &HybridGraph, big_t: f64, eps: f64) -> Closeness {
    let (ab, wa) = one_sided(a, b, big_t);
    let (ba, wb) = one_sided(b, a, big_t);
    let witness = if ab > eps {
        wa.map(|p| (Side::AInB, p))
    } else if ba > eps {
        wb.map(|p| (Side::BInA, p))
    } else {
        None
    };
    Closeness {
        close: ab <= eps && ba <= eps,
        sup_a_to_b: ab,
        sup_b_to_a: ba,
        witness,
    }
}

/// Result of a generalized concatenation: a set-valued graph plus its
/// concatenation times and segment lengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedConcatenation {
    pub graph: HybridGraph,
    pub concatenation_times: Vec<HybridTime>,
    pub segment_lengths: Vec<f64>,
}

/// Generalized concatenation of `(arc, end)` links.
///
/// Each link is used up to its `end`; at each concatenation time the mapping
/// holds both the previous link's end value and the next link's start value.
pub fn generalized_concatenate(links: &[(HybridArc, HybridTime)]) -> Result<GeneralizedConcatenation> {
    let mut points = Vec::new();
    let mut offset = HybridTime::ZERO;
    let mut times = Vec::new();
    let mut lengths = Vec::new();
    for (idx, (arc, end)) in links.iter().enumerate() {
        let piece = arc.restrict_upto(*end)?;
        for (t, j, x) in piece.samples() {
            points.push(GraphPoint {
                t: t + offset.t,
                j: j + offset.j,
                x: x.clone(),
            });
        }
        lengths.push(end.length());
        offset = HybridTime::new(offset.t + end.t, offset.j + end.j);
        if idx + 1 < links.len() {
            times.push(offset);
        }
    }
    let mut graph = HybridGraph::from_points(points);
    graph.points.dedup();
    Ok(GeneralizedConcatenation {
        graph,
        concatenation_times: times,
        segment_lengths: lengths,
    })
}

/// Earliest domain point `(t, j)` at or after `from` whose length measured
/// from `from` is at least `tau`; that length is always `< tau + 1`.
fn cut_after(arc: &HybridArc, from: HybridTime, tau: f64) -> Option<HybridTime> {
    for seg in arc.segments.get(from.j..)? {
        let dj = (seg.j - from.j) as f64;
        if (seg.t_end() - from.t) + dj < tau {
            continue;
        }
        let t0 = if seg.j == from.j { from.t } else { seg.t_start() };
        if (t0 - from.t) + dj >= tau {
            return Some(HybridTime::new(t0, seg.j));
        }
        let mut t = from.t + (tau - dj);
        while (t - from.t) + dj < tau {
            t = t.next_up();
        }
        return Some(HybridTime::new(t.min(seg.t_end()), seg.j));
    }
    None
}

/// `φ` between two domain points, shifted to start at `(0, 0)`.
///
/// Endpoint values are evaluated on `arc` itself, so adjacent pieces agree
/// exactly at their shared point.
fn piece_between(arc: &HybridArc, from: HybridTime, to: HybridTime) -> Result<HybridArc> {
    let first = arc.eval(from)?;
    let last = arc.eval(to)?;
    let mut segments = Vec::with_capacity(to.j + 1 - from.j);
    for seg in &arc.segments[from.j..=to.j] {
        let lo = if seg.j == from.j { from.t } else { seg.t_start() };
        let hi = if seg.j == to.j { to.t } else { seg.t_end() };
        let mut times = vec![lo - from.t];
        let mut values = vec![if seg.j == from.j {
            first.clone()
        } else {
            seg.values[0].clone()
        }];
        for (t, v) in seg.times.iter().zip(&seg.values) {
            if lo < *t && *t < hi {
                times.push(t - from.t);
                values.push(v.clone());
            }
        }
        if hi > lo {
            times.push(hi - from.t);
            values.push(if seg.j == to.j {
                last.clone()
            } else {
                seg.values.last().unwrap().clone()
            });
        }
        segments.push(ArcSegment {
            j: seg.j - from.j,
            times,
            values,
        });
    }
    HybridArc::new(arc.dim, segments)
}

/// Splits an arc into consecutive pieces whose lengths lie in `[tau, 2 tau + 1)`.
///
/// Every piece but the last ends at a cut point with length in
/// `[tau, tau + 1)`. Concatenating the pieces at their end times gives back
/// the original arc.
pub fn split_long(arc: &HybridArc, tau: f64) -> Result<Vec<HybridArc>> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    let total = arc.length();
    if total <= tau {
        return Err(Error::NothingToSplit { length: total, tau });
    }
    let end = arc.end_time();
    let mut pieces = Vec::new();
    let mut from = HybridTime::ZERO;
    while (end.t - from.t) + (end.j - from.j) as f64 >= 2.0 * tau + 1.0 {
        let cut = cut_after(arc, from, tau).expect("remaining length exceeds tau");
        pieces.push(piece_between(arc, from, cut)?);
        from = cut;
    }
    pieces.push(tail(arc, from)?);
    Ok(pieces)
}

/// Something that can produce ever longer prefixes of an unbounded arc.
pub trait ArcSource {
    /// A prefix of length at least `min_length`.
    fn prefix(&self, min_length: f64) -> HybridArc;
}

impl<F: Fn(f64) -> HybridArc> ArcSource for F {
    fn prefix(&self, min_length: f64) -> HybridArc {
        self(min_length)
    }
}

/// Lazy `split_long` over an unbounded arc; yields pieces of length in `[tau, tau + 1)`.
pub struct SplitStream<S> {
    source: S,
    tau: f64,
    offset: HybridTime,
}

impl<S: ArcSource> SplitStream<S> {
    pub fn new(source: S, tau: f64) -> Self {
        Self {
            source,
            tau,
            offset: HybridTime::ZERO,
        }
    }
}

impl<S: ArcSource> Iterator for SplitStream<S> {
    type Item = HybridArc;

    fn next(&mut self) -> Option<HybridArc> {
        let need = self.offset.length() + 2.0 * self.tau + 2.0;
        let prefix = self.source.prefix(need);
        let cut = cut_after(&prefix, self.offset, self.tau)?;
        let piece = piece_between(&prefix, self.offset, cut).ok()?;
        self.offset = cut;
        Some(piece)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flow_jump_arc() -> HybridArc {
        // ([0,2],0) ∪ ([2,3],1), x = t on the first interval, t + 10 on the second
        HybridArc::new(
            1,
            vec![
                ArcSegment {
                    j: 0,
                    times: vec![0.0, 0.5, 1.0, 1.5, 2.0],
                    values: vec![vec![0.0], vec![0.5], vec![1.0], vec![1.5], vec![2.0]],
                },
                ArcSegment {
                    j: 1,
                    times: vec![2.0, 2.5, 3.0],
                    values: vec![vec![12.0], vec![12.5], vec![13.0]],
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn length_examples() {
        assert_eq!(length(&HybridTimeDomain::trivial()), 0.0);
        let d = HybridTimeDomain::new(vec![(0.0, 1.0, 0).into(), (1.0, 1.0, 1).into(), (1.0, 2.5, 2).into()]).unwrap();
        assert_eq!(length(&d), 4.5);
        let unbounded = HybridTimeDomain::new(vec![(0.0, 1.0, 0).into(), (1.0, f64::INFINITY, 1).into()]).unwrap();
        assert_eq!(length(&unbounded), f64::INFINITY);
        assert!(!unbounded.is_bounded());
    }

    #[test]
    fn domain_validation() {
        assert!(HybridTimeDomain::new(vec![(0.0, 1.0, 0).into(), (1.5, 2.0, 1).into()]).is_err());
        assert!(HybridTimeDomain::new(vec![(0.0, 1.0, 1).into()]).is_err());
        assert!(HybridTimeDomain::new(vec![(0.5, 1.0, 0).into()]).is_err());
        assert!(HybridTimeDomain::new(vec![]).is_err());
    }

    #[test]
    fn domain_json() {
        let d = flow_jump_arc().domain();
        let s = d.to_json();
        assert_eq!(s, "[[0.0,2.0,0],[2.0,3.0,1]]");
        assert_eq!(HybridTimeDomain::from_json(&s).unwrap(), d);
        assert!(HybridTimeDomain::from_json("[[0.0,1.0,0],[2.0,3.0,1]]").is_err());
    }

    #[test]
    fn tail_identity_and_shift() {
        let arc = flow_jump_arc();
        assert_eq!(tail(&arc, HybridTime::ZERO).unwrap(), arc);
        let tl = tail(&arc, HybridTime::new(2.0, 0)).unwrap();
        assert_eq!(
            tl.domain(),
            HybridTimeDomain::new(vec![(0.0, 0.0, 0).into(), (0.0, 1.0, 1).into()]).unwrap()
        );
        assert_eq!(tl.eval(HybridTime::new(0.5, 1)).unwrap(), vec![12.5]);
        assert!(matches!(
            tail(&arc, HybridTime::new(2.5, 0)),
            Err(Error::NotInDomain { .. })
        ));
    }

    #[test]
    fn tail_between_samples_interpolates() {
        let arc = flow_jump_arc();
        let tl = tail(&arc, HybridTime::new(0.75, 0)).unwrap();
        assert_eq!(tl.initial_value(), &vec![0.75]);
        assert_eq!(tl.segments()[0].times[1], 0.25);
    }

    #[test]
    fn truncate_examples() {
        let arc = HybridArc::from_fn(1, 3.0, 6, |t| vec![t]);
        let tr = truncate(&arc, 1.5).unwrap();
        assert_eq!(tr.domain(), HybridTimeDomain::new(vec![(0.0, 1.5, 0).into()]).unwrap());
        assert_eq!(truncate(&arc, arc.length()).unwrap(), arc);
        let c = HybridArc::from_fn(2, 1.0, 4, |_| vec![1.0, 2.0]);
        let p = truncate(&c, 0.0).unwrap();
        assert_eq!(p, HybridArc::trivial(vec![1.0, 2.0]));
        assert!(truncate(&c, -1.0).is_err());
        let fj = flow_jump_arc();
        assert_eq!(truncate(&fj, fj.length()).unwrap(), fj);
        // T = 2.5 keeps all of j = 0 and the jump point (2, 1)
        let tr = truncate(&fj, 3.0).unwrap();
        assert_eq!(tr.end_time(), HybridTime::new(2.0, 1));
    }

    #[test]
    fn concatenate_examples() {
        let a = HybridArc::from_fn(1, 1.0, 4, |t| vec![t]);
        let b = HybridArc::from_fn(1, 2.0, 8, |t| vec![1.0 + t]);
        let c = concatenate(&a, &b, HybridTime::new(1.0, 0), 0.0).unwrap();
        assert_eq!(c.length(), 3.0);
        assert_eq!(c.eval(HybridTime::new(2.5, 0)).unwrap(), vec![2.5]);

        let neutral = HybridArc::trivial(a.final_value().clone());
        assert_eq!(concatenate(&a, &neutral, a.end_time(), 0.0).unwrap(), a);

        // jump-only second arc: domain {(0,0),(0,1),(0,2)}
        let jumps = HybridArc::new(
            1,
            (0..3)
                .map(|j| ArcSegment {
                    j,
                    times: vec![0.0],
                    values: vec![vec![2.0]],
                })
                .collect(),
        )
        .unwrap();
        let fj = flow_jump_arc();
        let at = HybridTime::new(2.5, 1);
        let first = HybridArc::new(
            1,
            vec![fj.segments()[0].clone(), {
                let mut s = fj.segments()[1].clone();
                s.values = vec![vec![2.0]; 3];
                s
            }],
        )
        .unwrap();
        let c = concatenate(&first, &jumps, at, 0.0).unwrap();
        let d = c.domain();
        assert_eq!(d.intervals().len(), 4);
        assert_eq!(
            d.intervals()[3],
            Interval {
                t_start: 2.5,
                t_end: 2.5,
                j: 3
            }
        );
        assert_eq!(c.length(), at.length() + jumps.length());

        let far = HybridArc::trivial(vec![5.0]);
        assert!(matches!(
            concatenate(&a, &far, a.end_time(), 0.1),
            Err(Error::EndpointMismatch { .. })
        ));
        assert!(concatenate(&a, &far, a.end_time(), 4.0).is_ok());
    }

    #[test]
    fn generalized_concatenation_counts_gaps() {
        let a = HybridArc::from_fn(1, 2.0, 4, |t| vec![t]);
        let single = generalized_concatenate(&[(a.clone(), HybridTime::new(1.0, 0))]).unwrap();
        assert_eq!(single.graph, truncate(&a, 1.0).unwrap().graph());
        assert!(single.graph.multivalued_times().is_empty());

        let b = HybridArc::from_fn(1, 1.0, 2, |t| vec![1.0 + t]);
        let joined =
            generalized_concatenate(&[(a.clone(), HybridTime::new(1.0, 0)), (b.clone(), b.end_time())]).unwrap();
        assert!(joined.graph.multivalued_times().is_empty());
        let plain = concatenate(&a, &b, HybridTime::new(1.0, 0), 0.0).unwrap();
        assert_eq!(joined.graph, plain.graph());

        let shifted = HybridArc::from_fn(1, 1.0, 2, |t| vec![1.25 + t]);
        let gap =
            generalized_concatenate(&[(a, HybridTime::new(1.0, 0)), (shifted.clone(), shifted.end_time())]).unwrap();
        assert_eq!(gap.graph.multivalued_times(), vec![HybridTime::new(1.0, 0)]);
        assert_eq!(gap.concatenation_times, vec![HybridTime::new(1.0, 0)]);
        assert_eq!(gap.segment_lengths, vec![1.0, 1.0]);
    }

    #[test]
    fn split_long_examples() {
        let arc = HybridArc::from_fn(1, 5.0, 50, |t| vec![t.sin()]);
        let parts = split_long(&arc, 2.0).unwrap();
        assert_eq!(parts.len(), 2);
        let cut = parts[0].length();
        assert!((2.0..3.0).contains(&cut));

        let short = HybridArc::from_fn(1, 4.5, 9, |t| vec![t]);
        let parts = split_long(&short, 2.0).unwrap();
        assert_eq!(parts, vec![short.clone()]);

        assert!(matches!(split_long(&short, 5.0), Err(Error::NothingToSplit { .. })));
    }

    #[test]
    fn split_stream_on_unbounded_arc() {
        // unbounded flow with a jump every 0.7 time units
        let source = |min_len: f64| {
            let mut segs = Vec::new();
            let mut t0 = 0.0;
            let mut j = 0;
            loop {
                let times: Vec<f64> = (0..=7).map(|i| t0 + 0.1 * i as f64).collect();
                let values = times.iter().map(|t: &f64| vec![t.cos()]).collect();
                let end = *times.last().unwrap();
                segs.push(ArcSegment { j, times, values });
                if end + j as f64 >= min_len {
                    break;
                }
                t0 = end;
                j += 1;
            }
            HybridArc::new(1, segs).unwrap()
        };
        let lens: Vec<f64> = SplitStream::new(source, 1.0).take(10).map(|p| p.length()).collect();
        assert_eq!(lens.len(), 10);
        for l in lens {
            assert!((1.0..3.0).contains(&l), "{l}");
        }
    }

    #[test]
    fn closeness_examples() {
        let a = HybridArc::from_fn(2, 3.0, 30, |t| vec![t.cos(), t.sin()]).graph();
        let c = graph_closeness(&a, &a, 3.0, 0.0);
        assert!(c.close);
        let eps = 0.1;
        let b = HybridGraph::from_points(
            a.points()
                .iter()
                .map(|p| GraphPoint {
                    t: p.t,
                    j: p.j,
                    x: vec![p.x[0] + 2.0 * eps, p.x[1]],
                })
                .collect(),
        );
        let c = graph_closeness(&a, &b, 3.0, eps);
        assert!(!c.close);
        assert!(c.witness.is_some());
        let rev = graph_closeness(&b, &a, 3.0, eps);
        assert_eq!(c.distance(), rev.distance());
    }

    #[test]
    fn jump_mismatch_costs_at_least_one() {
        let a = HybridGraph::from_points(vec![GraphPoint {
            t: 0.0,
            j: 0,
            x: vec![0.0],
        }]);
        let b = HybridGraph::from_points(vec![GraphPoint {
            t: 0.0,
            j: 1,
            x: vec![0.0],
        }]);
        assert_eq!(a.distance_to(&b.points()[0]), 1.0);
    }

    #[test]
    fn csv_roundtrip_preserves_bits() {
        let arc = flow_jump_arc();
        let back = HybridArc::from_csv(&arc.to_csv()).unwrap();
        assert_eq!(back, arc);
        let odd = HybridArc::from_fn(2, 0.3, 7, |t| vec![t.exp(), 1.0 / 3.0]);
        assert_eq!(HybridArc::from_csv(&odd.to_csv()).unwrap(), odd);
        assert!(HybridArc::from_csv("t,j,x_0\n0.0,0\n").is_err());
    }

    #[test]
    fn sequence_domain_staircase() {
        assert!(HybridSequenceDomain::new(vec![(0, 0), (1, 0), (1, 1), (2, 1)]).is_ok());
        assert!(HybridSequenceDomain::new(vec![(0, 0), (1, 1)]).is_err());
        assert!(HybridSequenceDomain::new(vec![(1, 0)]).is_err());
        let d = HybridSequenceDomain::new(vec![(0, 0), (0, 1), (1, 1)]).unwrap();
        assert!(d.contains(0, 1));
        assert!(!d.contains(1, 0));
    }
}
