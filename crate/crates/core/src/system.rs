//! Hybrid inclusion data `(C, F, D, G)` and the operations built on it.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid_time::{HybridArc, HybridTime};
use crate::vecops;
use crate::State;

pub type Predicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;
pub type Projection = Arc<dyn Fn(&[f64]) -> State + Send + Sync>;

/// A closed subset of `R^d`, described by membership plus optional geometry.
#[derive(Clone)]
pub enum SetRegion {
    Everything,
    Empty,
    /// Axis-aligned box; infinite bounds are allowed.
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Ball {
        center: State,
        radius: f64,
    },
    /// `{x : r_in ≤ |x − center| ≤ r_out}`; `r_in = r_out` is a sphere.
    Annulus {
        center: State,
        r_in: f64,
        r_out: f64,
    },
    Points(Vec<State>),
    /// Cartesian product; each factor carries its dimension.
    Product(Vec<(SetRegion, usize)>),
    Intersection(Vec<SetRegion>),
    Union(Vec<SetRegion>),
    Custom {
        contains: Predicate,
        project: Option<Projection>,
        bbox: Option<(State, State)>,
    },
}

/// Serializable description of the common [`SetRegion`] shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionSpec {
    Everything,
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: State, radius: f64 },
    Annulus { center: State, r_in: f64, r_out: f64 },
    Points { points: Vec<State> },
}

impl RegionSpec {
    pub fn to_region(&self) -> Result<SetRegion> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        match self {
            RegionSpec::Everything => Ok(SetRegion::Everything),
            RegionSpec::Box { lo, hi } => {
                if lo.len() != hi.len() || lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
                    return bad("box needs lo <= hi componentwise");
                }
                Ok(SetRegion::Box {
                    lo: lo.clone(),
                    hi: hi.clone(),
                })
            }
            RegionSpec::Ball { center, radius } => {
                if !(*radius >= 0.0) {
                    return bad("ball radius must be nonnegative");
                }
                Ok(SetRegion::Ball {
                    center: center.clone(),
                    radius: *radius,
                })
            }
            RegionSpec::Annulus { center, r_in, r_out } => {
                if !(0.0 <= *r_in && r_in <= r_out) {
                    return bad("annulus needs 0 <= r_in <= r_out");
                }
                Ok(SetRegion::Annulus {
                    center: center.clone(),
                    r_in: *r_in,
                    r_out: *r_out,
                })
            }
            RegionSpec::Points { points } => Ok(SetRegion::Points(points.clone())),
        }
    }

    /// Inverse of [`RegionSpec::to_region`] for the shapes it covers.
    pub fn from_region(region: &SetRegion) -> Option<Self> {
        Some(match region {
            SetRegion::Everything => RegionSpec::Everything,
            SetRegion::Box { lo, hi } => RegionSpec::Box {
                lo: lo.clone(),
                hi: hi.clone(),
            },
            SetRegion::Ball { center, radius } => RegionSpec::Ball {
                center: center.clone(),
                radius: *radius,
            },
            SetRegion::Annulus { center, r_in, r_out } => RegionSpec::Annulus {
                center: center.clone(),
                r_in: *r_in,
                r_out: *r_out,
            },
            SetRegion::Points(points) => RegionSpec::Points { points: points.clone() },
            _ => return None,
        })
    }
}

impl fmt::Debug for SetRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SetRegion::Everything => write!(f, "Everything"),
            SetRegion::Empty => write!(f, "Empty"),
            SetRegion::Box { lo, hi } => write!(f, "Box({lo:?}, {hi:?})"),
            SetRegion::Ball { center, radius } => write!(f, "Ball({center:?}, {radius})"),
            SetRegion::Annulus { center, r_in, r_out } => {
                write!(f, "Annulus({center:?}, {r_in}, {r_out})")
            }
            SetRegion::Points(p) => write!(f, "Points({p:?})"),
            SetRegion::Product(p) => f.debug_list().entries(p.iter().map(|(r, _)| r)).finish(),
            SetRegion::Intersection(p) => write!(f, "Intersection({p:?})"),
            SetRegion::Union(p) => write!(f, "Union({p:?})"),
            SetRegion::Custom { .. } => write!(f, "Custom"),
        }
    }
}

fn split_dims(x: &[f64], dims: impl Iterator<Item = usize>) -> Vec<&[f64]> {
    let mut out = Vec::new();
    let mut at = 0;
    for d in dims {
        out.push(&x[at..at + d]);
        at += d;
    }
    out
}

impl SetRegion {
    pub fn interval(lo: f64, hi: f64) -> Self {
        SetRegion::Box {
            lo: vec![lo],
            hi: vec![hi],
        }
    }

    pub fn sphere(center: State, radius: f64) -> Self {
        SetRegion::Annulus {
            center,
            r_in: radius,
            r_out: radius,
        }
    }

    pub fn product(factors: Vec<(SetRegion, usize)>) -> Self {
        SetRegion::Product(factors)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            SetRegion::Everything => true,
            SetRegion::Empty => false,
            SetRegion::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| *l <= *v && *v <= *h),
            SetRegion::Ball { center, radius } => vecops::dist(x, center) <= *radius,
            SetRegion::Annulus { center, r_in, r_out } => {
                let r = vecops::dist(x, center);
                *r_in <= r && r <= *r_out
            }
            SetRegion::Points(pts) => pts.iter().any(|p| p.as_slice() == x),
            SetRegion::Product(factors) => split_dims(x, factors.iter().map(|f| f.1))
                .into_iter()
                .zip(factors)
                .all(|(xi, (r, _))| r.contains(xi)),
            SetRegion::Intersection(parts) => parts.iter().all(|p| p.contains(x)),
            SetRegion::Union(parts) => parts.iter().any(|p| p.contains(x)),
            SetRegion::Custom { contains, .. } => contains(x),
        }
    }

    /// Closest point of the set, when the geometry supports it.
    pub fn project(&self, x: &[f64]) -> Option<State> {
        match self {
            SetRegion::Everything => Some(x.to_vec()),
            SetRegion::Empty => None,
            SetRegion::Box { lo, hi } => Some(
                x.iter()
                    .zip(lo.iter().zip(hi))
                    .map(|(v, (l, h))| v.clamp(*l, *h))
                    .collect(),
            ),
            SetRegion::Ball { center, radius } => {
                let d = vecops::dist(x, center);
                if d <= *radius {
                    Some(x.to_vec())
                } else {
                    let dir = vecops::sub(x, center);
                    Some(vecops::axpy(center, radius / d, &dir))
                }
            }
            SetRegion::Annulus { center, r_in, r_out } => {
                let d = vecops::dist(x, center);
                let r = d.clamp(*r_in, *r_out);
                if d == 0.0 {
                    let mut p = center.clone();
                    p[0] += r;
                    Some(p)
                } else {
                    let dir = vecops::sub(x, center);
                    Some(vecops::axpy(center, r / d, &dir))
                }
            }
            SetRegion::Points(pts) => pts
                .iter()
                .min_by(|a, b| vecops::dist(a, x).total_cmp(&vecops::dist(b, x)))
                .cloned(),
            SetRegion::Product(factors) => {
                let mut out = Vec::with_capacity(x.len());
                for (xi, (r, _)) in split_dims(x, factors.iter().map(|f| f.1)).into_iter().zip(factors) {
                    out.extend(r.project(xi)?);
                }
                Some(out)
            }
            SetRegion::Intersection(parts) => {
                // Exact only when one part's projection lands in all the others.
                parts.iter().filter_map(|p| p.project(x)).find(|p| self.contains(p))
            }
            SetRegion::Union(parts) => parts
                .iter()
                .filter_map(|p| p.project(x))
                .min_by(|a, b| vecops::dist(a, x).total_cmp(&vecops::dist(b, x))),
            SetRegion::Custom { project, .. } => project.as_ref().map(|p| p(x)),
        }
    }

    pub fn has_projection(&self) -> bool {
        match self {
            SetRegion::Empty | SetRegion::Intersection(_) => false,
            SetRegion::Product(f) => f.iter().all(|(r, _)| r.has_projection()),
            SetRegion::Union(p) => p.iter().all(|r| r.has_projection()),
            SetRegion::Custom { project, .. } => project.is_some(),
            _ => true,
        }
    }

    /// Axis-aligned box containing the set, if known.
    pub fn bounding_box(&self) -> Option<(State, State)> {
        match self {
            SetRegion::Everything | SetRegion::Empty => None,
            SetRegion::Box { lo, hi } => Some((lo.clone(), hi.clone())),
            SetRegion::Ball { center, radius }
            | SetRegion::Annulus {
                center, r_out: radius, ..
            } => Some((
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            )),
            SetRegion::Points(pts) => {
                let first = pts.first()?;
                let mut lo = first.clone();
                let mut hi = first.clone();
                for p in pts {
                    for i in 0..p.len() {
                        lo[i] = lo[i].min(p[i]);
                        hi[i] = hi[i].max(p[i]);
                    }
                }
                Some((lo, hi))
            }
            SetRegion::Product(factors) => {
                let mut lo = Vec::new();
                let mut hi = Vec::new();
                for (r, _) in factors {
                    let (l, h) = r.bounding_box()?;
                    lo.extend(l);
                    hi.extend(h);
                }
                Some((lo, hi))
            }
            SetRegion::Intersection(parts) => {
                parts
                    .iter()
                    .filter_map(|p| p.bounding_box())
                    .reduce(|(l1, h1), (l2, h2)| {
                        (
                            l1.iter().zip(&l2).map(|(a, b)| a.max(*b)).collect(),
                            h1.iter().zip(&h2).map(|(a, b)| a.min(*b)).collect(),
                        )
                    })
            }
            SetRegion::Union(parts) => {
                let boxes: Option<Vec<_>> = parts.iter().map(|p| p.bounding_box()).collect();
                boxes?.into_iter().reduce(|(l1, h1), (l2, h2)| {
                    (
                        l1.iter().zip(&l2).map(|(a, b)| a.min(*b)).collect(),
                        h1.iter().zip(&h2).map(|(a, b)| a.max(*b)).collect(),
                    )
                })
            }
            SetRegion::Custom { bbox, .. } => bbox.clone(),
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.bounding_box()
            .is_some_and(|(l, h)| vecops::is_finite(&l) && vecops::is_finite(&h))
    }

    /// Distance from `x` to the set: exact via projection, else sampled on a
    /// grid over the bounding box. `+∞` when neither is available.
    pub fn distance(&self, x: &[f64]) -> f64 {
        if self.contains(x) {
            return 0.0;
        }
        if let Some(p) = self.project(x) {
            return vecops::dist(&p, x);
        }
        self.grid_points(grid_side(x.len()))
            .iter()
            .map(|p| vecops::dist(p, x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Grid points of the bounding box with `side` points per axis that lie in the set.
    pub fn grid_points(&self, side: usize) -> Vec<State> {
        let Some((lo, hi)) = self.bounding_box() else {
            return Vec::new();
        };
        if !vecops::is_finite(&lo) || !vecops::is_finite(&hi) {
            return Vec::new();
        }
        box_grid(&lo, &hi, side)
            .into_iter()
            .filter(|p| self.contains(p))
            .collect()
    }
}

fn grid_side(dim: usize) -> usize {
    let budget = 40_000f64;
    (budget.powf(1.0 / dim.max(1) as f64).floor() as usize).clamp(2, 201)
}

/// Uniform grid with `side` points per axis (midpoint when `lo = hi`).
pub fn box_grid(lo: &[f64], hi: &[f64], side: usize) -> Vec<State> {
    let d = lo.len();
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            if lo[i] == hi[i] || side < 2 {
                vec![0.5 * (lo[i] + hi[i])]
            } else {
                (0..side)
                    .map(|s| lo[i] + (hi[i] - lo[i]) * s as f64 / (side - 1) as f64)
                    .collect()
            }
        })
        .collect();
    let mut out = vec![Vec::with_capacity(d)];
    for axis in &axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for p in &out {
            for &v in axis {
                let mut q = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// A finitely described value of a set-valued map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ValueSet {
    Empty,
    Singleton(State),
    Ball {
        center: State,
        radius: f64,
    },
    /// Convex hull of the listed points.
    Hull(Vec<State>),
    /// The listed points only (not convex unless a single point).
    Points(Vec<State>),
    Product(Vec<ValueSet>),
}

impl ValueSet {
    pub fn is_empty(&self) -> bool {
        match self {
            ValueSet::Empty => true,
            ValueSet::Hull(p) | ValueSet::Points(p) => p.is_empty(),
            ValueSet::Product(f) => f.is_empty() || f.iter().any(|v| v.is_empty()),
            _ => false,
        }
    }

    pub fn is_convex(&self) -> bool {
        match self {
            ValueSet::Points(p) => p.iter().all(|q| *q == p[0]),
            ValueSet::Product(f) => f.iter().all(|v| v.is_convex()),
            _ => true,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ValueSet::Empty => 0,
            ValueSet::Singleton(x) => x.len(),
            ValueSet::Ball { center, .. } => center.len(),
            ValueSet::Hull(p) | ValueSet::Points(p) => p.first().map_or(0, |v| v.len()),
            ValueSet::Product(f) => f.iter().map(|v| v.dim()).sum(),
        }
    }

    /// Distance from `y` to the set (`+∞` if empty).
    pub fn distance(&self, y: &[f64]) -> f64 {
        if self.is_empty() {
            return f64::INFINITY;
        }
        match self {
            ValueSet::Empty => f64::INFINITY,
            ValueSet::Singleton(x) => vecops::dist(x, y),
            ValueSet::Ball { center, radius } => (vecops::dist(center, y) - radius).max(0.0),
            ValueSet::Hull(p) => vecops::closest_in_hull(p, y).1,
            ValueSet::Points(p) => p.iter().map(|q| vecops::dist(q, y)).fold(f64::INFINITY, f64::min),
            ValueSet::Product(f) => split_dims(y, f.iter().map(|v| v.dim()))
                .into_iter()
                .zip(f)
                .map(|(yi, v)| v.distance(yi).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    pub fn contains(&self, y: &[f64], tol: f64) -> bool {
        self.distance(y) <= tol
    }

    /// Extreme points (ball: center ± radius along each axis).
    pub fn vertices(&self) -> Vec<State> {
        match self {
            ValueSet::Empty => Vec::new(),
            ValueSet::Singleton(x) => vec![x.clone()],
            ValueSet::Ball { center, radius } => {
                let mut out = vec![center.clone()];
                for i in 0..center.len() {
                    for s in [-1.0, 1.0] {
                        let mut p = center.clone();
                        p[i] += s * radius;
                        out.push(p);
                    }
                }
                out
            }
            ValueSet::Hull(p) | ValueSet::Points(p) => p.clone(),
            ValueSet::Product(f) => {
                let mut out: Vec<State> = vec![Vec::new()];
                for v in f {
                    let vs = v.vertices();
                    let mut next = Vec::new();
                    for a in &out {
                        for b in &vs {
                            let mut c = a.clone();
                            c.extend_from_slice(b);
                            next.push(c);
                        }
                    }
                    out = next;
                }
                out
            }
        }
    }

    /// The `i`-th canonical element. `0` is the first listed point (or the center).
    pub fn select(&self, i: usize) -> Option<State> {
        if self.is_empty() {
            return None;
        }
        match self {
            ValueSet::Empty => None,
            ValueSet::Singleton(x) => Some(x.clone()),
            ValueSet::Ball { .. } => {
                let v = self.vertices();
                Some(v[i % v.len()].clone())
            }
            ValueSet::Hull(p) | ValueSet::Points(p) => Some(p[i % p.len()].clone()),
            ValueSet::Product(f) => {
                let mut out = Vec::new();
                for v in f {
                    out.extend(v.select(i)?);
                }
                Some(out)
            }
        }
    }

    /// Number of distinct canonical selections.
    pub fn selection_count(&self) -> usize {
        match self {
            ValueSet::Empty => 0,
            ValueSet::Singleton(_) => 1,
            ValueSet::Ball { center, .. } => 1 + 2 * center.len(),
            ValueSet::Hull(p) | ValueSet::Points(p) => p.len(),
            ValueSet::Product(f) => f.iter().map(|v| v.selection_count()).max().unwrap_or(0),
        }
    }

    /// Inner approximation of `self ∩ K`: keeps the listed points that lie in `K`.
    pub fn intersect_region(&self, k: &SetRegion) -> ValueSet {
        match self {
            ValueSet::Empty => ValueSet::Empty,
            ValueSet::Singleton(x) => {
                if k.contains(x) {
                    self.clone()
                } else {
                    ValueSet::Empty
                }
            }
            ValueSet::Ball { center, .. } => {
                if k.contains(center) {
                    ValueSet::Singleton(center.clone())
                } else {
                    ValueSet::Empty
                }
            }
            ValueSet::Hull(p) => {
                let kept: Vec<State> = p.iter().filter(|x| k.contains(x)).cloned().collect();
                if kept.len() == p.len() {
                    self.clone()
                } else if kept.is_empty() {
                    ValueSet::Empty
                } else {
                    ValueSet::Hull(kept)
                }
            }
            ValueSet::Points(p) => {
                let kept: Vec<State> = p.iter().filter(|x| k.contains(x)).cloned().collect();
                if kept.is_empty() {
                    ValueSet::Empty
                } else {
                    ValueSet::Points(kept)
                }
            }
            ValueSet::Product(f) => {
                if let SetRegion::Product(kf) = k {
                    if kf.len() == f.len() {
                        return ValueSet::Product(f.iter().zip(kf).map(|(v, (r, _))| v.intersect_region(r)).collect());
                    }
                }
                let kept: Vec<State> = self.vertices().into_iter().filter(|x| k.contains(x)).collect();
                if kept.is_empty() {
                    ValueSet::Empty
                } else {
                    ValueSet::Points(kept)
                }
            }
        }
    }
}

type MapFn = Arc<dyn Fn(&[f64]) -> ValueSet + Send + Sync>;

/// `x ↦ F(x)`, a set-valued map with finitely described values.
#[derive(Clone)]
pub struct SetValuedMap(MapFn);

impl fmt::Debug for SetValuedMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SetValuedMap")
    }
}

impl SetValuedMap {
    pub fn new(f: impl Fn(&[f64]) -> ValueSet + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    /// Single-valued map `x ↦ {f(x)}`.
    pub fn single(f: impl Fn(&[f64]) -> State + Send + Sync + 'static) -> Self {
        Self::new(move |x| ValueSet::Singleton(f(x)))
    }

    pub fn eval(&self, x: &[f64]) -> ValueSet {
        (self.0)(x)
    }

    pub fn select(&self, x: &[f64], i: usize) -> Result<State> {
        self.eval(x).select(i).ok_or_else(|| Error::EmptyMap(x.to_vec()))
    }
}

/// Hybrid inclusion data.
#[derive(Clone, Debug)]
pub struct HybridSystem {
    pub name: String,
    pub dim: usize,
    pub flow_set: SetRegion,
    pub flow_map: SetValuedMap,
    pub jump_set: SetRegion,
    pub jump_map: SetValuedMap,
    /// Where noisy jump outcomes are projected (e.g. the constraint set).
    pub post_jump_region: Option<SetRegion>,
}

impl HybridSystem {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        flow_set: SetRegion,
        flow_map: SetValuedMap,
        jump_set: SetRegion,
        jump_map: SetValuedMap,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            flow_set,
            flow_map,
            jump_set,
            jump_map,
            post_jump_region: None,
        }
    }

    /// A purely continuous system `x' ∈ F(x)` on `C`.
    pub fn flow_only(name: impl Into<String>, dim: usize, flow_set: SetRegion, flow_map: SetValuedMap) -> Self {
        Self::new(
            name,
            dim,
            flow_set,
            flow_map,
            SetRegion::Empty,
            SetValuedMap::new(|_| ValueSet::Empty),
        )
    }

    pub fn with_post_jump_region(mut self, region: SetRegion) -> Self {
        self.post_jump_region = Some(region);
        self
    }

    pub fn in_flow_set(&self, x: &[f64]) -> bool {
        self.flow_set.contains(x)
    }

    pub fn in_jump_set(&self, x: &[f64]) -> bool {
        self.jump_set.contains(x)
    }
}

/// `C_ε = C + εB`, `F_ε(x) = co F((x+εB)∩C) + εB`, and likewise for `D`, `G`.
#[derive(Clone, Debug)]
pub struct InflatedSystem {
    pub base: HybridSystem,
    pub eps: f64,
}

pub fn inflate(system: &HybridSystem, eps: f64) -> Result<InflatedSystem> {
    if !(eps >= 0.0) {
        return Err(Error::Config(format!("inflation radius must be ≥ 0, got {eps}")));
    }
    Ok(InflatedSystem {
        base: system.clone(),
        eps,
    })
}

/// Grid of spacing `eps/4` covering `x + εB`.
fn probe_net(x: &[f64], eps: f64) -> Vec<State> {
    if eps == 0.0 {
        return vec![x.to_vec()];
    }
    let d = x.len();
    let step = eps / 4.0;
    if d > 3 {
        // axis probes only in higher dimensions
        let mut out = vec![x.to_vec()];
        for i in 0..d {
            for s in [-4.0, -2.0, 2.0, 4.0] {
                let mut p = x.to_vec();
                p[i] += s * step;
                out.push(p);
            }
        }
        return out;
    }
    let lo: Vec<f64> = x.iter().map(|v| v - eps).collect();
    let hi: Vec<f64> = x.iter().map(|v| v + eps).collect();
    box_grid(&lo, &hi, 9)
        .into_iter()
        .filter(|p| vecops::dist(p, x) <= eps * (1.0 + 1e-12))
        .collect()
}

impl InflatedSystem {
    pub fn in_flow_set(&self, x: &[f64]) -> bool {
        self.base.flow_set.distance(x) <= self.eps
    }

    pub fn in_jump_set(&self, x: &[f64]) -> bool {
        self.base.jump_set.distance(x) <= self.eps
    }

    /// Distance from `v` to `co F((x+εB)∩C)` over the probe net.
    pub fn flow_value_distance(&self, x: &[f64], v: &[f64]) -> f64 {
        let verts: Vec<State> = probe_net(x, self.eps)
            .into_iter()
            .filter(|p| self.base.flow_set.contains(p))
            .flat_map(|p| self.base.flow_map.eval(&p).vertices())
            .collect();
        if verts.is_empty() {
            return f64::INFINITY;
        }
        vecops::closest_in_hull(&verts, v).1
    }

    pub fn flow_value_contains(&self, x: &[f64], v: &[f64]) -> bool {
        self.flow_value_distance(x, v) <= self.eps
    }

    /// Distance from `v` to `G((x+εB)∩D)` over the probe net.
    pub fn jump_value_distance(&self, x: &[f64], v: &[f64]) -> f64 {
        probe_net(x, self.eps)
            .into_iter()
            .filter(|p| self.base.jump_set.contains(p))
            .map(|p| self.base.jump_map.eval(&p).distance(v))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn jump_value_contains(&self, x: &[f64], v: &[f64]) -> bool {
        self.jump_value_distance(x, v) <= self.eps
    }
}

/// A restricted system together with advisory warnings.
#[derive(Clone, Debug)]
pub struct Restricted {
    pub system: HybridSystem,
    pub warnings: Vec<String>,
}

/// `H|_K = (C∩K, F, D∩K, G^K)` with `G^K(x) = G(x) ∩ K`.
///
/// `probes` are used only to detect empty `G^K` values on `D∩K`.
pub fn restrict(system: &HybridSystem, k: &SetRegion, probes: &[State]) -> Restricted {
    let kk = k.clone();
    let g = system.jump_map.clone();
    let restricted = HybridSystem {
        name: format!("{}|K", system.name),
        dim: system.dim,
        flow_set: SetRegion::Intersection(vec![system.flow_set.clone(), k.clone()]),
        flow_map: system.flow_map.clone(),
        jump_set: SetRegion::Intersection(vec![system.jump_set.clone(), k.clone()]),
        jump_map: SetValuedMap::new(move |x| g.eval(x).intersect_region(&kk)),
        post_jump_region: system.post_jump_region.clone(),
    };
    let warnings = probes
        .iter()
        .filter(|p| restricted.jump_set.contains(p) && restricted.jump_map.eval(p).is_empty())
        .map(|p| format!("G^K is empty at {p:?}"))
        .collect();
    Restricted {
        system: restricted,
        warnings,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowCheck {
    pub j: usize,
    /// Max distance of a forward difference to `F` at the left sample.
    pub derivative_gap: f64,
    pub derivative_gap_at: f64,
    /// Max distance of a sample to `C`.
    pub flow_set_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpCheck {
    /// The jump from `(t, j)` to `(t, j+1)`.
    pub t: f64,
    pub j: usize,
    pub jump_set_gap: f64,
    pub jump_map_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub flows: Vec<FlowCheck>,
    pub jumps: Vec<JumpCheck>,
    pub tol: f64,
    pub pass: bool,
}

impl SolutionReport {
    /// First failing location, if any.
    pub fn witness(&self) -> Option<HybridTime> {
        for f in &self.flows {
            if f.derivative_gap > self.tol || f.flow_set_gap > self.tol {
                return Some(HybridTime::new(f.derivative_gap_at, f.j));
            }
        }
        self.jumps
            .iter()
            .find(|c| c.jump_set_gap > self.tol || c.jump_map_gap > self.tol)
            .map(|c| HybridTime::new(c.t, c.j))
    }
}

/// Checks a sampled arc against the solution conditions at grid points.
pub fn verify_solution(arc: &HybridArc, system: &HybridSystem, tol: f64) -> Result<SolutionReport> {
    if arc.dim() != system.dim {
        return Err(Error::Dimension {
            expected: system.dim,
            got: arc.dim(),
        });
    }
    let mut flows = Vec::new();
    let mut jumps = Vec::new();
    let segs = arc.segments();
    for seg in segs {
        if seg.times.len() < 2 {
            continue;
        }
        let mut gap: f64 = 0.0;
        let mut gap_at = seg.times[0];
        let mut c_gap: f64 = 0.0;
        for w in 0..seg.times.len() - 1 {
            let (t0, t1) = (seg.times[w], seg.times[w + 1]);
            let x0 = &seg.values[w];
            let d = vecops::scale(&vecops::sub(&seg.values[w + 1], x0), 1.0 / (t1 - t0));
            let g = system.flow_map.eval(x0).distance(&d);
            if g > gap {
                gap = g;
                gap_at = t0;
            }
            c_gap = c_gap
                .max(system.flow_set.distance(x0))
                .max(system.flow_set.distance(&seg.values[w + 1]));
        }
        flows.push(FlowCheck {
            j: seg.j,
            derivative_gap: gap,
            derivative_gap_at: gap_at,
            flow_set_gap: c_gap,
        });
    }
    for w in segs.windows(2) {
        let before = w[0].values.last().unwrap();
        let after = &w[1].values[0];
        jumps.push(JumpCheck {
            t: w[0].t_end(),
            j: w[0].j,
            jump_set_gap: system.jump_set.distance(before),
            jump_map_gap: system.jump_map.eval(before).distance(after),
        });
    }
    let pass = flows.iter().all(|f| f.derivative_gap <= tol && f.flow_set_gap <= tol)
        && jumps.iter().all(|c| c.jump_set_gap <= tol && c.jump_map_gap <= tol);
    Ok(SolutionReport {
        flows,
        jumps,
        tol,
        pass,
    })
}

/// Timer automaton `τ ∈ [0,N], τ' ∈ [0,δ]`; `τ ∈ [1,N], τ+ = τ − 1`.
///
/// The canonical flow selection is `τ' = δ`.
pub fn dwell_automaton(n: u32, delta: f64) -> Result<HybridSystem> {
    if n < 1 || !(delta > 0.0) {
        return Err(Error::Config(format!(
            "dwell automaton needs N ≥ 1 and δ > 0, got N = {n}, δ = {delta}"
        )));
    }
    let nf = n as f64;
    Ok(HybridSystem::new(
        format!("dwell({n},{delta})"),
        1,
        SetRegion::interval(0.0, nf),
        SetValuedMap::new(move |_| ValueSet::Hull(vec![vec![delta], vec![0.0]])),
        SetRegion::interval(1.0, nf),
        SetValuedMap::single(|x| vec![x[0] - 1.0]),
    ))
}

/// `j − i ≤ δ(t − s) + N` for the ordered pair `(s,i) ⪯ (t,j)`.
pub fn dwell_admissible(from: HybridTime, to: HybridTime, n: f64, delta: f64, slack: f64) -> bool {
    let jumps = to.j as f64 - from.j as f64;
    jumps <= delta * (to.t - from.t) + n + slack
}

/// Exhaustive check of all ordered pairs; returns the first violating pair.
pub fn dwell_violation(points: &[HybridTime], n: f64, delta: f64, slack: f64) -> Option<(HybridTime, HybridTime)> {
    for (a, p) in points.iter().enumerate() {
        for q in &points[a..] {
            let (from, to) = if p.partial_cmp(q) == Some(std::cmp::Ordering::Greater) {
                (*q, *p)
            } else {
                (*p, *q)
            };
            if !dwell_admissible(from, to, n, delta, slack) {
                return Some((from, to));
            }
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HbcEntry {
    pub x: State,
    pub in_flow_set: bool,
    pub in_jump_set: bool,
    pub flow_nonempty: Option<bool>,
    pub flow_convex: Option<bool>,
    pub jump_nonempty: Option<bool>,
    /// Largest norm among the listed values of `F(x)` and `G(x)`.
    pub value_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HbcReport {
    pub entries: Vec<HbcEntry>,
    pub failures: Vec<String>,
    pub pass: bool,
}

/// Spot checks of nonemptiness, convexity and local boundedness on probes.
///
/// Closedness and outer semicontinuity cannot be decided from finitely many
/// probes and are not checked.
pub fn check_hbc(system: &HybridSystem, probes: &[State]) -> HbcReport {
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for x in probes {
        let in_c = system.flow_set.contains(x);
        let in_d = system.jump_set.contains(x);
        let mut bound: f64 = 0.0;
        let (mut f_ne, mut f_cv, mut g_ne) = (None, None, None);
        if in_c {
            let fv = system.flow_map.eval(x);
            f_ne = Some(!fv.is_empty());
            f_cv = Some(fv.is_convex());
            bound = fv.vertices().iter().map(|v| vecops::norm(v)).fold(bound, f64::max);
            if fv.is_empty() {
                failures.push(format!("F empty at {x:?}"));
            } else if !fv.is_convex() {
                failures.push(format!("F not convex at {x:?}"));
            }
        }
        if in_d {
            let gv = system.jump_map.eval(x);
            g_ne = Some(!gv.is_empty());
            bound = gv.vertices().iter().map(|v| vecops::norm(v)).fold(bound, f64::max);
            if gv.is_empty() {
                failures.push(format!("G empty at {x:?}"));
            }
        }
        if !bound.is_finite() {
            failures.push(format!("non-finite value at {x:?}"));
        }
        entries.push(HbcEntry {
            x: x.clone(),
            in_flow_set: in_c,
            in_jump_set: in_d,
            flow_nonempty: f_ne,
            flow_convex: f_cv,
            jump_nonempty: g_ne,
            value_bound: bound,
        });
    }
    HbcReport {
        pass: failures.is_empty(),
        entries,
        failures,
    }
}

/// Product of systems: flows when every factor may flow; a factor in its
/// jump set jumps while the others hold still.
pub fn product(systems: &[HybridSystem]) -> Result<HybridSystem> {
    if systems.is_empty() {
        return Err(Error::Config("product of zero systems".into()));
    }
    if systems.len() == 1 {
        return Ok(systems[0].clone());
    }
    let dims: Vec<usize> = systems.iter().map(|s| s.dim).collect();
    let dim = dims.iter().sum();
    let flow_set = SetRegion::Product(systems.iter().map(|s| (s.flow_set.clone(), s.dim)).collect());
    let jump_set = SetRegion::Union(
        (0..systems.len())
            .map(|i| {
                SetRegion::Product(
                    systems
                        .iter()
                        .enumerate()
                        .map(|(k, s)| {
                            let r = if k == i {
                                s.jump_set.clone()
                            } else {
                                SetRegion::Everything
                            };
                            (r, s.dim)
                        })
                        .collect(),
                )
            })
            .collect(),
    );
    let fmaps: Vec<(SetValuedMap, usize)> = systems.iter().map(|s| (s.flow_map.clone(), s.dim)).collect();
    let flow_map = SetValuedMap::new(move |x| {
        ValueSet::Product(
            split_dims(x, fmaps.iter().map(|f| f.1))
                .into_iter()
                .zip(&fmaps)
                .map(|(xi, (f, _))| f.eval(xi))
                .collect(),
        )
    });
    let parts: Vec<(SetRegion, SetValuedMap, usize)> = systems
        .iter()
        .map(|s| (s.jump_set.clone(), s.jump_map.clone(), s.dim))
        .collect();
    let jump_map = SetValuedMap::new(move |x| {
        ValueSet::Product(
            split_dims(x, parts.iter().map(|p| p.2))
                .into_iter()
                .zip(&parts)
                .map(|(xi, (d, g, _))| {
                    if d.contains(xi) {
                        g.eval(xi)
                    } else {
                        ValueSet::Singleton(xi.to_vec())
                    }
                })
                .collect(),
        )
    });
    let post = if systems.iter().all(|s| s.post_jump_region.is_some()) {
        Some(SetRegion::Product(
            systems
                .iter()
                .map(|s| (s.post_jump_region.clone().unwrap(), s.dim))
                .collect(),
        ))
    } else {
        None
    };
    Ok(HybridSystem {
        name: systems.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(" x "),
        dim,
        flow_set,
        flow_map,
        jump_set,
        jump_map,
        post_jump_region: post,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_system() -> HybridSystem {
        HybridSystem::flow_only(
            "disk",
            2,
            SetRegion::Ball {
                center: vec![0.0, 0.0],
                radius: 1.0,
            },
            SetValuedMap::single(|x| vec![-x[0], -x[1]]),
        )
    }

    #[test]
    fn inflation_examples() {
        let sys = disk_system();
        let inf0 = inflate(&sys, 0.0).unwrap();
        for p in box_grid(&[-2.0, -2.0], &[2.0, 2.0], 17) {
            assert_eq!(inf0.in_flow_set(&p), sys.in_flow_set(&p));
        }
        let inf = inflate(&sys, 0.5).unwrap();
        assert!(inf.in_flow_set(&[1.4, 0.0]));
        assert!(!inf.in_flow_set(&[1.6, 0.0]));
        assert!(inflate(&sys, -0.1).is_err());
    }

    #[test]
    fn inflated_flow_map_widens() {
        let sys = disk_system();
        let inf = inflate(&sys, 0.2).unwrap();
        // F(0) = {0}; F_ε(0) contains values of F near 0 plus εB
        assert!(inf.flow_value_contains(&[0.0, 0.0], &[0.3, 0.0]));
        assert!(!inf.flow_value_contains(&[0.0, 0.0], &[0.5, 0.0]));
        let inf0 = inflate(&sys, 0.0).unwrap();
        assert_eq!(inf0.flow_value_distance(&[0.5, 0.0], &[-0.5, 0.0]), 0.0);
    }

    #[test]
    fn region_projection_and_distance() {
        let b = SetRegion::Box {
            lo: vec![0.0, f64::NEG_INFINITY],
            hi: vec![1.0, 1.0],
        };
        assert_eq!(b.project(&[2.0, -5.0]).unwrap(), vec![1.0, -5.0]);
        assert_eq!(b.distance(&[2.0, 3.0]), 5f64.sqrt());
        let s = SetRegion::sphere(vec![0.0, 0.0], 1.0);
        assert!((s.distance(&[0.5, 0.0]) - 0.5).abs() < 1e-15);
        let custom = SetRegion::Custom {
            contains: Arc::new(|x| x[0] * x[0] + x[1] * x[1] <= 1.0),
            project: None,
            bbox: Some((vec![-1.0, -1.0], vec![1.0, 1.0])),
        };
        assert!((custom.distance(&[2.0, 0.0]) - 1.0).abs() < 0.02);
    }

    #[test]
    fn restrict_filters_jump_values() {
        let sys = HybridSystem::new(
            "hop",
            1,
            SetRegion::Everything,
            SetValuedMap::single(|_| vec![0.0]),
            SetRegion::Everything,
            SetValuedMap::new(|x| ValueSet::Points(vec![vec![x[0] + 1.0], vec![x[0] + 10.0]])),
        );
        let k = SetRegion::interval(-5.0, 5.0);
        let r = restrict(&sys, &k, &[vec![0.0], vec![4.5]]);
        assert_eq!(r.system.jump_map.eval(&[0.0]), ValueSet::Points(vec![vec![1.0]]));
        assert_eq!(r.warnings.len(), 1);
        let rr = restrict(&r.system, &k, &[]);
        for x in [-6.0, -1.0, 0.0, 3.0, 4.5, 7.0] {
            assert_eq!(rr.system.in_jump_set(&[x]), r.system.in_jump_set(&[x]));
            assert_eq!(rr.system.jump_map.eval(&[x]), r.system.jump_map.eval(&[x]));
        }
    }

    #[test]
    fn dwell_predicate_examples() {
        assert!(dwell_admissible(
            HybridTime::new(0.0, 0),
            HybridTime::new(2.0, 3),
            2.0,
            0.5,
            0.0
        ));
        assert!(!dwell_admissible(
            HybridTime::new(0.0, 0),
            HybridTime::new(0.0, 2),
            1.0,
            1.0,
            0.0
        ));
        assert!(dwell_admissible(
            HybridTime::new(1.0, 4),
            HybridTime::new(7.0, 4),
            1.0,
            1.0,
            0.0
        ));
        let pts = vec![
            HybridTime::new(0.0, 0),
            HybridTime::new(0.0, 1),
            HybridTime::new(0.0, 2),
        ];
        assert!(dwell_violation(&pts, 1.0, 1.0, 0.0).is_some());
        assert!(dwell_automaton(0, 1.0).is_err());
    }

    #[test]
    fn hbc_flags_empty_and_nonconvex() {
        let sys = HybridSystem::flow_only(
            "bad",
            1,
            SetRegion::Everything,
            SetValuedMap::new(|x| {
                if x[0] > 0.0 {
                    ValueSet::Points(vec![vec![-1.0], vec![1.0]])
                } else if x[0] < 0.0 {
                    ValueSet::Empty
                } else {
                    ValueSet::Singleton(vec![0.0])
                }
            }),
        );
        let rep = check_hbc(&sys, &[vec![-1.0], vec![0.0], vec![1.0]]);
        assert!(!rep.pass);
        assert_eq!(rep.entries[0].flow_nonempty, Some(false));
        assert_eq!(rep.entries[1].flow_convex, Some(true));
        assert_eq!(rep.entries[2].flow_convex, Some(false));
    }

    #[test]
    fn verify_solution_locates_bad_jump() {
        let sys = HybridSystem::new(
            "bounce",
            1,
            SetRegion::interval(0.0, 1.0),
            SetValuedMap::single(|_| vec![1.0]),
            SetRegion::interval(1.0, 1.0),
            SetValuedMap::single(|_| vec![0.0]),
        );
        use crate::hybrid_time::ArcSegment;
        let good = HybridArc::new(
            1,
            vec![
                ArcSegment {
                    j: 0,
                    times: vec![0.0, 0.5, 1.0],
                    values: vec![vec![0.0], vec![0.5], vec![1.0]],
                },
                ArcSegment {
                    j: 1,
                    times: vec![1.0, 1.5],
                    values: vec![vec![0.0], vec![0.5]],
                },
            ],
        )
        .unwrap();
        assert!(verify_solution(&good, &sys, 1e-12).unwrap().pass);
        let bad = HybridArc::new(
            1,
            vec![
                ArcSegment {
                    j: 0,
                    times: vec![0.0, 0.5],
                    values: vec![vec![0.0], vec![0.5]],
                },
                ArcSegment {
                    j: 1,
                    times: vec![0.5, 1.0],
                    values: vec![vec![0.0], vec![0.5]],
                },
            ],
        )
        .unwrap();
        let rep = verify_solution(&bad, &sys, 1e-12).unwrap();
        assert!(!rep.pass);
        assert_eq!(rep.witness(), Some(HybridTime::new(0.5, 0)));
    }

    #[test]
    fn product_jumps_factorwise() {
        let a = dwell_automaton(2, 0.5).unwrap();
        let b = dwell_automaton(1, 1.0).unwrap();
        let p = product(&[a, b]).unwrap();
        assert_eq!(p.dim, 2);
        assert!(p.in_jump_set(&[1.5, 0.2]));
        assert_eq!(p.jump_map.eval(&[1.5, 0.2]).select(0).unwrap(), vec![0.5, 0.2]);
        assert_eq!(p.flow_map.select(&[0.0, 0.0], 0).unwrap(), vec![0.5, 1.0]);
    }
}
