use std::collections::{HashMap, VecDeque};

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chain::{Chain, ChainLink};
use super::omega::hausdorff;
use crate::error::{Error, Result};
use crate::hybrid_time::{HybridArc, HybridTime};
use crate::simulate::{euler_simulate, interpolate, JumpPolicy, SimConfig};
use crate::system::{HybridSystem, SetRegion};
use crate::vecops;
use crate::State;

#[derive(Clone, Debug)]
pub struct ReachConfig {
    /// Selections/policies tried per node.
    pub variants: usize,
    /// Hybrid length simulated from each node.
    pub explore_length: f64,
    /// Template for every run; selection, policy and seed are overridden per variant.
    pub sim: SimConfig,
}

impl ReachConfig {
    pub fn new(sim: SimConfig, explore_length: f64) -> Self {
        Self {
            variants: 4,
            explore_length,
            sim,
        }
    }

    fn variant(&self, node: usize, v: usize) -> SimConfig {
        let mut cfg = self.sim.clone();
        cfg.selection = v;
        cfg.policy = match v % 4 {
            0 | 2 => JumpPolicy::PreferJump,
            1 => JumpPolicy::PreferFlow,
            _ => JumpPolicy::Randomized { p: 0.5 },
        };
        cfg.seed = splitmix(self.sim.seed ^ splitmix(((node as u64) << 8) | v as u64));
        cfg.horizon.max_length = self.explore_length;
        cfg
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub max_simulations: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_simulations: 200_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub arc_id: usize,
    /// Where the witness arc passes within `eps` of `to`.
    pub end: HybridTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub from: usize,
    pub variant: usize,
    pub arc: HybridArc,
}

/// Grid lookup for nodes laid out on a regular lattice.
#[derive(Clone, Debug)]
struct NodeIndex {
    lo: State,
    spacing: f64,
    cells: HashMap<Vec<i64>, usize>,
}

impl NodeIndex {
    fn within(&self, nodes: &[State], x: &[f64], eps: f64) -> Vec<usize> {
        let ranges: Vec<(i64, i64)> = x
            .iter()
            .zip(&self.lo)
            .map(|(v, l)| {
                (
                    ((v - eps - l) / self.spacing).floor() as i64,
                    ((v + eps - l) / self.spacing).ceil() as i64,
                )
            })
            .collect();
        let mut out = Vec::new();
        let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        'outer: loop {
            if let Some(&n) = self.cells.get(&idx) {
                if vecops::dist(&nodes[n], x) <= eps {
                    out.push(n);
                }
            }
            for d in 0..idx.len() {
                if idx[d] < ranges[d].1 {
                    idx[d] += 1;
                    continue 'outer;
                }
                idx[d] = ranges[d].0;
            }
            break;
        }
        out.sort_unstable();
        out
    }
}

/// Reachability graph on a net of a compact region.
#[derive(Clone, Debug)]
pub struct ReachGraph {
    pub system: HybridSystem,
    pub region: SetRegion,
    pub internal: bool,
    pub tau: f64,
    pub eps: f64,
    pub net_radius: f64,
    pub nodes: Vec<State>,
    pub witnesses: Vec<Witness>,
    pub edges: Vec<Edge>,
    /// The simulation budget ran out before every node was explored.
    pub partial: bool,
    index: NodeIndex,
}

impl ReachGraph {
    pub fn nodes_within(&self, x: &[f64], eps: f64) -> Vec<usize> {
        self.index.within(&self.nodes, x, eps)
    }

    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.from, e.to)).collect()
    }

    pub fn successors(&self, u: usize) -> impl Iterator<Item = &Edge> {
        let start = self.edges.partition_point(|e| e.from < u);
        self.edges[start..].iter().take_while(move |e| e.from == u)
    }

    /// Earliest hybrid time with length `≥ tau` where `arc` comes within
    /// `eps` of `y`, respecting the region in internal mode.
    fn hit(&self, arc: &HybridArc, y: &[f64]) -> Option<HybridTime> {
        for (t, j, x) in arc.samples() {
            if self.internal && !self.region.contains(x) {
                return None;
            }
            if t + j as f64 >= self.tau && vecops::dist(x, y) <= self.eps {
                return Some(HybridTime::new(t, j));
            }
        }
        None
    }

    /// JSON adjacency: nodes, edges with witness indices.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "tau": self.tau,
            "eps": self.eps,
            "net_radius": self.net_radius,
            "internal": self.internal,
            "partial": self.partial,
            "nodes": self.nodes,
            "edges": self.edges.iter().map(|e| serde_json::json!({
                "from": e.from, "to": e.to, "witness": e.arc_id, "end": [e.end.t, e.end.j],
            })).collect::<Vec<_>>(),
        })
    }
}

/// Lattice points of spacing `2r/√d` inside `region`; every point of the
/// region lies within `r` of the lattice.
fn net(region: &SetRegion, net_radius: f64) -> Result<(Vec<State>, NodeIndex)> {
    let (lo, hi) = region
        .bounding_box()
        .filter(|(lo, hi)| vecops::is_finite(lo) && vecops::is_finite(hi))
        .ok_or_else(|| Error::Config("region needs a finite bounding box".into()))?;
    let d = lo.len();
    let spacing = 2.0 * net_radius / (d as f64).sqrt();
    let counts: Vec<i64> = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| ((h - l) / spacing + 1e-9).floor() as i64)
        .collect();
    let mut nodes = Vec::new();
    let mut cells = HashMap::new();
    let mut idx = vec![0i64; d];
    'outer: loop {
        let p: State = idx.iter().zip(&lo).map(|(&i, l)| l + i as f64 * spacing).collect();
        if region.contains(&p) {
            cells.insert(idx.clone(), nodes.len());
            nodes.push(p);
        }
        for a in 0..d {
            if idx[a] < counts[a] {
                idx[a] += 1;
                continue 'outer;
            }
            idx[a] = 0;
        }
        break;
    }
    Ok((nodes, NodeIndex { lo, spacing, cells }))
}

struct NodeOutput {
    witnesses: Vec<Witness>,
    edges: Vec<(usize, HybridTime, usize)>,
    skipped: bool,
}

/// Builds the reach graph of `system` over a net of `region`.
///
/// An edge `u → v` is recorded when a simulated solution from `u` reaches a
/// point within `eps` of `v` at hybrid length `≥ tau` (staying in the region
/// until then in internal mode).
pub fn build_reach_graph(
    system: &HybridSystem,
    region: &SetRegion,
    net_radius: f64,
    tau: f64,
    eps: f64,
    internal: bool,
    budget: Budget,
    cfg: &ReachConfig,
) -> Result<ReachGraph> {
    if !(net_radius > 0.0 && tau > 0.0 && eps > 0.0) {
        return Err(Error::Config("net radius, tau and eps must be positive".into()));
    }
    if cfg.explore_length < tau {
        return Err(Error::Config(format!(
            "explore length {} is shorter than tau = {tau}",
            cfg.explore_length
        )));
    }
    let (nodes, index) = net(region, net_radius)?;
    let mut graph = ReachGraph {
        system: system.clone(),
        region: region.clone(),
        internal,
        tau,
        eps,
        net_radius,
        nodes,
        witnesses: Vec::new(),
        edges: Vec::new(),
        partial: false,
        index,
    };
    let explore = |u: usize| -> NodeOutput {
        let mut out = NodeOutput {
            witnesses: Vec::new(),
            edges: Vec::new(),
            skipped: false,
        };
        let mut seen: HashMap<usize, ()> = HashMap::new();
        for v in 0..cfg.variants.max(1) {
            if u * cfg.variants.max(1) + v >= budget.max_simulations {
                out.skipped = true;
                break;
            }
            let x0 = &graph.nodes[u];
            let run = match euler_simulate(system, x0, &cfg.variant(u, v)) {
                Ok(r) => r,
                Err(Error::Escape { partial, .. }) => *partial,
                Err(_) => continue,
            };
            let arc = interpolate(&run);
            if out.witnesses.iter().any(|w| w.arc == arc) {
                continue;
            }
            let mut found = Vec::new();
            for (t, j, x) in arc.samples() {
                if internal && !region.contains(x) {
                    break;
                }
                if t + j as f64 >= tau {
                    for n in graph.index.within(&graph.nodes, x, eps) {
                        if seen.insert(n, ()).is_none() {
                            found.push((n, HybridTime::new(t, j)));
                        }
                    }
                }
            }
            if found.is_empty() {
                continue;
            }
            let local = out.witnesses.len();
            out.edges.extend(found.into_iter().map(|(n, end)| (n, end, local)));
            out.witnesses.push(Witness {
                from: u,
                variant: v,
                arc,
            });
        }
        out
    };
    #[cfg(feature = "parallel")]
    let outputs: Vec<NodeOutput> = (0..graph.nodes.len()).into_par_iter().map(explore).collect();
    #[cfg(not(feature = "parallel"))]
    let outputs: Vec<NodeOutput> = (0..graph.nodes.len()).map(explore).collect();

    let mut witnesses = Vec::new();
    let mut edges = Vec::new();
    let mut partial = false;
    for (u, out) in outputs.into_iter().enumerate() {
        partial |= out.skipped;
        let base = witnesses.len();
        for (to, end, local) in out.edges {
            edges.push(Edge {
                from: u,
                to,
                arc_id: base + local,
                end,
            });
        }
        witnesses.extend(out.witnesses);
    }
    edges.sort_by_key(|e| (e.from, e.to));
    graph.witnesses = witnesses;
    graph.edges = edges;
    graph.partial = partial;
    Ok(graph)
}

/// Nodes on directed cycles and the SCC classes containing them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecurrentEstimate {
    pub nodes: Vec<usize>,
    pub classes: Vec<Vec<usize>>,
}

/// Recurrent nodes of a directed graph on `n` vertices: members of
/// nontrivial strongly connected components and self-loop vertices.
pub fn recurrent_nodes(n: usize, edges: &[(usize, usize)]) -> RecurrentEstimate {
    let mut g = DiGraph::<(), ()>::with_capacity(n, edges.len());
    let ids: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    let mut self_loop = vec![false; n];
    for &(a, b) in edges {
        g.add_edge(ids[a], ids[b], ());
        if a == b {
            self_loop[a] = true;
        }
    }
    let mut classes: Vec<Vec<usize>> = tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut c: Vec<usize> = c.into_iter().map(|i| i.index()).collect();
            c.sort_unstable();
            c
        })
        .filter(|c| c.len() > 1 || self_loop[c[0]])
        .collect();
    classes.sort();
    let mut nodes: Vec<usize> = classes.iter().flatten().copied().collect();
    nodes.sort_unstable();
    RecurrentEstimate { nodes, classes }
}

pub fn chain_recurrent_estimate(graph: &ReachGraph) -> RecurrentEstimate {
    recurrent_nodes(graph.nodes.len(), &graph.edge_pairs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub coarse: RecurrentEstimate,
    pub fine: RecurrentEstimate,
    pub coarse_points: Vec<State>,
    pub fine_points: Vec<State>,
    /// Hausdorff distance between the two recurrent point sets.
    pub shift: f64,
    /// `shift ≤ eps` at the coarse level.
    pub stable: bool,
}

/// Recurrent estimates at `(eps, r)` and `(eps/2, r/2)`.
pub fn refinement_sweep(
    system: &HybridSystem,
    region: &SetRegion,
    net_radius: f64,
    tau: f64,
    eps: f64,
    internal: bool,
    budget: Budget,
    cfg: &ReachConfig,
) -> Result<SweepReport> {
    let coarse_g = build_reach_graph(system, region, net_radius, tau, eps, internal, budget, cfg)?;
    let fine_g = build_reach_graph(system, region, net_radius / 2.0, tau, eps / 2.0, internal, budget, cfg)?;
    let coarse = chain_recurrent_estimate(&coarse_g);
    let fine = chain_recurrent_estimate(&fine_g);
    let coarse_points: Vec<State> = coarse.nodes.iter().map(|&i| coarse_g.nodes[i].clone()).collect();
    let fine_points: Vec<State> = fine.nodes.iter().map(|&i| fine_g.nodes[i].clone()).collect();
    let shift = hausdorff(&coarse_points, &fine_points);
    Ok(SweepReport {
        coarse,
        fine,
        coarse_points,
        fine_points,
        shift,
        stable: shift <= eps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSearchFailure {
    pub reason: String,
    /// Nodes within `eps` of the start.
    pub sources: usize,
    /// Nodes reachable from those sources.
    pub reachable: usize,
}

impl std::fmt::Display for ChainSearchFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} ({} source nodes, {} reachable)",
            self.reason, self.sources, self.reachable
        )
    }
}

/// Shortest-hop chain from `x` to `y` through the graph.
///
/// The first link starts at a node within `eps` of `x` (a generalized chain
/// unless `x` is itself a node); the last link ends within `eps` of `y`.
pub fn find_chain(graph: &ReachGraph, x: &[f64], y: &[f64]) -> std::result::Result<Chain, ChainSearchFailure> {
    let mut sources = graph.nodes_within(x, graph.eps);
    sources.sort_by(|&a, &b| vecops::dist(&graph.nodes[a], x).total_cmp(&vecops::dist(&graph.nodes[b], x)));
    if sources.is_empty() {
        return Err(ChainSearchFailure {
            reason: "no node within eps of the start".into(),
            sources: 0,
            reachable: 0,
        });
    }
    let n = graph.nodes.len();
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut via: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut queue = VecDeque::new();
    for &s in &sources {
        visited[s] = true;
        queue.push_back(s);
    }
    let mut reachable = 0;
    while let Some(w) = queue.pop_front() {
        reachable += 1;
        let last_hop = graph
            .witnesses
            .iter()
            .filter(|wit| wit.from == w)
            .find_map(|wit| graph.hit(&wit.arc, y).map(|end| (wit, end)));
        if let Some((wit, end)) = last_hop {
            let mut path = vec![w];
            while let Some(p) = parent[*path.last().unwrap()] {
                path.push(p);
            }
            path.reverse();
            let mut links = Vec::new();
            let mut waypoints = vec![x.to_vec()];
            for pair in path.windows(2) {
                let e = &graph.edges[via[pair[1]].unwrap()];
                links.push(ChainLink {
                    arc: graph.witnesses[e.arc_id].arc.clone(),
                    end: e.end,
                });
                waypoints.push(graph.nodes[pair[1]].clone());
            }
            links.push(ChainLink {
                arc: wit.arc.clone(),
                end,
            });
            waypoints.push(y.to_vec());
            let generalized = graph.nodes[path[0]].as_slice() != x;
            return Ok(Chain {
                links,
                waypoints,
                tau: graph.tau,
                eps: graph.eps,
                internal_region: graph.internal.then(|| graph.region.clone()),
                generalized,
            });
        }
        let start = graph.edges.partition_point(|e| e.from < w);
        for (off, e) in graph.edges[start..].iter().enumerate() {
            if e.from != w {
                break;
            }
            if !visited[e.to] {
                visited[e.to] = true;
                parent[e.to] = Some(w);
                via[e.to] = Some(start + off);
                queue.push_back(e.to);
            }
        }
    }
    Err(ChainSearchFailure {
        reason: "no witness from the reachable set comes within eps of the target".into(),
        sources: sources.len(),
        reachable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{decay_system, rotation_system};
    use crate::schedule::StepSchedule;
    use crate::simulate::Horizon;

    fn brute_recurrent(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
        let mut reach = vec![vec![false; n]; n];
        for &(a, b) in edges {
            reach[a][b] = true;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        (0..n).filter(|&i| reach[i][i]).collect()
    }

    #[test]
    fn scc_examples() {
        assert!(recurrent_nodes(3, &[]).nodes.is_empty());
        let r = recurrent_nodes(4, &[(0, 1), (1, 0), (2, 2), (2, 3)]);
        assert_eq!(r.nodes, vec![0, 1, 2]);
        assert_eq!(r.classes, vec![vec![0, 1], vec![2]]);
        let e = [(0, 1), (1, 2), (2, 0), (3, 0)];
        assert_eq!(recurrent_nodes(4, &e).nodes, brute_recurrent(4, &e));
    }

    fn sim() -> SimConfig {
        SimConfig::new(StepSchedule::Power { a: 0.5, scale: 0.1 }, Horizon::steps(1_000_000))
    }

    #[test]
    fn decay_edges_point_to_origin() {
        let sys = decay_system(1);
        let k = SetRegion::interval(-1.0, 1.0);
        let g = build_reach_graph(
            &sys,
            &k,
            0.05,
            2.0,
            0.1,
            true,
            Budget::default(),
            &ReachConfig::new(sim(), 3.0),
        )
        .unwrap();
        assert!(!g.edges.is_empty());
        let bound = (-2f64).exp() + 0.1;
        for e in &g.edges {
            assert!(g.nodes[e.to][0].abs() <= bound + 1e-12, "{:?}", g.nodes[e.to]);
        }
        let rec = chain_recurrent_estimate(&g);
        assert!(!rec.nodes.is_empty());
        for &n in &rec.nodes {
            assert!(g.nodes[n][0].abs() <= 0.1 + 1e-12);
        }
    }

    #[test]
    fn empty_region_gives_empty_graph() {
        let sys = decay_system(1);
        let k = SetRegion::Custom {
            contains: std::sync::Arc::new(|_| false),
            project: None,
            bbox: Some((vec![0.0], vec![1.0])),
        };
        let g = build_reach_graph(
            &sys,
            &k,
            0.1,
            1.0,
            0.2,
            false,
            Budget::default(),
            &ReachConfig::new(sim(), 2.0),
        )
        .unwrap();
        assert!(g.nodes.is_empty() && g.edges.is_empty());
        assert!(chain_recurrent_estimate(&g).nodes.is_empty());
    }

    #[test]
    fn budget_marks_partial() {
        let sys = decay_system(1);
        let k = SetRegion::interval(-1.0, 1.0);
        let g = build_reach_graph(
            &sys,
            &k,
            0.1,
            1.0,
            0.2,
            false,
            Budget { max_simulations: 5 },
            &ReachConfig::new(sim(), 2.0),
        )
        .unwrap();
        assert!(g.partial);
    }

    #[test]
    fn rotation_annulus_single_class_and_chain() {
        let sys = rotation_system();
        let k = SetRegion::Annulus {
            center: vec![0.0, 0.0],
            r_in: 0.8,
            r_out: 1.2,
        };
        let g = build_reach_graph(
            &sys,
            &k,
            0.1,
            1.0,
            0.2,
            true,
            Budget::default(),
            &ReachConfig::new(sim(), 8.0),
        )
        .unwrap();
        let rec = chain_recurrent_estimate(&g);
        assert_eq!(rec.classes.len(), 1);
        assert_eq!(rec.nodes.len(), g.nodes.len());
        let chain = find_chain(&g, &[1.0, 0.0], &[-1.0, 0.0]).unwrap();
        let bound = (std::f64::consts::PI / 1.0).ceil() as usize + 1;
        assert!(chain.len() <= bound);
        let v = super::super::chain::verify_chain(&chain, &sys, true, 1e-9);
        assert!(v.valid, "{v:?}");
    }
}
