use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::hybrid_time::{graph_distance_below, HybridGraph, HybridTime};
use crate::simulate::{compress, euler_simulate, JumpPolicy, SimConfig};
use crate::system::{HybridSystem, SetRegion};
use crate::vecops;
use crate::State;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceEntry {
    pub x: State,
    pub success: bool,
    pub attempts: usize,
    /// Longest hybrid length achieved inside `K + tol`.
    pub best_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub entries: Vec<InvarianceEntry>,
    pub all_succeeded: bool,
}

/// For each sample, looks for a simulated solution that stays within
/// `tol` of `region` for hybrid length `big_t`.
///
/// Tries selections `0..attempts` with alternating jump policies.
pub fn weak_invariance_probe(
    system: &HybridSystem,
    region: &SetRegion,
    samples: &[State],
    big_t: f64,
    tol: f64,
    attempts: usize,
    sim: &SimConfig,
) -> InvarianceReport {
    let entries: Vec<InvarianceEntry> = samples
        .iter()
        .map(|x| {
            let mut best: f64 = 0.0;
            let mut used = 0;
            for a in 0..attempts.max(1) {
                used += 1;
                let mut cfg = sim.clone();
                cfg.selection = a;
                cfg.policy = if a % 2 == 0 {
                    JumpPolicy::PreferJump
                } else {
                    JumpPolicy::PreferFlow
                };
                cfg.seed = sim.seed.wrapping_add(a as u64);
                cfg.horizon.max_length = big_t;
                let run = match euler_simulate(system, x, &cfg) {
                    Ok(r) => r,
                    Err(Error::Escape { partial, .. }) => *partial,
                    Err(_) => continue,
                };
                let mut reached = 0.0;
                let mut inside = true;
                for (h, v) in run.times().iter().zip(&run.sequence.values) {
                    if region.distance(v) > tol {
                        inside = false;
                        break;
                    }
                    reached = h.length();
                }
                best = best.max(reached);
                if inside && reached >= big_t {
                    break;
                }
            }
            InvarianceEntry {
                x: x.clone(),
                success: best >= big_t,
                attempts: used,
                best_length: best,
            }
        })
        .collect();
    InvarianceReport {
        all_succeeded: entries.iter().all(|e| e.success),
        entries,
    }
}

/// A parametrized family of reference curves (e.g. solutions of a system).
pub trait CurveFamily {
    /// Members starting at or near the given values, as `(param, graph on [0, T])`.
    fn candidates(&self, start_values: &[State], big_t: f64) -> Vec<(State, HybridGraph)>;
    /// Members with parameters within `width` of `param`.
    fn refine(&self, param: &[f64], width: f64, big_t: f64) -> Vec<(State, HybridGraph)>;
}

/// Solutions of a system from given initial states; the parameter is `x(0,0)`.
pub struct SystemFamily<'a> {
    pub system: &'a HybridSystem,
    pub sim: SimConfig,
    /// Grid points per axis in [`CurveFamily::refine`].
    pub refine_side: usize,
}

impl SystemFamily<'_> {
    fn member(&self, x0: &[f64], big_t: f64) -> Option<HybridGraph> {
        let mut cfg = self.sim.clone();
        cfg.horizon.max_length = big_t;
        let run = match euler_simulate(self.system, x0, &cfg) {
            Ok(r) => r,
            Err(Error::Escape { partial, .. }) => *partial,
            Err(_) => return None,
        };
        Some(compress(&run))
    }
}

impl CurveFamily for SystemFamily<'_> {
    fn candidates(&self, start_values: &[State], big_t: f64) -> Vec<(State, HybridGraph)> {
        start_values
            .iter()
            .filter_map(|x| self.member(x, big_t).map(|g| (x.clone(), g)))
            .collect()
    }

    fn refine(&self, param: &[f64], width: f64, big_t: f64) -> Vec<(State, HybridGraph)> {
        let side = self.refine_side.max(2);
        let lo: Vec<f64> = param.iter().map(|p| p - width).collect();
        let hi: Vec<f64> = param.iter().map(|p| p + width).collect();
        crate::system::box_grid(&lo, &hi, side)
            .into_iter()
            .filter(|x| self.system.in_flow_set(x) || self.system.in_jump_set(x))
            .filter_map(|x| self.member(&x, big_t).map(|g| (x, g)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailEntry {
    /// Requested start.
    pub start: HybridTime,
    /// Domain time actually used: the first one at or after `start`.
    pub used: HybridTime,
    /// Smallest closeness found, `None` when inconclusive.
    pub eps: Option<f64>,
    pub param: Option<State>,
    pub evaluated: usize,
    pub inconclusive: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailSearch {
    /// Refinement rounds after the initial candidates.
    pub rounds: usize,
    /// Initial refinement half-width, halved each round.
    pub width: f64,
    /// Maximum number of family members evaluated per start.
    pub budget: usize,
}

impl Default for TailSearch {
    fn default() -> Self {
        Self {
            rounds: 8,
            width: 0.05,
            budget: 2_000,
        }
    }
}

/// Score of a reference curve against a tail: two-sided graph distance on
/// `[0, T]`, or the start offset if that is larger. `None` once it reaches `cap`.
fn score(tail: &HybridGraph, start_values: &[&State], member: &HybridGraph, big_t: f64, cap: f64) -> Option<f64> {
    let init = member
        .points()
        .first()
        .map(|p| {
            start_values
                .iter()
                .map(|v| vecops::dist(v, &p.x))
                .fold(f64::INFINITY, f64::min)
        })
        .unwrap_or(f64::INFINITY);
    if cap.is_finite() && init >= cap {
        return None;
    }
    graph_distance_below(tail, member, big_t, cap).map(|d| d.max(init))
}

/// For each start `(s, i)`, the smallest `ε` such that some member of the
/// family is `(T, ε)`-close to the tail of `candidate` after `(s, i)` and
/// starts within `ε` of a value of `candidate` there.
pub fn tail_closeness_diagnostic(
    candidate: &HybridGraph,
    family: &dyn CurveFamily,
    big_t: f64,
    starts: &[HybridTime],
    search: TailSearch,
) -> Vec<TailEntry> {
    let times = candidate.times();
    starts
        .iter()
        .map(|&start| {
            let used = times
                .iter()
                .copied()
                .find(|h| h.j >= start.j && h.t >= start.t && h.length() >= start.length())
                .unwrap_or(start);
            let mut entry = TailEntry {
                start,
                used,
                eps: None,
                param: None,
                evaluated: 0,
                inconclusive: true,
            };
            let values = candidate.values_at(used);
            if values.is_empty() {
                return entry;
            }
            let tail = candidate.tail(used).restrict(big_t + 1.0);
            let owned: Vec<State> = values.iter().map(|v| (*v).clone()).collect();
            let consider = |members: Vec<(State, HybridGraph)>, entry: &mut TailEntry| {
                for (param, g) in members {
                    if entry.evaluated >= search.budget {
                        return;
                    }
                    entry.evaluated += 1;
                    let cap = entry.eps.unwrap_or(f64::INFINITY);
                    if let Some(e) = score(&tail, &values, &g, big_t, cap) {
                        entry.eps = Some(e);
                        entry.param = Some(param);
                    }
                }
            };
            consider(family.candidates(&owned, big_t + 1.0), &mut entry);
            let mut width = search.width;
            for _ in 0..search.rounds {
                let Some(p) = entry.param.clone() else { break };
                consider(family.refine(&p, width, big_t + 1.0), &mut entry);
                width /= 2.0;
            }
            entry.inconclusive = entry.eps.is_none() || entry.evaluated >= search.budget;
            entry
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{decay_system, rotation_system};
    use crate::schedule::StepSchedule;
    use crate::simulate::Horizon;

    fn sim() -> SimConfig {
        SimConfig::new(StepSchedule::Power { a: 0.5, scale: 0.01 }, Horizon::steps(10_000_000))
    }

    #[test]
    fn invariance_examples() {
        let decay = decay_system(1);
        let origin = SetRegion::Points(vec![vec![0.0]]);
        assert!(weak_invariance_probe(&decay, &origin, &[vec![0.0]], 2.0, 1e-9, 2, &sim()).all_succeeded);
        let one = SetRegion::Points(vec![vec![1.0]]);
        assert!(!weak_invariance_probe(&decay, &one, &[vec![1.0]], 2.0, 1e-3, 2, &sim()).all_succeeded);
        let circle = SetRegion::sphere(vec![0.0, 0.0], 1.0);
        let samples: Vec<State> = (0..6)
            .map(|i| {
                let a = i as f64;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let rep = weak_invariance_probe(&rotation_system(), &circle, &samples, 6.3, 0.05, 1, &sim());
        assert!(rep.all_succeeded, "{rep:?}");
    }

    #[test]
    fn exact_solution_has_small_eps() {
        let sys = decay_system(1);
        let fam = SystemFamily {
            system: &sys,
            sim: sim(),
            refine_side: 3,
        };
        let mut cfg = sim();
        cfg.horizon.max_length = 8.0;
        let run = euler_simulate(&sys, &[1.0], &cfg).unwrap();
        let graph = compress(&run);
        let starts = [HybridTime::new(1.0, 0), HybridTime::new(2.0, 0)];
        let table = tail_closeness_diagnostic(
            &graph,
            &fam,
            3.0,
            &starts,
            TailSearch {
                rounds: 0,
                ..Default::default()
            },
        );
        for e in table {
            assert!(e.eps.unwrap() < 1e-2, "{e:?}");
        }
    }
}
