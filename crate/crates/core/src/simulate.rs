//! Euler-type simulation with vanishing steps and the bookkeeping that
//! certifies a run: `f̂_{k+1}`, `f_k`, `j̄_k`, `k̄_j`, the Benaim statistic,
//! compression, interpolation and the `χ` correction.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid_time::{
    ArcSegment, GraphPoint, HybridArc, HybridGraph, HybridSequence, HybridSequenceDomain, HybridTime, HybridTimeDomain,
};
use crate::schedule::{m_from_taus, StepSchedule};
use crate::system::HybridSystem;
use crate::vecops;
use crate::State;

/// How to resolve `x ∈ C ∩ D`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpPolicy {
    PreferFlow,
    PreferJump,
    /// Jump with probability `p`, from a seeded stream.
    Randomized {
        p: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizon {
    pub max_k: usize,
    pub max_j: usize,
    pub max_length: f64,
}

impl Horizon {
    pub fn steps(max_k: usize) -> Self {
        Self {
            max_k,
            max_j: usize::MAX,
            max_length: f64::INFINITY,
        }
    }
}

/// Nondecreasing envelope `γ(r) = a + b·r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub a: f64,
    #[serde(default)]
    pub b: f64,
}

impl Envelope {
    pub fn constant(a: f64) -> Self {
        Self { a, b: 0.0 }
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.a + self.b * r
    }
}

/// Deterministic perturbation `f̂ = f + h·γ(|x|)·u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub gamma: Envelope,
    pub unit: State,
}

/// State passed to a custom jump rule.
pub struct JumpContext<'a> {
    pub x: &'a [f64],
    /// The configured selection of `G(x)`.
    pub g: &'a [f64],
    pub k: usize,
    /// Jump index before the jump.
    pub j: usize,
}

/// Replaces the jump-map selection, e.g. by a randomized search.
pub type JumpRule = Arc<dyn Fn(&JumpContext<'_>, &mut ChaCha8Rng) -> State + Send + Sync>;

#[derive(Clone)]
pub struct SimConfig {
    pub schedule: StepSchedule,
    pub policy: JumpPolicy,
    pub horizon: Horizon,
    pub perturbation: Option<Perturbation>,
    /// States farther than this from `C ∪ D` end the run.
    pub guard: f64,
    /// Index passed to `ValueSet::select` for `F` and `G`.
    pub selection: usize,
    /// Project post-flow states back onto `C` when `C` has a projection.
    pub flow_clip: bool,
    pub seed: u64,
    pub jump_rule: Option<JumpRule>,
    /// Norm above which `bounded_observed` is cleared.
    pub bound: f64,
}

impl std::fmt::Debug for SimConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimConfig")
            .field("schedule", &self.schedule)
            .field("policy", &self.policy)
            .field("horizon", &self.horizon)
            .field("perturbation", &self.perturbation)
            .field("guard", &self.guard)
            .field("selection", &self.selection)
            .field("flow_clip", &self.flow_clip)
            .field("seed", &self.seed)
            .field("jump_rule", &self.jump_rule.is_some())
            .finish()
    }
}

impl SimConfig {
    pub fn new(schedule: StepSchedule, horizon: Horizon) -> Self {
        Self {
            schedule,
            policy: JumpPolicy::PreferJump,
            horizon,
            perturbation: None,
            guard: 1e-6,
            selection: 0,
            flow_clip: false,
            seed: 0,
            jump_rule: None,
            bound: 1e6,
        }
    }

    pub fn policy(mut self, p: JumpPolicy) -> Self {
        self.policy = p;
        self
    }

    pub fn seed(mut self, s: u64) -> Self {
        self.seed = s;
        self
    }

    pub fn selection(mut self, i: usize) -> Self {
        self.selection = i;
        self
    }

    pub fn flow_clip(mut self, on: bool) -> Self {
        self.flow_clip = on;
        self
    }

    pub fn guard(mut self, g: f64) -> Self {
        self.guard = g;
        self
    }

    pub fn perturbation(mut self, p: Perturbation) -> Self {
        self.perturbation = Some(p);
        self
    }

    pub fn jump_rule(mut self, r: JumpRule) -> Self {
        self.jump_rule = Some(r);
        self
    }

    pub fn manifest(&self, system: &str) -> RunManifest {
        RunManifest {
            system: system.to_string(),
            schedule: self.schedule.clone(),
            seed: self.seed,
            horizon: self.horizon,
            policy: self.policy,
        }
    }
}

/// Reproduction record of a single run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub system: String,
    pub schedule: StepSchedule,
    pub seed: u64,
    pub horizon: Horizon,
    pub policy: JumpPolicy,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunFlags {
    pub bounded_observed: bool,
    /// The run stopped because `max_k` was reached.
    pub complete_in_k: bool,
    pub complete_in_j: bool,
    pub reached_max_length: bool,
    pub schedule_exhausted: bool,
    pub max_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub sequence: HybridSequence,
    /// `f̂_{k+1}` for each flow step `k`.
    pub fhat: Vec<State>,
    /// `f_k`, the flow-map selection used at step `k`.
    pub fsel: Vec<State>,
    /// Realized jump outcomes `φ(k̄_j, j+1)`.
    pub ghat: Vec<State>,
    /// Jump-map selections `g_j`.
    pub gsel: Vec<State>,
    /// `j̄_k` for each flow step.
    pub jbar: Vec<usize>,
    /// `k̄_j` for each jump.
    pub kbar: Vec<usize>,
    /// `h_{k+1}` for each flow step.
    pub steps: Vec<f64>,
    /// `τ_0, …, τ_K`.
    pub tau: Vec<f64>,
    pub schedule: StepSchedule,
    pub flags: RunFlags,
    pub events: Vec<String>,
}

impl SimulationResult {
    pub fn flow_steps(&self) -> usize {
        self.fhat.len()
    }

    pub fn jumps(&self) -> usize {
        self.kbar.len()
    }

    pub fn final_state(&self) -> &State {
        self.sequence.values.last().unwrap()
    }

    pub fn value(&self, k: usize, j: usize) -> Option<&State> {
        self.sequence.get(k, j)
    }

    /// Compressed hybrid times `(τ_k, j)` in domain order.
    pub fn times(&self) -> Vec<HybridTime> {
        self.sequence
            .domain
            .steps()
            .iter()
            .map(|&(k, j)| HybridTime::new(self.tau[k], j))
            .collect()
    }

    /// Largest compressed length `τ_K + J`.
    pub fn length(&self) -> f64 {
        let (k, j) = self.sequence.domain.last();
        self.tau[k] + j as f64
    }

    /// First `k` index of jump segment `j` and the last.
    fn k_range(&self, j: usize) -> Option<(usize, usize)> {
        if j > self.kbar.len() {
            return None;
        }
        let start = if j == 0 { 0 } else { self.kbar[j - 1] };
        let end = self.kbar.get(j).copied().unwrap_or(self.sequence.domain.last().0);
        Some((start, end))
    }

    /// CSV with columns `k, j, tau_k, x_*, fhat_*, fsel_*`.
    ///
    /// `fhat`/`fsel` are filled on the row a flow step leaves from.
    pub fn to_csv(&self) -> String {
        let d = self.sequence.values[0].len();
        let mut out = String::from("k,j,tau_k");
        for prefix in ["x", "fhat", "fsel"] {
            for i in 0..d {
                write!(out, ",{prefix}_{i}").unwrap();
            }
        }
        out.push('\n');
        for (&(k, j), x) in self.sequence.domain.steps().iter().zip(&self.sequence.values) {
            write!(out, "{k},{j},{:?}", self.tau[k]).unwrap();
            for v in x {
                write!(out, ",{v:?}").unwrap();
            }
            let flows_here = k < self.jbar.len() && self.jbar[k] == j;
            for list in [&self.fhat, &self.fsel] {
                for i in 0..d {
                    if flows_here {
                        write!(out, ",{:?}", list[k][i]).unwrap();
                    } else {
                        out.push(',');
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    /// Whitespace-separated `tau_k j x_*` rows for plotting.
    pub fn to_dat(&self) -> String {
        let mut out = String::from("# tau_k j x...\n");
        for (&(k, j), x) in self.sequence.domain.steps().iter().zip(&self.sequence.values) {
            write!(out, "{:?} {j}", self.tau[k]).unwrap();
            for v in x {
                write!(out, " {v:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Sources of the flow disturbance `v_{k+1}` and jump disturbance `w_{j+1}`.
pub(crate) trait Disturbance {
    fn flow(&mut self, k: usize, x: &[f64], h: f64) -> Option<State>;
    fn jump(&mut self, j: usize, x: &[f64]) -> Option<State>;
}

struct Deterministic<'a>(Option<&'a Perturbation>);

impl Disturbance for Deterministic<'_> {
    fn flow(&mut self, _k: usize, x: &[f64], h: f64) -> Option<State> {
        self.0
            .map(|p| vecops::scale(&p.unit, h * p.gamma.eval(vecops::norm(x))))
    }

    fn jump(&mut self, _j: usize, _x: &[f64]) -> Option<State> {
        None
    }
}

/// Independent random streams per purpose and step index.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Stream {
    FlowNoise = 0,
    JumpNoise = 1,
    Policy = 2,
    JumpRule = 3,
}

pub(crate) fn stream_rng(seed: u64, kind: Stream, idx: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((kind as u64) << 56) | idx as u64);
    rng
}

/// Deterministic Euler-type simulation.
pub fn euler_simulate(system: &HybridSystem, x0: &[f64], cfg: &SimConfig) -> Result<SimulationResult> {
    run_engine(system, x0, cfg, &mut Deterministic(cfg.perturbation.as_ref()))
}

struct Recorder {
    steps: Vec<(usize, usize)>,
    values: Vec<State>,
    fhat: Vec<State>,
    fsel: Vec<State>,
    ghat: Vec<State>,
    gsel: Vec<State>,
    jbar: Vec<usize>,
    kbar: Vec<usize>,
    h: Vec<f64>,
    tau: Vec<f64>,
    flags: RunFlags,
    events: Vec<String>,
}

impl Recorder {
    fn finish(self, schedule: &StepSchedule) -> SimulationResult {
        SimulationResult {
            sequence: HybridSequence {
                domain: HybridSequenceDomain::new(self.steps).expect("engine builds staircases"),
                values: self.values,
            },
            fhat: self.fhat,
            fsel: self.fsel,
            ghat: self.ghat,
            gsel: self.gsel,
            jbar: self.jbar,
            kbar: self.kbar,
            steps: self.h,
            tau: self.tau,
            schedule: schedule.clone(),
            flags: self.flags,
            events: self.events,
        }
    }
}

pub(crate) fn run_engine(
    system: &HybridSystem,
    x0: &[f64],
    cfg: &SimConfig,
    dist: &mut dyn Disturbance,
) -> Result<SimulationResult> {
    if x0.len() != system.dim {
        return Err(Error::Dimension {
            expected: system.dim,
            got: x0.len(),
        });
    }
    if !system.in_flow_set(x0) && !system.in_jump_set(x0) {
        return Err(Error::Config(format!("initial state {x0:?} is outside C ∪ D")));
    }
    let mut rec = Recorder {
        steps: vec![(0, 0)],
        values: vec![x0.to_vec()],
        fhat: Vec::new(),
        fsel: Vec::new(),
        ghat: Vec::new(),
        gsel: Vec::new(),
        jbar: Vec::new(),
        kbar: Vec::new(),
        h: Vec::new(),
        tau: vec![0.0],
        flags: RunFlags {
            bounded_observed: true,
            max_norm: vecops::norm(x0),
            ..Default::default()
        },
        events: Vec::new(),
    };
    let mut x = x0.to_vec();
    let (mut k, mut j) = (0usize, 0usize);
    let mut tau = 0.0;
    loop {
        if k >= cfg.horizon.max_k {
            rec.flags.complete_in_k = true;
            break;
        }
        if j >= cfg.horizon.max_j {
            rec.flags.complete_in_j = true;
            break;
        }
        if tau + j as f64 >= cfg.horizon.max_length {
            rec.flags.reached_max_length = true;
            break;
        }
        let mut in_c = system.in_flow_set(&x);
        let mut in_d = system.in_jump_set(&x);
        if !in_c && !in_d {
            in_c = system.flow_set.distance(&x) <= cfg.guard;
            in_d = system.jump_set.distance(&x) <= cfg.guard;
        }
        let jump = match (in_c, in_d) {
            (false, false) => {
                return Err(Error::Escape {
                    k,
                    j,
                    partial: Box::new(rec.finish(&cfg.schedule)),
                })
            }
            (true, false) => false,
            (false, true) => true,
            (true, true) => match cfg.policy {
                JumpPolicy::PreferFlow => false,
                JumpPolicy::PreferJump => true,
                JumpPolicy::Randomized { p } => stream_rng(cfg.seed, Stream::Policy, k + j).random::<f64>() < p,
            },
        };
        let next = if jump {
            let g = system.jump_map.select(&x, cfg.selection)?;
            let mut out = match &cfg.jump_rule {
                Some(rule) => {
                    let ctx = JumpContext { x: &x, g: &g, k, j };
                    rule(&ctx, &mut stream_rng(cfg.seed, Stream::JumpRule, j))
                }
                None => g.clone(),
            };
            if let Some(w) = dist.jump(j, &x) {
                out = vecops::add(&out, &w);
                if let Some(region) = &system.post_jump_region {
                    if !region.contains(&out) {
                        match region.project(&out) {
                            Some(p) => out = p,
                            None => rec.events.push(format!("jump {j}: no projection available")),
                        }
                    }
                }
            }
            rec.gsel.push(g);
            rec.kbar.push(k);
            j += 1;
            out
        } else {
            let Some(h) = cfg.schedule.h(k + 1) else {
                rec.flags.schedule_exhausted = true;
                break;
            };
            let f = system.flow_map.select(&x, cfg.selection)?;
            let v = dist.flow(k, &x, h);
            let fhat = match &v {
                Some(v) => vecops::add(&f, v),
                None => f.clone(),
            };
            let mut xn = vecops::axpy(&x, h, &fhat);
            let mut rec_fhat = fhat;
            let mut rec_f = f;
            if cfg.flow_clip && !system.flow_set.contains(&xn) {
                if let Some(p) = system.flow_set.project(&xn) {
                    xn = p;
                    rec_fhat = vecops::scale(&vecops::sub(&xn, &x), 1.0 / h);
                    if v.is_none() && system.flow_map.eval(&x).contains(&rec_fhat, 1e-9) {
                        rec_f = rec_fhat.clone();
                    }
                }
            }
            rec.fhat.push(rec_fhat);
            rec.fsel.push(rec_f);
            rec.jbar.push(j);
            rec.h.push(h);
            tau += h;
            rec.tau.push(tau);
            k += 1;
            xn
        };
        if !vecops::is_finite(&next) {
            rec.events.push(format!("non-finite state at (k={k}, j={j})"));
            rec.flags.bounded_observed = false;
            // drop the bookkeeping of the step that produced the non-finite state
            if jump {
                rec.gsel.pop();
                rec.kbar.pop();
                j -= 1;
            } else {
                rec.fhat.pop();
                rec.fsel.pop();
                rec.jbar.pop();
                rec.h.pop();
                rec.tau.pop();
                k -= 1;
            }
            return Err(Error::Escape {
                k,
                j,
                partial: Box::new(rec.finish(&cfg.schedule)),
            });
        }
        let n = vecops::norm(&next);
        rec.flags.max_norm = rec.flags.max_norm.max(n);
        if n > cfg.bound {
            rec.flags.bounded_observed = false;
        }
        if jump {
            rec.ghat.push(next.clone());
        }
        rec.steps.push((k, j));
        rec.values.push(next.clone());
        x = next;
    }
    Ok(rec.finish(&cfg.schedule))
}

/// `sup_{k+1 ≤ n ≤ m(τ_k+T)} |Σ_{i=k}^{n-1} h_{i+1}(f̂_{i+1} − f_i)|`.
pub fn benaim_sup(result: &SimulationResult, big_t: f64, k: usize) -> Result<f64> {
    if !(big_t > 0.0) {
        return Err(Error::Config(format!("T must be positive, got {big_t}")));
    }
    let kmax = result.flow_steps();
    if k >= kmax {
        return Err(Error::Horizon(format!("k = {k} beyond {kmax} recorded flow steps")));
    }
    let target = result.tau[k] + big_t;
    if target > result.tau[kmax] {
        return Err(Error::Horizon(format!(
            "τ_k + T = {target} exceeds recorded τ_K = {}",
            result.tau[kmax]
        )));
    }
    let n_max = m_from_taus(&result.tau, target);
    let d = result.fhat[k].len();
    let mut acc = vec![0.0; d];
    let mut sup: f64 = 0.0;
    for i in k..n_max {
        let h = result.steps[i];
        for c in 0..d {
            acc[c] += h * (result.fhat[i][c] - result.fsel[i][c]);
        }
        sup = sup.max(vecops::norm(&acc));
    }
    Ok(sup)
}

/// `benaim_sup` at every `k` for which the window fits in the run.
pub fn benaim_series(result: &SimulationResult, big_t: f64) -> Vec<(usize, f64)> {
    (0..result.flow_steps())
        .map_while(|k| benaim_sup(result, big_t, k).ok().map(|v| (k, v)))
        .collect()
}

/// `φ̃(τ_k, j) = φ(k, j)` on `dom φ̃ = {(τ_k, j)}`.
pub fn compress(result: &SimulationResult) -> HybridGraph {
    HybridGraph::from_points(
        result
            .sequence
            .domain
            .steps()
            .iter()
            .zip(&result.sequence.values)
            .map(|(&(k, j), x)| GraphPoint {
                t: result.tau[k],
                j,
                x: x.clone(),
            })
            .collect(),
    )
}

/// Piecewise-linear interpolation `ψ` through `(τ_k, j, φ(k, j))`.
pub fn interpolate(result: &SimulationResult) -> HybridArc {
    let mut segments: Vec<ArcSegment> = Vec::new();
    for (&(k, j), x) in result.sequence.domain.steps().iter().zip(&result.sequence.values) {
        match segments.last_mut() {
            Some(seg) if seg.j == j => {
                seg.times.push(result.tau[k]);
                seg.values.push(x.clone());
            }
            _ => segments.push(ArcSegment {
                j,
                times: vec![result.tau[k]],
                values: vec![x.clone()],
            }),
        }
    }
    HybridArc::new(result.sequence.values[0].len(), segments).expect("staircase yields a valid arc")
}

/// Time domain of `ψ`.
pub fn interpolated_domain(result: &SimulationResult) -> HybridTimeDomain {
    interpolate(result).domain()
}

fn psi_contains(result: &SimulationResult, t: f64, j: usize) -> bool {
    result
        .k_range(j)
        .is_some_and(|(a, b)| result.tau[a] <= t && t <= result.tau[b])
}

/// `χ(s,i,t,j) = ∫_s^t U`, with `U = f_k − f̂_{k+1}` on `[τ_k, τ_{k+1})`.
pub fn chi_correction(result: &SimulationResult, s: f64, i: usize, t: f64, j: usize) -> Result<State> {
    if !psi_contains(result, s, i) {
        return Err(Error::NotInDomain { t: s, j: i });
    }
    if !psi_contains(result, t, j) {
        return Err(Error::NotInDomain { t, j });
    }
    if s + i as f64 > t + j as f64 {
        return Err(Error::Config("χ needs (s,i) ⪯ (t,j)".into()));
    }
    let d = result.sequence.values[0].len();
    let mut out = vec![0.0; d];
    if t <= s {
        return Ok(out);
    }
    let first = result.tau.partition_point(|&tk| tk <= s).saturating_sub(1);
    for k in first..result.flow_steps() {
        let (a, b) = (result.tau[k], result.tau[k + 1]);
        if a >= t {
            break;
        }
        let w = b.min(t) - a.max(s);
        if w > 0.0 {
            for c in 0..d {
                out[c] += w * (result.fsel[k][c] - result.fhat[k][c]);
            }
        }
    }
    Ok(out)
}

/// `sup_{τ_k ≤ r ≤ τ_k + T} |χ(τ_k, r)|` for each start `k` that fits.
pub fn chi_tail_sup(result: &SimulationResult, big_t: f64, starts: &[usize]) -> Vec<(usize, f64)> {
    let kmax = result.flow_steps();
    starts
        .iter()
        .filter(|&&k| k < kmax && result.tau[k] + big_t <= result.tau[kmax])
        .map(|&k| {
            let n_max = m_from_taus(&result.tau, result.tau[k] + big_t);
            let d = result.fhat[k].len();
            let mut acc = vec![0.0; d];
            let mut sup: f64 = 0.0;
            for i in k..n_max {
                for c in 0..d {
                    acc[c] += result.steps[i] * (result.fsel[i][c] - result.fhat[i][c]);
                }
                sup = sup.max(vecops::norm(&acc));
            }
            (k, sup)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// Largest spacing between consecutive lengths `t + j` past `start`.
    pub largest_gap: f64,
    pub largest_gap_at: f64,
    /// Left ends `T` of windows `[T, T+1+ε)` that contain no domain point.
    pub windows: Vec<f64>,
    /// The domain is finite, so every window past its end is empty.
    pub open_end: bool,
}

fn gap_scan_lengths(mut lengths: Vec<f64>, bounded: bool, eps: f64, start: f64) -> GapReport {
    lengths.sort_by(f64::total_cmp);
    lengths.dedup();
    let mut rep = GapReport {
        largest_gap: 0.0,
        largest_gap_at: start,
        windows: Vec::new(),
        open_end: bounded,
    };
    for w in lengths.windows(2) {
        if w[1] < start {
            continue;
        }
        let gap = w[1] - w[0];
        if gap > rep.largest_gap {
            rep.largest_gap = gap;
            rep.largest_gap_at = w[0];
        }
        if gap > 1.0 + eps {
            rep.windows.push(w[0]);
        }
    }
    rep
}

/// Gap scan of the compressed domain `{(τ_k, j)}` of a run.
pub fn gap_scan(result: &SimulationResult, eps: f64, start: f64) -> GapReport {
    let lengths = result.times().iter().map(|h| h.length()).collect();
    gap_scan_lengths(lengths, true, eps, start)
}

/// Gap scan of a hybrid time domain (flow intervals contribute no gaps).
pub fn gap_scan_domain(domain: &HybridTimeDomain, eps: f64, start: f64) -> GapReport {
    let lengths = domain
        .intervals()
        .iter()
        .flat_map(|iv| {
            let jf = iv.j as f64;
            [iv.t_start + jf, iv.t_end.min(f64::MAX) + jf]
        })
        .collect();
    gap_scan_lengths(lengths, domain.is_bounded(), eps, start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{SetRegion, SetValuedMap};

    fn unit_speed() -> HybridSystem {
        HybridSystem::flow_only("unit", 1, SetRegion::Everything, SetValuedMap::single(|_| vec![1.0]))
    }

    #[test]
    fn constant_field_telescopes_to_tau() {
        let cfg = SimConfig::new(StepSchedule::power(0.75), Horizon::steps(50));
        let r = euler_simulate(&unit_speed(), &[0.0], &cfg).unwrap();
        for k in 0..=r.flow_steps() {
            assert_eq!(r.value(k, 0).unwrap()[0], r.tau[k]);
        }
    }

    #[test]
    fn fhat_is_the_realized_difference_quotient() {
        let cfg = SimConfig::new(StepSchedule::power(0.75), Horizon::steps(200));
        let sys = HybridSystem::flow_only("decay", 1, SetRegion::Everything, SetValuedMap::single(|x| vec![-x[0]]));
        let r = euler_simulate(&sys, &[1.0], &cfg).unwrap();
        for k in 0..r.flow_steps() {
            let j = r.jbar[k];
            let dq = (r.value(k + 1, j).unwrap()[0] - r.value(k, j).unwrap()[0]) / r.steps[k];
            assert!((dq - r.fhat[k][0]).abs() <= 1e-12 * (1.0 + dq.abs()));
        }
        assert!(benaim_series(&r, 1.0).iter().all(|&(_, v)| v == 0.0));
    }

    #[test]
    fn benaim_single_defect() {
        let cfg = SimConfig::new(StepSchedule::power(0.75), Horizon::steps(100));
        let mut r = euler_simulate(&unit_speed(), &[0.0], &cfg).unwrap();
        let k0 = 20;
        r.fhat[k0][0] += 3.0;
        let v = r.steps[k0] * 3.0;
        assert_eq!(benaim_sup(&r, 1.0, k0).unwrap(), v);
        assert_eq!(benaim_sup(&r, 1.0, k0 + 1).unwrap(), 0.0);
        assert!(matches!(benaim_sup(&r, 1e6, k0), Err(Error::Horizon(_))));
    }

    #[test]
    fn compress_shapes() {
        let cfg = SimConfig::new(StepSchedule::power(1.0), Horizon::steps(3));
        let r = euler_simulate(&unit_speed(), &[0.0], &cfg).unwrap();
        let g = compress(&r);
        let times: Vec<(f64, usize)> = g.points().iter().map(|p| (p.t, p.j)).collect();
        assert_eq!(times, vec![(0.0, 0), (r.tau[1], 0), (r.tau[2], 0), (r.tau[3], 0)]);

        let jumper = HybridSystem::new(
            "jumper",
            1,
            SetRegion::Empty,
            SetValuedMap::single(|_| vec![0.0]),
            SetRegion::Everything,
            SetValuedMap::single(|x| vec![x[0] + 1.0]),
        );
        let cfg = SimConfig::new(
            StepSchedule::power(1.0),
            Horizon {
                max_k: 10,
                max_j: 4,
                max_length: f64::INFINITY,
            },
        );
        let r = euler_simulate(&jumper, &[0.0], &cfg).unwrap();
        let g = compress(&r);
        let times: Vec<(f64, usize)> = g.points().iter().map(|p| (p.t, p.j)).collect();
        assert_eq!(times, vec![(0.0, 0), (0.0, 1), (0.0, 2), (0.0, 3), (0.0, 4)]);
        assert!(r.flags.complete_in_j);
    }

    #[test]
    fn interpolation_midpoint_and_slope() {
        let sys = HybridSystem::flow_only("decay", 1, SetRegion::Everything, SetValuedMap::single(|x| vec![-x[0]]));
        let cfg = SimConfig::new(StepSchedule::power(0.75), Horizon::steps(30));
        let r = euler_simulate(&sys, &[2.0], &cfg).unwrap();
        let psi = interpolate(&r);
        for k in 0..r.flow_steps() {
            let mid = r.tau[k] + 0.5 * r.steps[k];
            let got = psi.eval(HybridTime::new(mid, 0)).unwrap()[0];
            let avg = 0.5 * (r.value(k, 0).unwrap()[0] + r.value(k + 1, 0).unwrap()[0]);
            assert!((got - avg).abs() < 1e-12);
        }
    }

    #[test]
    fn chi_constant_defect() {
        let cfg = SimConfig::new(StepSchedule::power(0.75), Horizon::steps(40));
        let mut r = euler_simulate(&unit_speed(), &[0.0], &cfg).unwrap();
        for f in r.fhat.iter_mut() {
            f[0] -= 0.25;
        }
        let (s, t) = (r.tau[3] + 0.1, r.tau[20] - 0.05);
        let chi = chi_correction(&r, s, 0, t, 0).unwrap();
        assert!((chi[0] - 0.25 * (t - s)).abs() < 1e-12);
        assert!(chi_correction(&r, 0.0, 1, 1.0, 1).is_err());
    }

    #[test]
    fn gap_scan_examples() {
        let cfg = SimConfig::new(StepSchedule::power(0.75), Horizon::steps(500));
        let r = euler_simulate(&unit_speed(), &[0.0], &cfg).unwrap();
        let rep = gap_scan(&r, 0.01, 0.0);
        assert!(rep.windows.is_empty());
        assert!(rep.largest_gap <= 1.0);
        assert!(rep.open_end);
        let d = HybridTimeDomain::new((0..5).map(|j| (0.0, 0.0, j).into()).collect()).unwrap();
        assert!(gap_scan_domain(&d, 0.01, 0.0).windows.is_empty());
    }

    #[test]
    fn escape_is_reported_with_partial_result() {
        let sys = HybridSystem::flow_only(
            "runaway",
            1,
            SetRegion::interval(0.0, 1.0),
            SetValuedMap::single(|_| vec![1.0]),
        );
        let cfg = SimConfig::new(StepSchedule::power(1.0), Horizon::steps(100));
        match euler_simulate(&sys, &[0.0], &cfg) {
            Err(Error::Escape { partial, .. }) => assert!(partial.flow_steps() >= 1),
            other => panic!("expected escape, got {other:?}"),
        }
    }

    #[test]
    fn csv_has_expected_header() {
        let cfg = SimConfig::new(StepSchedule::power(1.0), Horizon::steps(2));
        let r = euler_simulate(&unit_speed(), &[0.0], &cfg).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("k,j,tau_k,x_0,fhat_0,fsel_0\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
