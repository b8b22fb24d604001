//! Concrete systems with known ground truth.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::analyze::CurveFamily;
use crate::error::{Error, Result};
use crate::hybrid_time::{GraphPoint, HybridGraph};
use crate::schedule::StepSchedule;
use crate::simulate::{Horizon, JumpPolicy, JumpRule, SimConfig};
use crate::system::{dwell_automaton, HybridSystem, SetRegion, SetValuedMap, ValueSet};
use crate::vecops;
use crate::State;

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64]) -> State + Send + Sync>;

/// `ż = −z³` on `R`, without resets. Diverges under large Euler steps.
pub fn cubic_system() -> HybridSystem {
    HybridSystem::flow_only(
        "cubic",
        1,
        SetRegion::Everything,
        SetValuedMap::single(|x| vec![-x[0].powi(3)]),
    )
}

/// Cubic flow with a timer-driven clamped reset on state `(z, τ)`:
/// `C = R×[0,1]`, `f = (−z³, δ)`, `D = R×[1,∞)`, `g_c = (sgn(z)·min(|z|,c), 0)`.
///
/// Jumps are spaced `1/δ` flow time apart, so domains satisfy the
/// average-dwell bound `(N, δ)` for any `N ≥ 1`.
pub fn cubic_reset_system(c: f64, n: u32, delta: f64) -> Result<HybridSystem> {
    if !(c > 0.0) || n < 1 || !(delta > 0.0) {
        return Err(Error::Config(format!(
            "cubic_reset needs c > 0, N ≥ 1, δ > 0; got c = {c}, N = {n}, δ = {delta}"
        )));
    }
    Ok(HybridSystem::new(
        format!("cubic_reset(c={c})"),
        2,
        SetRegion::Box {
            lo: vec![f64::NEG_INFINITY, 0.0],
            hi: vec![f64::INFINITY, 1.0],
        },
        SetValuedMap::single(move |x| vec![-x[0].powi(3), delta]),
        SetRegion::Box {
            lo: vec![f64::NEG_INFINITY, 1.0],
            hi: vec![f64::INFINITY, f64::INFINITY],
        },
        SetValuedMap::single(move |x| vec![x[0].signum() * x[0].abs().min(c), 0.0]),
    ))
}

/// Planar rotation `ẋ = (x₂, −x₁)`.
pub fn rotation_system() -> HybridSystem {
    HybridSystem::flow_only(
        "rotation",
        2,
        SetRegion::Everything,
        SetValuedMap::single(|x| vec![x[1], -x[0]]),
    )
}

/// `ẋ = −x` in `R^d`.
pub fn decay_system(dim: usize) -> HybridSystem {
    HybridSystem::flow_only(
        "decay",
        dim,
        SetRegion::Everything,
        SetValuedMap::single(|x| x.iter().map(|v| -v).collect()),
    )
}

/// Gradient flow of `(x² − 1)²`: wells at `±1`, separatrix at `0`.
pub fn two_well_system() -> HybridSystem {
    HybridSystem::flow_only(
        "two_well",
        1,
        SetRegion::Everything,
        SetValuedMap::single(|x| vec![-4.0 * x[0] * (x[0] * x[0] - 1.0)]),
    )
}

/// The timer automaton as a preset.
pub fn dwell_system(n: u32, delta: f64) -> Result<HybridSystem> {
    dwell_automaton(n, delta)
}

/// A smooth objective `Θ` on a constraint set `S` with projection `P_S`.
#[derive(Clone)]
pub struct ObjectiveSpec {
    pub name: String,
    pub theta: ScalarFn,
    pub gradient: VectorFn,
    pub s: SetRegion,
    pub dim: usize,
    pub critical_points: Option<Vec<State>>,
    pub minimizers: Option<Vec<State>>,
}

impl fmt::Debug for ObjectiveSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObjectiveSpec")
            .field("name", &self.name)
            .field("s", &self.s)
            .field("critical_points", &self.critical_points)
            .finish()
    }
}

impl ObjectiveSpec {
    /// `Θ(y) = (y² − 1)²` on `S = [−2, 2]`.
    pub fn double_well() -> Self {
        Self {
            name: "double_well".into(),
            theta: Arc::new(|y| (y[0] * y[0] - 1.0).powi(2)),
            gradient: Arc::new(|y| vec![4.0 * y[0] * (y[0] * y[0] - 1.0)]),
            s: SetRegion::interval(-2.0, 2.0),
            dim: 1,
            critical_points: Some(vec![vec![-1.0], vec![0.0], vec![1.0]]),
            minimizers: Some(vec![vec![-1.0], vec![1.0]]),
        }
    }

    /// `Θ(y) = Σ y_i² + 2(1 − cos 2π y_i)` on `[−2, 2]^d`; critical set not listed.
    pub fn rastrigin_like(dim: usize) -> Self {
        Self {
            name: "rastrigin_like".into(),
            theta: Arc::new(|y| y.iter().map(|v| v * v + 2.0 * (1.0 - (2.0 * PI * v).cos())).sum()),
            gradient: Arc::new(|y| y.iter().map(|v| 2.0 * v + 4.0 * PI * (2.0 * PI * v).sin()).collect()),
            s: SetRegion::Box {
                lo: vec![-2.0; dim],
                hi: vec![2.0; dim],
            },
            dim,
            critical_points: None,
            minimizers: Some(vec![vec![0.0; dim]]),
        }
    }

    pub fn theta(&self, y: &[f64]) -> f64 {
        (self.theta)(y)
    }

    pub fn gradient(&self, y: &[f64]) -> State {
        (self.gradient)(y)
    }
}

/// Distance to the listed critical set, else the residual `|∇Θ(y)|`.
pub fn critical_set_distance(y: &[f64], objective: &ObjectiveSpec) -> f64 {
    match &objective.critical_points {
        Some(pts) => pts.iter().map(|p| vecops::dist(p, y)).fold(f64::INFINITY, f64::min),
        None => vecops::norm(&objective.gradient(y)),
    }
}

/// Law of the search directions `z_j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ZSampler {
    Gaussian {
        sigma: f64,
    },
    /// Uniform in `[−w, w]^m`.
    Uniform {
        half_width: f64,
    },
}

impl ZSampler {
    fn sample(&self, rng: &mut impl Rng, m: usize) -> State {
        match self {
            ZSampler::Gaussian { sigma } => (0..m).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect(),
            ZSampler::Uniform { half_width } => (0..m).map(|_| rng.random_range(-half_width..=*half_width)).collect(),
        }
    }

    /// `P(|z| > c)`.
    pub fn tail(&self, m: usize, c: f64) -> f64 {
        match self {
            ZSampler::Gaussian { sigma } => {
                let chi2 = ChiSquared::new(m as f64).expect("positive degrees of freedom");
                chi2.sf((c / sigma).powi(2))
            }
            ZSampler::Uniform { half_width } => {
                if c >= half_width * (m as f64).sqrt() {
                    0.0
                } else {
                    // conservative: any c inside the cube is treated as exceeded
                    1.0
                }
            }
        }
    }
}

/// Jump-size schedule `ℓ_j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EllSchedule {
    /// `ℓ_j = 1/(j c_j)` with `P(|z_j| > c_j) ≤ 2^{−j}`, `c_j ≥ 1`.
    BorelCantelli,
    /// `min(ℓ̃_j, β ℓ_j)` with `ℓ̃_j = scale · j^{−q}` (`q = 0` never vanishes).
    Capped { beta: f64, tilde_scale: f64, tilde_q: f64 },
}

#[derive(Clone, Debug)]
pub struct AnnealingConfig {
    pub objective: ObjectiveSpec,
    pub n: u32,
    pub delta: f64,
    pub ell: EllSchedule,
    pub z: ZSampler,
    /// Clip `|z_j|` to `c_j`, making `ℓ_j |z_j| ≤ 1/j` hold surely.
    pub clip_z: bool,
}

impl AnnealingConfig {
    pub fn new(objective: ObjectiveSpec) -> Self {
        Self {
            objective,
            n: 2,
            delta: 0.5,
            ell: EllSchedule::BorelCantelli,
            z: ZSampler::Gaussian { sigma: 1.0 },
            clip_z: true,
        }
    }

    /// Smallest `c ≥ 1` (to bisection precision) with `P(|z| > c) ≤ 2^{−j}`.
    pub fn c_j(&self, j: usize) -> f64 {
        let m = self.objective.dim;
        // 2^-1000 is near the underflow limit; grow like sqrt(j) past it
        let jj = j.clamp(1, 1000);
        let target = 0.5f64.powi(jj as i32);
        let mut lo = 0.0;
        let mut hi = 1.0;
        while self.z.tail(m, hi) > target {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.z.tail(m, mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let c = hi.max(1.0);
        if j > 1000 {
            c * (j as f64 / 1000.0).sqrt()
        } else {
            c
        }
    }

    /// `ℓ_j = 1/(j c_j)`.
    pub fn ell_bc(&self, j: usize) -> f64 {
        1.0 / (j as f64 * self.c_j(j))
    }

    /// The configured jump scale at index `j ≥ 1`.
    pub fn ell(&self, j: usize) -> f64 {
        match self.ell {
            EllSchedule::BorelCantelli => self.ell_bc(j),
            EllSchedule::Capped {
                beta,
                tilde_scale,
                tilde_q,
            } => (tilde_scale * (j as f64).powf(-tilde_q)).min(beta * self.ell_bc(j)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || !(self.delta > 0.0) {
            return Err(Error::Config("annealing needs N ≥ 1 and δ > 0".into()));
        }
        if !self.objective.s.has_projection() {
            return Err(Error::Config("constraint set S needs a projection".into()));
        }
        if let EllSchedule::Capped { beta, tilde_scale, .. } = self.ell {
            if !(beta > 0.0 && tilde_scale > 0.0) {
                return Err(Error::Config("capped schedule needs β > 0 and ℓ̃ > 0".into()));
            }
        }
        Ok(())
    }
}

/// An annealing preset: system data plus its random jump law.
#[derive(Clone)]
pub struct Annealing {
    pub system: HybridSystem,
    pub jump_rule: JumpRule,
    pub config: AnnealingConfig,
}

impl Annealing {
    /// Simulation settings the preset is meant to run with.
    pub fn sim_config(&self, schedule: StepSchedule, horizon: Horizon, seed: u64) -> SimConfig {
        SimConfig::new(schedule, horizon)
            .policy(JumpPolicy::PreferJump)
            .flow_clip(true)
            .jump_rule(self.jump_rule.clone())
            .seed(seed)
    }

    /// Region `S × [0, N]`.
    pub fn region(&self) -> SetRegion {
        SetRegion::Product(vec![
            (self.config.objective.s.clone(), self.config.objective.dim),
            (SetRegion::interval(0.0, self.config.n as f64), 1),
        ])
    }
}

/// `C = S×[0,N]`, `F(y,τ) = −∇Θ(y)×[0,δ]`, `D = S×[1,N]`, `G(y,τ) = (y, τ−1)`,
/// with the jump law `y⁺ ∈ argmin{Θ(p) : p ∈ {y, P_S(y + ℓ_{j+1} z_{j+1})}}`.
///
/// Ties keep the current point.
pub fn annealing_system(config: AnnealingConfig) -> Result<Annealing> {
    config.validate()?;
    let m = config.objective.dim;
    let nf = config.n as f64;
    let delta = config.delta;
    let s = config.objective.s.clone();
    let grad = config.objective.gradient.clone();
    let flow_set = SetRegion::Product(vec![(s.clone(), m), (SetRegion::interval(0.0, nf), 1)]);
    let jump_set = SetRegion::Product(vec![(s.clone(), m), (SetRegion::interval(1.0, nf), 1)]);
    let system = HybridSystem::new(
        format!("annealing({})", config.objective.name),
        m + 1,
        flow_set.clone(),
        SetValuedMap::new(move |x| {
            ValueSet::Product(vec![
                ValueSet::Singleton(grad(&x[..m]).iter().map(|g| -g).collect()),
                ValueSet::Hull(vec![vec![delta], vec![0.0]]),
            ])
        }),
        jump_set,
        SetValuedMap::single(move |x| {
            let mut out = x.to_vec();
            out[m] -= 1.0;
            out
        }),
    )
    .with_post_jump_region(flow_set);

    let cfg = config.clone();
    let rule: JumpRule = Arc::new(move |ctx, rng| {
        let j_next = ctx.j + 1;
        let y = &ctx.x[..m];
        let mut z = cfg.z.sample(rng, m);
        let c = cfg.c_j(j_next);
        if cfg.clip_z {
            let nz = vecops::norm(&z);
            if nz > c {
                z = vecops::scale(&z, c / nz);
            }
        }
        let ell = cfg.ell(j_next);
        let mut out = ctx.g.to_vec();
        if let Some(p) = cfg.objective.s.project(&vecops::axpy(y, ell, &z)) {
            if cfg.objective.theta(&p) < cfg.objective.theta(y) {
                out[..m].copy_from_slice(&p);
            }
        }
        out
    });
    Ok(Annealing {
        system,
        jump_rule: rule,
        config,
    })
}

/// Harmonic partial sums `H_n ≤ horizon` (with `H_0 = 0`).
pub fn sine_band_times(horizon: f64) -> Vec<f64> {
    let mut out = vec![0.0];
    let mut acc = 0.0;
    let mut n = 1usize;
    loop {
        acc += 1.0 / n as f64;
        if acc > horizon {
            break;
        }
        out.push(acc);
        n += 1;
    }
    out
}

/// The band `φ(t,0) = [sin t − e^{−t}, sin t + e^{−t}]` on `t ∈ {0, H_1, H_2, …}`,
/// each interval sampled with `per_time` evenly spaced points.
pub fn sine_band_curve(per_time: usize, horizon: f64) -> Result<HybridGraph> {
    if !(horizon > 0.0) {
        return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
    }
    let per = per_time.max(2);
    let mut points = Vec::new();
    for t in sine_band_times(horizon) {
        let (c, w) = (t.sin(), (-t).exp());
        for i in 0..per {
            let u = -1.0 + 2.0 * i as f64 / (per - 1) as f64;
            points.push(GraphPoint {
                t,
                j: 0,
                x: vec![c + u * w],
            });
        }
    }
    Ok(HybridGraph::from_points(points))
}

/// `L = {t ↦ sin(t + r)}`, sampled every `dt` on `[0, T]`.
#[derive(Clone, Copy, Debug)]
pub struct SineFamily {
    pub dt: f64,
}

impl SineFamily {
    pub fn curve(&self, r: f64, big_t: f64) -> HybridGraph {
        let n = (big_t / self.dt).ceil() as usize;
        HybridGraph::from_points(
            (0..=n)
                .map(|i| {
                    let t = if i == n { big_t } else { i as f64 * self.dt };
                    GraphPoint {
                        t,
                        j: 0,
                        x: vec![(t + r).sin()],
                    }
                })
                .collect(),
        )
    }
}

impl CurveFamily for SineFamily {
    fn candidates(&self, start_values: &[State], big_t: f64) -> Vec<(State, HybridGraph)> {
        let mut out = Vec::new();
        for v in start_values {
            let a = v[0].clamp(-1.0, 1.0).asin();
            for r in [a, PI - a] {
                out.push((vec![r], self.curve(r, big_t)));
            }
        }
        out
    }

    fn refine(&self, param: &[f64], width: f64, big_t: f64) -> Vec<(State, HybridGraph)> {
        (0..=10)
            .map(|i| {
                let r = param[0] - width + 2.0 * width * i as f64 / 10.0;
                (vec![r], self.curve(r, big_t))
            })
            .collect()
    }
}

/// Preset names accepted by configuration files.
pub const PRESET_NAMES: &[&str] = &[
    "cubic",
    "cubic_reset(c,N,delta)",
    "annealing",
    "rotation",
    "decay",
    "two_well",
    "dwell(N,delta)",
];
