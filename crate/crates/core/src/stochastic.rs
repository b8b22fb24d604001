//! Noisy sample paths `f̂ = f + v`, `ĝ = g + w`, schedule/noise validators
//! and a Monte Carlo view of the Benaim statistic.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::StepSchedule;
use crate::simulate::{benaim_sup, run_engine, stream_rng, Disturbance, SimConfig, SimulationResult, Stream};
use crate::system::HybridSystem;
use crate::vecops;
use crate::State;

pub type Sampler = Arc<dyn Fn(&mut ChaCha8Rng, &[f64]) -> State + Send + Sync>;

/// Flow noise `v_{k+1}`.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    None,
    /// Uniform in the ball of the given radius.
    Bounded {
        radius: f64,
        #[serde(default = "one")]
        p: f64,
    },
    /// Componentwise normal, truncated at `8σ`.
    Gaussian {
        sigma: f64,
    },
    /// A constant offset (not zero-mean).
    Bias {
        value: State,
    },
    #[serde(skip)]
    Custom {
        sampler: Sampler,
        gamma: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl fmt::Debug for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseModel::None => write!(f, "None"),
            NoiseModel::Bounded { radius, p } => write!(f, "Bounded {{ radius: {radius}, p: {p} }}"),
            NoiseModel::Gaussian { sigma } => write!(f, "Gaussian {{ sigma: {sigma} }}"),
            NoiseModel::Bias { value } => write!(f, "Bias {{ value: {value:?} }}"),
            NoiseModel::Custom { gamma, .. } => write!(f, "Custom {{ gamma: {gamma} }}"),
        }
    }
}

impl NoiseModel {
    /// Moment order `p` (1 when not applicable).
    pub fn p(&self) -> f64 {
        match self {
            NoiseModel::Bounded { p, .. } => *p,
            _ => 1.0,
        }
    }

    /// The envelope `γ`, constant in `|x|` for all built-in models.
    ///
    /// Bounded: `radius^{2p}`. Gaussian: `σ²/2`, the sub-Gaussian constant.
    pub fn gamma(&self, _r: f64) -> f64 {
        match self {
            NoiseModel::None => 0.0,
            NoiseModel::Bounded { radius, p } => radius.powf(2.0 * p),
            NoiseModel::Gaussian { sigma } => 0.5 * sigma * sigma,
            NoiseModel::Bias { value } => vecops::norm(value).powi(2),
            NoiseModel::Custom { gamma, .. } => *gamma,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            NoiseModel::None => true,
            NoiseModel::Bounded { radius, .. } => *radius == 0.0,
            NoiseModel::Gaussian { sigma } => *sigma == 0.0,
            NoiseModel::Bias { value } => value.iter().all(|v| *v == 0.0),
            NoiseModel::Custom { .. } => false,
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng, x: &[f64]) -> State {
        let d = x.len();
        match self {
            NoiseModel::None => vec![0.0; d],
            NoiseModel::Bounded { radius, .. } => {
                if *radius == 0.0 {
                    return vec![0.0; d];
                }
                let dir: Vec<f64> = loop {
                    let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                    let n = vecops::norm(&g);
                    if n > 1e-300 {
                        break vecops::scale(&g, 1.0 / n);
                    }
                };
                let u: f64 = rng.random();
                vecops::scale(&dir, radius * u.powf(1.0 / d as f64))
            }
            NoiseModel::Gaussian { sigma } => (0..d)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    sigma * z.clamp(-8.0, 8.0)
                })
                .collect(),
            NoiseModel::Bias { value } => value.clone(),
            NoiseModel::Custom { sampler, .. } => sampler(rng, x),
        }
    }
}

/// `ρ_j`, the decay profile of the jump noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "param", rename_all = "snake_case")]
pub enum RhoSchedule {
    /// `ρ_j = r^j`.
    Geometric(f64),
    /// `ρ_j = 1/j`.
    Harmonic,
    /// `ρ_j = j^{-q}`.
    Power(f64),
}

impl RhoSchedule {
    pub fn rho(&self, j: usize) -> f64 {
        let jf = j.max(1) as f64;
        match self {
            RhoSchedule::Geometric(r) => r.powf(jf),
            RhoSchedule::Harmonic => 1.0 / jf,
            RhoSchedule::Power(q) => jf.powf(-q),
        }
    }

    pub fn is_summable(&self) -> bool {
        match self {
            RhoSchedule::Geometric(r) => *r < 1.0,
            RhoSchedule::Harmonic => false,
            RhoSchedule::Power(q) => *q > 1.0,
        }
    }

    pub fn vanishes(&self) -> bool {
        match self {
            RhoSchedule::Geometric(r) => *r < 1.0,
            RhoSchedule::Harmonic => true,
            RhoSchedule::Power(q) => *q > 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            RhoSchedule::Geometric(r) if !(*r > 0.0) => {
                Err(Error::Config(format!("geometric ratio must be positive, got {r}")))
            }
            RhoSchedule::Power(q) if !q.is_finite() => Err(Error::Config(format!("bad exponent {q}"))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpNoiseMode {
    /// `Σ ρ_j < ∞` and `E|w_{j+1}|^{2p} ≤ ρ_{j+1} γ`; realized by `|w| ≤ (ρ γ)^{1/2p}`.
    SummableRho { p: f64 },
    /// `ρ_j → 0` and `|w_{j+1}| ≤ ρ_{j+1} γ`.
    DirectDecay,
}

/// Jump noise `w_{j+1}` clipped to its `ρ` envelope.
#[derive(Clone, Debug)]
pub struct JumpNoiseModel {
    pub base: NoiseModel,
    pub rho: RhoSchedule,
    pub mode: JumpNoiseMode,
}

impl JumpNoiseModel {
    /// Bound on `|w_{j+1}|` at state `x`.
    pub fn envelope(&self, j_next: usize, x: &[f64]) -> f64 {
        let rg = self.rho.rho(j_next) * self.base.gamma(vecops::norm(x));
        match self.mode {
            JumpNoiseMode::SummableRho { p } => rg.powf(1.0 / (2.0 * p)),
            JumpNoiseMode::DirectDecay => rg,
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng, j_next: usize, x: &[f64]) -> State {
        let w = self.base.sample(rng, x);
        let bound = self.envelope(j_next, x);
        let n = vecops::norm(&w);
        if n > bound {
            if bound == 0.0 {
                return vec![0.0; w.len()];
            }
            vecops::scale(&w, bound / n)
        } else {
            w
        }
    }
}

/// Wraps a sampler so that realized jump noise obeys the selected branch.
pub fn jump_noise_schedule(base: NoiseModel, rho: RhoSchedule, mode: JumpNoiseMode) -> Result<JumpNoiseModel> {
    rho.validate()?;
    match mode {
        JumpNoiseMode::SummableRho { p } => {
            if p < 1.0 {
                return Err(Error::Config(format!("moment order p must be ≥ 1, got {p}")));
            }
            if !rho.is_summable() {
                return Err(Error::Config(format!("{rho:?} is not summable")));
            }
        }
        JumpNoiseMode::DirectDecay => {
            if !rho.vanishes() {
                return Err(Error::Config(format!("{rho:?} does not tend to zero")));
            }
        }
    }
    Ok(JumpNoiseModel { base, rho, mode })
}

/// A seeded run with its noise traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomRun {
    pub seed: u64,
    pub result: SimulationResult,
    /// `v_{k+1}` per flow step.
    pub v: Vec<State>,
    /// `w_{j+1}` per jump, with the envelope it was clipped to.
    pub w: Vec<(State, f64)>,
}

struct Noisy<'a> {
    seed: u64,
    cfg: &'a SimConfig,
    flow: &'a NoiseModel,
    jump: Option<&'a JumpNoiseModel>,
    v: Vec<State>,
    w: Vec<(State, f64)>,
}

impl Disturbance for Noisy<'_> {
    fn flow(&mut self, k: usize, x: &[f64], h: f64) -> Option<State> {
        let mut rng = stream_rng(self.seed, Stream::FlowNoise, k);
        let mut v = self.flow.sample(&mut rng, x);
        if let Some(p) = &self.cfg.perturbation {
            v = vecops::axpy(&v, h * p.gamma.eval(vecops::norm(x)), &p.unit);
        }
        // drop the trace of a step the engine later discards
        self.v.truncate(k);
        self.v.push(v.clone());
        Some(v)
    }

    fn jump(&mut self, j: usize, x: &[f64]) -> Option<State> {
        let model = self.jump?;
        let mut rng = stream_rng(self.seed, Stream::JumpNoise, j);
        let w = model.sample(&mut rng, j + 1, x);
        self.w.truncate(j);
        self.w.push((w.clone(), model.envelope(j + 1, x)));
        Some(w)
    }
}

/// Noisy simulation; the seed is `cfg.seed`.
pub fn noisy_simulate(
    system: &HybridSystem,
    x0: &[f64],
    cfg: &SimConfig,
    noise: &NoiseModel,
    jump_noise: Option<&JumpNoiseModel>,
) -> Result<RandomRun> {
    let mut d = Noisy {
        seed: cfg.seed,
        cfg,
        flow: noise,
        jump: jump_noise,
        v: Vec::new(),
        w: Vec::new(),
    };
    let result = run_engine(system, x0, cfg, &mut d)?;
    d.v.truncate(result.flow_steps());
    d.w.truncate(result.jumps());
    Ok(RandomRun {
        seed: cfg.seed,
        result,
        v: d.v,
        w: d.w,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    pub reason: String,
}

/// Heuristic summability test on the terms of a finite list: the last half
/// contributes at most 5% of the total.
fn tail_share_small(terms: &[f64]) -> (bool, f64) {
    let total: f64 = terms.iter().sum();
    if total == 0.0 {
        return (true, 0.0);
    }
    let tail: f64 = terms[terms.len() / 2..].iter().sum();
    let share = tail / total;
    (share <= 0.05, share)
}

/// `Σ h_{k+1}^{1+p} < ∞`.
pub fn validate_moment_branch(schedule: &StepSchedule, p: f64) -> Verdict {
    if p < 1.0 {
        return Verdict {
            accepted: false,
            reason: format!("moment order p = {p} < 1"),
        };
    }
    match schedule {
        StepSchedule::Power { a, .. } => {
            let e = a * (1.0 + p);
            Verdict {
                accepted: e > 1.0,
                reason: format!("a(1+p) = {e} {} 1", if e > 1.0 { ">" } else { "<=" }),
            }
        }
        StepSchedule::Constant { h } => Verdict {
            accepted: *h == 0.0,
            reason: "constant terms are not summable".into(),
        },
        StepSchedule::Custom { steps } => {
            let terms: Vec<f64> = steps.iter().map(|h| h.powf(1.0 + p)).collect();
            let (ok, share) = tail_share_small(&terms);
            Verdict {
                accepted: ok,
                reason: format!("second half carries {share:.4} of the partial sum (threshold 0.05)"),
            }
        }
    }
}

/// `Σ exp(−c/h_{k+1}) < ∞` for every `c` in `cs`.
pub fn validate_subgaussian_branch(schedule: &StepSchedule, cs: &[f64]) -> Verdict {
    if cs.is_empty() || cs.iter().any(|c| !(*c > 0.0)) {
        return Verdict {
            accepted: false,
            reason: "c list must be nonempty and positive".into(),
        };
    }
    match schedule {
        StepSchedule::Power { a, .. } => Verdict {
            accepted: *a > 0.0,
            reason: format!("exp(-c k^a) is summable for every c > 0 when a = {a} > 0"),
        },
        StepSchedule::Constant { h } => Verdict {
            accepted: false,
            reason: format!("terms exp(-c/{h}) are constant"),
        },
        StepSchedule::Custom { steps } => {
            for &c in cs {
                let terms: Vec<f64> = steps.iter().map(|h| (-c / h).exp()).collect();
                let (ok, share) = tail_share_small(&terms);
                if !ok {
                    return Verdict {
                        accepted: false,
                        reason: format!("c = {c}: second half carries {share:.4} of the sum"),
                    };
                }
            }
            Verdict {
                accepted: true,
                reason: "tail shares below 0.05".into(),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayTable {
    pub checkpoints: Vec<usize>,
    pub big_t: f64,
    /// `(seed, statistic at each checkpoint)`.
    pub per_seed: Vec<(u64, Vec<f64>)>,
    pub mean: Vec<f64>,
    /// Seeds whose last checkpoint is below their first.
    pub decreasing: usize,
    /// At least 90% of seeds decrease.
    pub verdict: bool,
}

pub fn empirical_benaim_decay(runs: &[RandomRun], big_t: f64, checkpoints: &[usize]) -> Result<DecayTable> {
    if checkpoints.is_empty() {
        return Err(Error::Config("no checkpoints".into()));
    }
    let mut per_seed = Vec::with_capacity(runs.len());
    for run in runs {
        let vals = checkpoints
            .iter()
            .map(|&k| benaim_sup(&run.result, big_t, k))
            .collect::<Result<Vec<f64>>>()?;
        per_seed.push((run.seed, vals));
    }
    let n = per_seed.len().max(1) as f64;
    let mean = (0..checkpoints.len())
        .map(|c| per_seed.iter().map(|(_, v)| v[c]).sum::<f64>() / n)
        .collect();
    let decreasing = per_seed
        .iter()
        .filter(|(_, v)| v.last().unwrap() < v.first().unwrap())
        .count();
    Ok(DecayTable {
        checkpoints: checkpoints.to_vec(),
        big_t,
        verdict: !per_seed.is_empty() && decreasing as f64 >= 0.9 * per_seed.len() as f64,
        per_seed,
        mean,
        decreasing,
    })
}

/// Noise section of an experiment config: `{kind, radius|sigma, p, rho, mode}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: String,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub value: Option<State>,
    /// Jump-noise decay; absent means no jump noise.
    #[serde(default)]
    pub rho: Option<RhoSchedule>,
    #[serde(default)]
    pub mode: Option<JumpNoiseMode>,
}

impl NoiseConfig {
    pub fn flow_model(&self) -> Result<NoiseModel> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("noise kind '{}' needs '{name}'", self.kind)))
        };
        let model = match self.kind.as_str() {
            "none" => NoiseModel::None,
            "bounded" => NoiseModel::Bounded {
                radius: need(self.radius, "radius")?,
                p: self.p.unwrap_or(1.0),
            },
            "gaussian" => NoiseModel::Gaussian {
                sigma: need(self.sigma, "sigma")?,
            },
            "bias" => NoiseModel::Bias {
                value: self
                    .value
                    .clone()
                    .ok_or_else(|| Error::Config("noise kind 'bias' needs 'value'".into()))?,
            },
            other => return Err(Error::Config(format!("unknown noise kind '{other}'"))),
        };
        match &model {
            NoiseModel::Bounded { radius, p } if *radius < 0.0 || *p < 1.0 => {
                Err(Error::Config("bounded noise needs radius ≥ 0 and p ≥ 1".into()))
            }
            NoiseModel::Gaussian { sigma } if *sigma < 0.0 => Err(Error::Config("sigma must be ≥ 0".into())),
            _ => Ok(model),
        }
    }

    pub fn jump_model(&self) -> Result<Option<JumpNoiseModel>> {
        match self.rho {
            None => Ok(None),
            Some(rho) => {
                let mode = self.mode.unwrap_or(JumpNoiseMode::DirectDecay);
                jump_noise_schedule(self.flow_model()?, rho, mode).map(Some)
            }
        }
    }
}
