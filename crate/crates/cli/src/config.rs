use std::path::Path;

use hybridsa::analyze::TailSearch;
use hybridsa::presets::{
    annealing_system, cubic_reset_system, cubic_system, decay_system, dwell_system, rotation_system, two_well_system,
    AnnealingConfig, EllSchedule, ObjectiveSpec, ZSampler,
};
use hybridsa::simulate::{Horizon, JumpPolicy, JumpRule};
use hybridsa::stochastic::NoiseConfig;
use hybridsa::system::RegionSpec;
use hybridsa::{HybridSystem, SimConfig, StepSchedule};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub system: SystemSpec,
    pub x0: Vec<f64>,
    pub schedule: StepSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<JumpPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    pub horizon: HorizonSpec,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub analyses: Vec<Analysis>,
    /// Artifact directory, relative to the output root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

fn default_name() -> String {
    "run".into()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSpec {
    pub max_k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_j: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_length: Option<f64>,
}

impl HorizonSpec {
    pub fn to_horizon(self) -> Horizon {
        Horizon {
            max_k: self.max_k,
            max_j: self.max_j.unwrap_or(usize::MAX),
            max_length: self.max_length.unwrap_or(f64::INFINITY),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Cubic,
    CubicReset {
        #[serde(default = "two")]
        c: f64,
        #[serde(default = "one_u32")]
        n: u32,
        #[serde(default = "one_f64")]
        delta: f64,
    },
    Annealing {
        #[serde(default)]
        objective: ObjectiveName,
        #[serde(default = "one_usize")]
        dim: usize,
        #[serde(default = "two_u32")]
        n: u32,
        #[serde(default = "half")]
        delta: f64,
        #[serde(default = "bc")]
        ell: EllSchedule,
        #[serde(default = "gauss")]
        z: ZSampler,
        #[serde(default = "yes")]
        clip_z: bool,
    },
    Rotation,
    Decay {
        #[serde(default = "one_usize")]
        dim: usize,
    },
    TwoWell,
    Dwell {
        n: u32,
        delta: f64,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveName {
    #[default]
    DoubleWell,
    RastriginLike,
}

fn two() -> f64 {
    2.0
}
fn one_f64() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn one_u32() -> u32 {
    1
}
fn two_u32() -> u32 {
    2
}
fn one_usize() -> usize {
    1
}
fn bc() -> EllSchedule {
    EllSchedule::BorelCantelli
}
fn gauss() -> ZSampler {
    ZSampler::Gaussian { sigma: 1.0 }
}
fn yes() -> bool {
    true
}

/// A preset system with the simulation settings it is meant to run with.
pub struct Built {
    pub system: HybridSystem,
    pub jump_rule: Option<JumpRule>,
    pub flow_clip: bool,
}

impl Built {
    pub fn sim(&self, schedule: StepSchedule, horizon: Horizon, seed: u64) -> SimConfig {
        let mut cfg = SimConfig::new(schedule, horizon).seed(seed).flow_clip(self.flow_clip);
        if let Some(r) = &self.jump_rule {
            cfg = cfg.jump_rule(r.clone());
        }
        cfg
    }
}

impl SystemSpec {
    pub fn build(&self) -> hybridsa::Result<Built> {
        let plain = |system| Built {
            system,
            jump_rule: None,
            flow_clip: false,
        };
        Ok(match self {
            SystemSpec::Cubic => plain(cubic_system()),
            SystemSpec::CubicReset { c, n, delta } => plain(cubic_reset_system(*c, *n, *delta)?),
            SystemSpec::Rotation => plain(rotation_system()),
            SystemSpec::Decay { dim } => plain(decay_system(*dim)),
            SystemSpec::TwoWell => plain(two_well_system()),
            SystemSpec::Dwell { n, delta } => Built {
                system: dwell_system(*n, *delta)?,
                jump_rule: None,
                flow_clip: true,
            },
            SystemSpec::Annealing {
                objective,
                dim,
                n,
                delta,
                ell,
                z,
                clip_z,
            } => {
                let objective = match objective {
                    ObjectiveName::DoubleWell => ObjectiveSpec::double_well(),
                    ObjectiveName::RastriginLike => ObjectiveSpec::rastrigin_like(*dim),
                };
                let ann = annealing_system(AnnealingConfig {
                    objective,
                    n: *n,
                    delta: *delta,
                    ell: *ell,
                    z: *z,
                    clip_z: *clip_z,
                })?;
                Built {
                    system: ann.system,
                    jump_rule: Some(ann.jump_rule),
                    flow_clip: true,
                }
            }
        })
    }

    /// Parses `name` or `name:key=value,...` (or a JSON object).
    pub fn parse_cli(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.starts_with('{') {
            return serde_json::from_str(s).map_err(|e| e.to_string());
        }
        let (name, params) = s.split_once(':').unwrap_or((s, ""));
        let mut obj = serde_json::Map::new();
        obj.insert("preset".into(), name.trim().into());
        for kv in params.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got '{kv}'"))?;
            let v = v.trim();
            let value = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.into()));
            obj.insert(k.trim().to_lowercase(), value);
        }
        serde_json::from_value(obj.into()).map_err(|e| e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    Omega(OmegaSpec),
    Benaim(BenaimSpec),
    Chain(GraphSpec),
    Recurrent(GraphSpec),
    Tail(TailSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmegaSpec {
    pub eps: f64,
    /// Tail thresholds on `t + j`; defaults to fractions of the run length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenaimSpec {
    #[serde(rename = "T")]
    pub big_t: f64,
    /// Step indices to report; all steps go to the .dat file.
    #[serde(default)]
    pub checkpoints: Vec<usize>,
}

/// Settings for a reachability graph on a region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub region: RegionSpec,
    pub tau: f64,
    pub eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub net_radius: Option<f64>,
    #[serde(default = "yes")]
    pub internal: bool,
    /// Hybrid length explored from each node; defaults to `4 tau`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explore_length: Option<f64>,
    /// Scale of the `k^{-1/2}` step schedule used for exploration.
    #[serde(default = "step_scale")]
    pub step: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_simulations: Option<usize>,
    /// Chain endpoints; required by `chain`, rejected by `recurrent`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<Vec<f64>>,
}

fn step_scale() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailSpec {
    #[serde(rename = "T")]
    pub big_t: f64,
    /// `[s, i]` pairs.
    pub starts: Vec<(f64, usize)>,
    #[serde(default = "three")]
    pub refine_side: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<TailSearch>,
}

fn three() -> usize {
    3
}

impl ExperimentConfig {
    /// Parses a config file or the `config` echo inside a manifest.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let value = match value.get("manifest_version") {
            Some(_) => value
                .get("config")
                .cloned()
                .ok_or_else(|| "manifest has no config".to_string())?,
            None => value,
        };
        let cfg: Self = serde_json::from_value(value).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.schedule.validate().map_err(|e| e.to_string())?;
        if self.seeds.is_empty() {
            return Err("at least one seed is required".into());
        }
        if self.horizon.max_k == 0 {
            return Err("horizon.max_k must be positive".into());
        }
        let built = self.system.build().map_err(|e| e.to_string())?;
        if built.system.dim != self.x0.len() {
            return Err(format!(
                "x0 has {} components but the {} system has dimension {}",
                self.x0.len(),
                built.system.name,
                built.system.dim
            ));
        }
        if let Some(n) = &self.noise {
            n.flow_model().map_err(|e| e.to_string())?;
            n.jump_model().map_err(|e| e.to_string())?;
        }
        for a in &self.analyses {
            match a {
                Analysis::Omega(o) if !(o.eps > 0.0) => return Err("omega.eps must be positive".into()),
                Analysis::Benaim(b) if !(b.big_t > 0.0) => return Err("benaim.T must be positive".into()),
                Analysis::Chain(g) => {
                    g.check()?;
                    match (&g.from, &g.to) {
                        (Some(a), Some(b)) if a.len() == built.system.dim && b.len() == built.system.dim => {}
                        (Some(_), Some(_)) => return Err("chain endpoints have the wrong dimension".into()),
                        _ => return Err("chain needs 'from' and 'to'".into()),
                    }
                }
                Analysis::Recurrent(g) => {
                    g.check()?;
                    if g.from.is_some() || g.to.is_some() {
                        return Err("recurrent does not take 'from'/'to'".into());
                    }
                }
                Analysis::Tail(t) if !(t.big_t > 0.0) || t.starts.is_empty() => {
                    return Err("tail needs T > 0 and at least one start".into())
                }
                _ => {}
            }
        }
        Ok(())
    }
}

impl GraphSpec {
    fn check(&self) -> Result<(), String> {
        if !(self.tau > 0.0 && self.eps > 0.0 && self.step > 0.0) {
            return Err("graph analyses need tau, eps and step positive".into());
        }
        self.region.to_region().map(|_| ()).map_err(|e| e.to_string())
    }
}

pub const PRESETS: &[(&str, &str)] = &[
    ("cubic", "z' = -z^3 on R, no resets"),
    (
        "cubic_reset",
        "c=2, n=1, delta=1: state (z, timer); jumps at timer 1 clip z to [-c, c]",
    ),
    (
        "annealing",
        "objective=double_well|rastrigin_like, dim, n, delta, ell, z, clip_z",
    ),
    ("rotation", "x' = (x2, -x1) on R^2"),
    ("decay", "dim=1: x' = -x"),
    ("two_well", "x' = -4x(x^2 - 1)"),
    ("dwell", "n, delta: timer automaton"),
];
