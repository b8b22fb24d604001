use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid_time::{generalized_concatenate, GeneralizedConcatenation, HybridArc, HybridTime};
use crate::system::{verify_solution, HybridSystem, RegionSpec, SetRegion};
use crate::vecops;
use crate::State;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainLink {
    pub arc: HybridArc,
    /// `(t_k, j_k)`: the link is used up to here.
    pub end: HybridTime,
}

/// A `(τ, ε)`-chain `x_0, …, x_{k*}` with one solution segment per hop.
#[derive(Clone, Debug)]
pub struct Chain {
    pub links: Vec<ChainLink>,
    pub waypoints: Vec<State>,
    pub tau: f64,
    pub eps: f64,
    pub internal_region: Option<SetRegion>,
    /// Only `x_0 ∈ φ_0(0,0) + εB` is required for the first link.
    pub generalized: bool,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Generalized concatenation of the links' restricted arcs.
    pub fn concatenation(&self) -> Result<GeneralizedConcatenation> {
        let pairs: Vec<(HybridArc, HybridTime)> = self.links.iter().map(|l| (l.arc.clone(), l.end)).collect();
        generalized_concatenate(&pairs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Structure,
    StartMismatch,
    EndNotInDomain,
    TooShort,
    NotClose,
    NotSolution,
    LeavesRegion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainFailure {
    pub link: usize,
    pub kind: FailureKind,
    /// Hybrid time within the link where the failure is located.
    pub at: Option<HybridTime>,
    /// Size of the violation (a distance or a length).
    pub value: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainVerdict {
    pub valid: bool,
    pub internal: bool,
    pub failures: Vec<ChainFailure>,
}

/// Checks every link of a chain against `system`.
///
/// In internal mode each link must also stay in the chain's region up to its
/// end time; a chain without a region fails that check.
pub fn verify_chain(chain: &Chain, system: &HybridSystem, internal: bool, sol_tol: f64) -> ChainVerdict {
    let mut failures = Vec::new();
    let mut fail = |link, kind, at, value, detail: String| {
        failures.push(ChainFailure {
            link,
            kind,
            at,
            value,
            detail,
        })
    };
    if chain.waypoints.len() != chain.links.len() + 1 || chain.links.is_empty() {
        fail(
            0,
            FailureKind::Structure,
            None,
            chain.links.len() as f64,
            format!(
                "{} links need {} waypoints, got {}",
                chain.links.len(),
                chain.links.len() + 1,
                chain.waypoints.len()
            ),
        );
        return ChainVerdict {
            valid: false,
            internal,
            failures,
        };
    }
    if internal && chain.internal_region.is_none() {
        fail(
            0,
            FailureKind::Structure,
            None,
            0.0,
            "internal mode without a region".into(),
        );
    }
    for (k, link) in chain.links.iter().enumerate() {
        let x_k = &chain.waypoints[k];
        let start = link.arc.initial_value();
        let d0 = vecops::dist(start, x_k);
        let allowed = if k == 0 && chain.generalized {
            chain.eps
        } else {
            sol_tol
        };
        if d0 > allowed {
            fail(
                k,
                FailureKind::StartMismatch,
                Some(HybridTime::ZERO),
                d0,
                format!("link starts {d0:e} from waypoint {k} (allowed {allowed:e})"),
            );
        }
        let piece = match link.arc.restrict_upto(link.end) {
            Ok(p) => p,
            Err(_) => {
                fail(
                    k,
                    FailureKind::EndNotInDomain,
                    Some(link.end),
                    link.end.length(),
                    format!("end ({}, {}) is outside the link's domain", link.end.t, link.end.j),
                );
                continue;
            }
        };
        if link.end.length() < chain.tau {
            fail(
                k,
                FailureKind::TooShort,
                Some(link.end),
                link.end.length(),
                format!("end length {} < tau = {}", link.end.length(), chain.tau),
            );
        }
        let end_val = piece.final_value();
        let d1 = vecops::dist(end_val, &chain.waypoints[k + 1]);
        if d1 > chain.eps {
            fail(
                k,
                FailureKind::NotClose,
                Some(link.end),
                d1,
                format!("waypoint {} is {d1:e} from the link end (eps {})", k + 1, chain.eps),
            );
        }
        match verify_solution(&piece, system, sol_tol) {
            Ok(rep) if rep.pass => {}
            Ok(rep) => {
                let gap = rep
                    .flows
                    .iter()
                    .map(|f| f.derivative_gap.max(f.flow_set_gap))
                    .chain(rep.jumps.iter().map(|j| j.jump_set_gap.max(j.jump_map_gap)))
                    .fold(0.0, f64::max);
                fail(
                    k,
                    FailureKind::NotSolution,
                    rep.witness(),
                    gap,
                    format!("solution check failed (gap {gap:e}, tol {sol_tol:e})"),
                );
            }
            Err(e) => fail(k, FailureKind::NotSolution, None, f64::INFINITY, e.to_string()),
        }
        if internal {
            if let Some(region) = &chain.internal_region {
                if let Some((t, j, x)) = piece.samples().find(|(_, _, x)| !region.contains(x)) {
                    let d = region.distance(x);
                    fail(
                        k,
                        FailureKind::LeavesRegion,
                        Some(HybridTime::new(t, j)),
                        d,
                        format!("link leaves the region at (t={t}, j={j})"),
                    );
                }
            }
        }
    }
    ChainVerdict {
        valid: failures.is_empty(),
        internal,
        failures,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkRef {
    /// Path of the link's arc CSV, relative to the chain file.
    pub arc_ref: String,
    /// `[t, j]`.
    pub end: (f64, usize),
}

/// On-disk form of a chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    pub waypoints: Vec<State>,
    pub links: Vec<LinkRef>,
    pub tau: f64,
    pub eps: f64,
    pub internal: bool,
    #[serde(default)]
    pub generalized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionSpec>,
}

/// Writes `<stem>.json` plus one `<stem>_link<k>.csv` per link into `dir`.
pub fn save_chain(chain: &Chain, dir: &Path, stem: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut links = Vec::new();
    for (k, link) in chain.links.iter().enumerate() {
        let name = format!("{stem}_link{k}.csv");
        fs::write(dir.join(&name), link.arc.to_csv())?;
        links.push(LinkRef {
            arc_ref: name,
            end: (link.end.t, link.end.j),
        });
    }
    let region = match &chain.internal_region {
        Some(r) => Some(
            RegionSpec::from_region(r)
                .ok_or_else(|| Error::Config("internal region has no serializable form".into()))?,
        ),
        None => None,
    };
    let file = ChainFile {
        waypoints: chain.waypoints.clone(),
        links,
        tau: chain.tau,
        eps: chain.eps,
        internal: chain.internal_region.is_some(),
        generalized: chain.generalized,
        region,
    };
    let path = dir.join(format!("{stem}.json"));
    fs::write(&path, serde_json::to_string_pretty(&file)?)?;
    Ok(path)
}

/// Reads a chain file; link CSVs are resolved next to it.
pub fn load_chain(path: &Path) -> Result<(Chain, bool)> {
    let file: ChainFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut links = Vec::new();
    for l in &file.links {
        let text = fs::read_to_string(base.join(&l.arc_ref))?;
        links.push(ChainLink {
            arc: HybridArc::from_csv(&text)?,
            end: HybridTime::new(l.end.0, l.end.1),
        });
    }
    let region = file.region.as_ref().map(RegionSpec::to_region).transpose()?;
    Ok((
        Chain {
            links,
            waypoints: file.waypoints,
            tau: file.tau,
            eps: file.eps,
            internal_region: region,
            generalized: file.generalized,
        },
        file.internal,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::rotation_system;
    use std::f64::consts::PI;

    fn circle_arc(t_end: f64) -> HybridArc {
        HybridArc::from_fn(2, t_end, 20_000, |t| vec![t.sin(), t.cos()])
    }

    fn periodic() -> Chain {
        Chain {
            links: vec![ChainLink {
                arc: circle_arc(2.0 * PI),
                end: HybridTime::new(2.0 * PI, 0),
            }],
            waypoints: vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            tau: 1.0,
            eps: 1e-6,
            internal_region: None,
            generalized: false,
        }
    }

    #[test]
    fn periodic_orbit_is_a_chain() {
        let v = verify_chain(&periodic(), &rotation_system(), false, 1e-3);
        assert!(v.valid, "{v:?}");
    }

    #[test]
    fn displaced_waypoint_is_located() {
        let mut c = periodic();
        c.eps = 0.1;
        c.waypoints[1] = vec![0.0, 1.2];
        let v = verify_chain(&c, &rotation_system(), false, 1e-3);
        assert!(!v.valid);
        assert_eq!(v.failures[0].kind, FailureKind::NotClose);
        assert_eq!(v.failures[0].at, Some(HybridTime::new(2.0 * PI, 0)));
        assert!((v.failures[0].value - 0.2).abs() < 1e-9);
    }

    #[test]
    fn grazing_link_fails_only_internally() {
        let mut c = periodic();
        c.internal_region = Some(SetRegion::Box {
            lo: vec![-0.99, -2.0],
            hi: vec![2.0, 2.0],
        });
        let sys = rotation_system();
        assert!(verify_chain(&c, &sys, false, 1e-3).valid);
        let v = verify_chain(&c, &sys, true, 1e-3);
        assert!(!v.valid);
        assert_eq!(v.failures[0].kind, FailureKind::LeavesRegion);
    }

    #[test]
    fn short_link_and_structure() {
        let mut c = periodic();
        c.tau = 7.0;
        let v = verify_chain(&c, &rotation_system(), false, 1e-3);
        assert_eq!(v.failures[0].kind, FailureKind::TooShort);
        c.waypoints.pop();
        let v = verify_chain(&c, &rotation_system(), false, 1e-3);
        assert_eq!(v.failures[0].kind, FailureKind::Structure);
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("hybridsa-chain-{}", std::process::id()));
        let mut c = periodic();
        c.internal_region = Some(SetRegion::Annulus {
            center: vec![0.0, 0.0],
            r_in: 0.5,
            r_out: 1.5,
        });
        let path = save_chain(&c, &dir, "c").unwrap();
        let (back, internal) = load_chain(&path).unwrap();
        assert!(internal);
        assert_eq!(back.links, c.links);
        assert!(verify_chain(&back, &rotation_system(), true, 1e-3).valid);
        fs::remove_file(dir.join("c_link0.csv")).unwrap();
        assert!(matches!(load_chain(&path), Err(Error::Io(_))));
        fs::remove_dir_all(&dir).ok();
    }
}
