use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use hybridsa::analyze::{
    build_reach_graph, chain_recurrent_estimate, find_chain, omega_estimate, save_chain, tail_closeness_diagnostic,
    verify_chain, Budget, ReachConfig, SystemFamily,
};
use hybridsa::simulate::{benaim_series, compress, Horizon};
use hybridsa::stochastic::noisy_simulate;
use hybridsa::{euler_simulate, Error, HybridTime, SimulationResult, StepSchedule};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{Analysis, BenaimSpec, Built, ExperimentConfig, GraphSpec, OmegaSpec, TailSpec, SCHEMA_VERSION};

pub struct RunOptions {
    pub out_root: PathBuf,
    pub jobs: Option<usize>,
}

struct SeedRun {
    seed: u64,
    result: Option<SimulationResult>,
    error: Option<String>,
}

/// Exit status of a finished run: 0 on success, 2 if any runtime error occurred.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> anyhow::Result<(PathBuf, i32)> {
    let dir = opts
        .out_root
        .join(cfg.output.clone().unwrap_or_else(|| cfg.name.clone()));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let built = cfg.system.build()?;
    let horizon = cfg.horizon.to_horizon();
    let noise = match &cfg.noise {
        Some(n) => Some((n.flow_model()?, n.jump_model()?)),
        None => None,
    };

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = pool.build()?;

    let runs: Vec<SeedRun> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let mut sim = built.sim(cfg.schedule.clone(), horizon, seed);
                if let Some(p) = cfg.policy {
                    sim = sim.policy(p);
                }
                let out = match &noise {
                    Some((flow, jump)) => {
                        noisy_simulate(&built.system, &cfg.x0, &sim, flow, jump.as_ref()).map(|r| r.result)
                    }
                    None => euler_simulate(&built.system, &cfg.x0, &sim),
                };
                match out {
                    Ok(r) => SeedRun {
                        seed,
                        result: Some(r),
                        error: None,
                    },
                    Err(Error::Escape { k, j, partial }) => SeedRun {
                        seed,
                        result: Some(*partial),
                        error: Some(format!("escape at (k={k}, j={j})")),
                    },
                    Err(e) => SeedRun {
                        seed,
                        result: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });

    let mut artifacts = Vec::new();
    let mut failed = false;
    let mut write = |name: String, text: String| -> anyhow::Result<()> {
        fs::write(dir.join(&name), text).with_context(|| format!("writing {name}"))?;
        artifacts.push(name);
        Ok(())
    };

    let mut run_entries = Vec::new();
    for r in &runs {
        if let Some(res) = &r.result {
            write(format!("seed_{}.csv", r.seed), res.to_csv())?;
            write(format!("seed_{}.dat", r.seed), res.to_dat())?;
        }
        if let Some(e) = &r.error {
            eprintln!("seed {}: {e}", r.seed);
            failed = true;
        }
        run_entries.push(json!({
            "seed": r.seed,
            "status": if r.error.is_none() { "ok" } else { "error" },
            "error": r.error,
            "flags": r.result.as_ref().map(|x| &x.flags),
            "events": r.result.as_ref().map(|x| &x.events),
            "flow_steps": r.result.as_ref().map(|x| x.flow_steps()),
            "jumps": r.result.as_ref().map(|x| x.jumps()),
            "final_state": r.result.as_ref().map(|x| x.final_state()),
        }));
    }
    write(
        "runs.json".into(),
        pretty(&report("runs", Value::Null, json!(run_entries))),
    )?;

    // analyses start once every seed has finished
    pool.install(|| -> anyhow::Result<()> {
        for a in &cfg.analyses {
            match a {
                Analysis::Omega(spec) => {
                    let (body, dats, err) = omega(spec, &runs);
                    failed |= err;
                    for (n, t) in dats {
                        write(n, t)?;
                    }
                    write("report_omega.json".into(), pretty(&report("omega", json!(spec), body)))?;
                }
                Analysis::Benaim(spec) => {
                    let (body, dats, err) = benaim(spec, &runs);
                    failed |= err;
                    for (n, t) in dats {
                        write(n, t)?;
                    }
                    write(
                        "report_benaim.json".into(),
                        pretty(&report("benaim", json!(spec), body)),
                    )?;
                }
                Analysis::Tail(spec) => {
                    let (body, err) = tail(spec, &runs, &built, cfg, horizon);
                    failed |= err;
                    write("report_tail.json".into(), pretty(&report("tail", json!(spec), body)))?;
                }
                Analysis::Chain(spec) => {
                    let (body, err) = chain(spec, &built, &dir)?;
                    failed |= err;
                    write("report_chain.json".into(), pretty(&report("chain", json!(spec), body)))?;
                }
                Analysis::Recurrent(spec) => {
                    let (body, dat, err) = recurrent(spec, &built);
                    failed |= err;
                    if let Some(t) = dat {
                        write("recurrent.dat".into(), t)?;
                    }
                    write(
                        "report_recurrent.json".into(),
                        pretty(&report("recurrent", json!(spec), body)),
                    )?;
                }
            }
        }
        Ok(())
    })?;

    // chain files are written by the core crate; list them afterwards
    if dir.join("chain").exists() {
        let mut names: Vec<String> = fs::read_dir(dir.join("chain"))?
            .filter_map(|e| e.ok())
            .map(|e| format!("chain/{}", e.file_name().to_string_lossy()))
            .collect();
        names.sort();
        artifacts.extend(names);
    }

    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = json!({
        "manifest_version": 1,
        "schema_version": SCHEMA_VERSION,
        "tool": "hybridsa",
        "version": env!("CARGO_PKG_VERSION"),
        "timestamp_unix": timestamp,
        "seeds": cfg.seeds,
        "system": built.system.name,
        "config": cfg,
        "status": if failed { "runtime_error" } else { "ok" },
        "artifacts": artifacts,
    });
    fs::write(dir.join("manifest.json"), pretty(&manifest))?;
    Ok((dir, if failed { 2 } else { 0 }))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

fn report(kind: &str, spec: Value, body: Value) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "analysis": kind,
        "spec": spec,
        "results": body,
    })
}

fn omega(spec: &OmegaSpec, runs: &[SeedRun]) -> (Value, Vec<(String, String)>, bool) {
    let mut out = Vec::new();
    let mut dats = Vec::new();
    let mut failed = false;
    for r in runs {
        let Some(res) = &r.result else { continue };
        let thresholds = spec.thresholds.clone().unwrap_or_default();
        match omega_estimate(&compress(res), &thresholds, spec.eps) {
            Ok(est) => {
                let dim = est.points.first().map_or(0, |p| p.len());
                let sups: Vec<f64> = (0..dim).map(|i| est.component_sup(i)).collect();
                let mut dat = String::from("# x...\n");
                for p in &est.points {
                    let row: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
                    writeln!(dat, "{}", row.join(" ")).unwrap();
                }
                dats.push((format!("omega_seed_{}.dat", r.seed), dat));
                out.push(json!({
                    "seed": r.seed,
                    "converged": est.converged,
                    "tail_threshold": est.tail_threshold,
                    "hausdorff_trace": est.hausdorff_trace,
                    "point_count": est.points.len(),
                    "component_sup": sups,
                    "z_distance_to_zero": sups.first(),
                    "distance_to_origin": est.distance_to(&vec![0.0; dim]),
                    "points": est.points,
                }));
            }
            Err(e) => {
                failed = true;
                out.push(json!({ "seed": r.seed, "error": e.to_string() }));
            }
        }
    }
    (json!(out), dats, failed)
}

fn benaim(spec: &BenaimSpec, runs: &[SeedRun]) -> (Value, Vec<(String, String)>, bool) {
    let mut out = Vec::new();
    let mut dats = Vec::new();
    for r in runs {
        let Some(res) = &r.result else { continue };
        let series = benaim_series(res, spec.big_t);
        let mut dat = String::from("# k sup\n");
        for (k, v) in &series {
            writeln!(dat, "{k} {v:?}").unwrap();
        }
        dats.push((format!("benaim_seed_{}.dat", r.seed), dat));
        let at: Vec<Value> = spec
            .checkpoints
            .iter()
            .map(|&k| {
                let v = series.iter().find(|(i, _)| *i == k).map(|(_, v)| *v);
                json!({ "k": k, "sup": v })
            })
            .collect();
        out.push(json!({
            "seed": r.seed,
            "available_k": series.last().map(|(k, _)| k),
            "checkpoints": at,
        }));
    }
    (json!(out), dats, false)
}

fn tail(spec: &TailSpec, runs: &[SeedRun], built: &Built, cfg: &ExperimentConfig, horizon: Horizon) -> (Value, bool) {
    let starts: Vec<HybridTime> = spec.starts.iter().map(|&(t, j)| HybridTime::new(t, j)).collect();
    let mut out = Vec::new();
    for r in runs {
        let Some(res) = &r.result else { continue };
        // the reference family is deterministic: no noise, same schedule
        let mut sim = built.sim(
            cfg.schedule.clone(),
            Horizon {
                max_k: usize::MAX,
                ..horizon
            },
            r.seed,
        );
        if let Some(p) = cfg.policy {
            sim = sim.policy(p);
        }
        let fam = SystemFamily {
            system: &built.system,
            sim,
            refine_side: spec.refine_side,
        };
        let table = tail_closeness_diagnostic(
            &compress(res),
            &fam,
            spec.big_t,
            &starts,
            spec.search.unwrap_or_default(),
        );
        out.push(json!({ "seed": r.seed, "entries": table }));
    }
    (json!(out), false)
}

fn reach_config(spec: &GraphSpec, built: &Built) -> ReachConfig {
    let sim = built.sim(
        StepSchedule::Power {
            a: 0.5,
            scale: spec.step,
        },
        Horizon::steps(10_000_000),
        0,
    );
    ReachConfig::new(sim, spec.explore_length.unwrap_or(4.0 * spec.tau))
}

fn budget(spec: &GraphSpec) -> Budget {
    spec.max_simulations
        .map(|m| Budget { max_simulations: m })
        .unwrap_or_default()
}

fn chain(spec: &GraphSpec, built: &Built, dir: &Path) -> anyhow::Result<(Value, bool)> {
    let region = spec.region.to_region()?;
    let r = spec.net_radius.unwrap_or(spec.eps / 2.0);
    let graph = match build_reach_graph(
        &built.system,
        &region,
        r,
        spec.tau,
        spec.eps,
        spec.internal,
        budget(spec),
        &reach_config(spec, built),
    ) {
        Ok(g) => g,
        Err(e) => return Ok((json!({ "error": e.to_string() }), true)),
    };
    let (from, to) = (
        spec.from.clone().unwrap_or_default(),
        spec.to.clone().unwrap_or_default(),
    );
    let summary = json!({
        "nodes": graph.nodes.len(),
        "edges": graph.edges.len(),
        "partial": graph.partial,
    });
    Ok(match find_chain(&graph, &from, &to) {
        Ok(c) => {
            let path = save_chain(&c, &dir.join("chain"), "chain")?;
            let verdict = verify_chain(&c, &built.system, spec.internal, 1e-9);
            (
                json!({
                    "found": true,
                    "graph": summary,
                    "chain_file": path.strip_prefix(dir).unwrap_or(&path),
                    "links": c.len(),
                    "generalized": c.generalized,
                    "waypoints": c.waypoints,
                    "verdict": verdict,
                }),
                false,
            )
        }
        Err(f) => (json!({ "found": false, "graph": summary, "failure": f }), false),
    })
}

fn recurrent(spec: &GraphSpec, built: &Built) -> (Value, Option<String>, bool) {
    let region = match spec.region.to_region() {
        Ok(r) => r,
        Err(e) => return (json!({ "error": e.to_string() }), None, true),
    };
    let r = spec.net_radius.unwrap_or(spec.eps / 2.0);
    let graph = match build_reach_graph(
        &built.system,
        &region,
        r,
        spec.tau,
        spec.eps,
        spec.internal,
        budget(spec),
        &reach_config(spec, built),
    ) {
        Ok(g) => g,
        Err(e) => return (json!({ "error": e.to_string() }), None, true),
    };
    let est = chain_recurrent_estimate(&graph);
    let mut dat = String::from("# x...\n");
    for &n in &est.nodes {
        let row: Vec<String> = graph.nodes[n].iter().map(|v| format!("{v:?}")).collect();
        writeln!(dat, "{}", row.join(" ")).unwrap();
    }
    let points: Vec<&Vec<f64>> = est.nodes.iter().map(|&n| &graph.nodes[n]).collect();
    (
        json!({
            "graph": { "nodes": graph.nodes.len(), "edges": graph.edges.len(), "partial": graph.partial },
            "recurrent_nodes": est.nodes,
            "classes": est.classes,
            "points": points,
        }),
        Some(dat),
        false,
    )
}
