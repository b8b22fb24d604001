//! Browser bindings. Each export takes plain numbers and returns a JSON string.

use hybridsa::analyze::{tail_closeness_diagnostic, TailSearch};
use hybridsa::presets::{
    annealing_system, cubic_reset_system, cubic_system, sine_band_curve, AnnealingConfig, ObjectiveSpec, SineFamily,
};
use hybridsa::simulate::Horizon;
use hybridsa::{euler_simulate, Error, HybridTime, SimConfig, SimulationResult, StepSchedule};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Trace {
    /// `[tau_k, j, x_0]` rows.
    points: Vec<(f64, usize, f64)>,
    jumps: usize,
    max_abs: f64,
    escaped: bool,
    error: Option<String>,
}

fn trace(out: hybridsa::Result<SimulationResult>) -> Trace {
    let (res, error) = match out {
        Ok(r) => (r, None),
        Err(Error::Escape { partial, .. }) => (*partial, Some("state escaped".to_string())),
        Err(e) => {
            return Trace {
                points: vec![],
                jumps: 0,
                max_abs: 0.0,
                escaped: false,
                error: Some(e.to_string()),
            }
        }
    };
    let points: Vec<(f64, usize, f64)> = res
        .sequence
        .domain
        .steps()
        .iter()
        .zip(&res.sequence.values)
        .filter(|(_, x)| x[0].is_finite())
        .map(|(&(k, j), x)| (res.tau[k], j, x[0]))
        .collect();
    Trace {
        max_abs: points.iter().map(|p| p.2.abs()).fold(0.0, f64::max),
        jumps: res.jumps(),
        escaped: error.is_some(),
        points,
        error,
    }
}

/// Cubic flow under `h_k = k^{-a}`; `c <= 0` disables the reset.
pub fn cubic_explorer(z0: f64, a: f64, c: f64, steps: usize) -> String {
    let cfg = SimConfig::new(StepSchedule::power(a), Horizon::steps(steps.clamp(1, 200_000)));
    let out = match cfg.schedule.validate() {
        Err(e) => Err(e),
        Ok(()) if c > 0.0 => cubic_reset_system(c, 1, 1.0).and_then(|s| euler_simulate(&s, &[z0, 0.0], &cfg)),
        Ok(()) => euler_simulate(&cubic_system(), &[z0], &cfg),
    };
    serde_json::to_string(&trace(out)).unwrap()
}

#[derive(Serialize)]
struct AnnealingTrace {
    trace: Trace,
    final_y: Option<f64>,
    final_theta: Option<f64>,
}

/// Annealing on the double well `(y² − 1)²` from `y0`.
pub fn annealing_run(y0: f64, seed: u64, steps: usize) -> String {
    let obj = ObjectiveSpec::double_well();
    let body = match annealing_system(AnnealingConfig::new(obj.clone())) {
        Ok(ann) => {
            let cfg = ann.sim_config(
                StepSchedule::Power { a: 0.75, scale: 0.1 },
                Horizon::steps(steps.clamp(1, 200_000)),
                seed,
            );
            let t = trace(euler_simulate(&ann.system, &[y0.clamp(-2.0, 2.0), 0.0], &cfg));
            let y = t.points.last().map(|p| p.2);
            AnnealingTrace {
                final_theta: y.map(|y| obj.theta(&[y])),
                final_y: y,
                trace: t,
            }
        }
        Err(e) => AnnealingTrace {
            trace: trace(Err(e)),
            final_y: None,
            final_theta: None,
        },
    };
    serde_json::to_string(&body).unwrap()
}

#[derive(Serialize)]
struct TailRow {
    s: f64,
    eps: Option<f64>,
    reference: f64,
    r: Option<f64>,
}

#[derive(Serialize)]
struct TailTable {
    /// Sampled band points `[t, x]`.
    band: Vec<(f64, f64)>,
    rows: Vec<TailRow>,
}

/// Tail closeness of the sine band at starts `s ∈ starts`, window `T`.
pub fn sine_band_tail(starts: &[f64], big_t: f64) -> String {
    let horizon = starts.iter().cloned().fold(0.0, f64::max) + big_t + 1.5;
    let band = match sine_band_curve(9, horizon) {
        Ok(b) => b,
        Err(e) => return serde_json::json!({ "error": e.to_string() }).to_string(),
    };
    let hs: Vec<HybridTime> = starts.iter().map(|&s| HybridTime::new(s, 0)).collect();
    let table = tail_closeness_diagnostic(
        &band,
        &SineFamily { dt: 1e-2 },
        big_t,
        &hs,
        TailSearch {
            rounds: 8,
            width: 0.05,
            budget: 500,
        },
    );
    let out = TailTable {
        band: band.points().iter().map(|p| (p.t, p.x[0])).collect(),
        rows: table
            .into_iter()
            .map(|e| TailRow {
                s: e.start.t,
                eps: e.eps,
                reference: (-e.start.t).exp(),
                r: e.param.map(|p| p[0]),
            })
            .collect(),
    };
    serde_json::to_string(&out).unwrap()
}

#[wasm_bindgen(js_name = cubicExplorer)]
pub fn cubic_explorer_js(z0: f64, a: f64, c: f64, steps: usize) -> String {
    cubic_explorer(z0, a, c, steps)
}

#[wasm_bindgen(js_name = annealingRun)]
pub fn annealing_run_js(y0: f64, seed: u32, steps: usize) -> String {
    annealing_run(y0, seed as u64, steps)
}

#[wasm_bindgen(js_name = sineBandTail)]
pub fn sine_band_tail_js(starts: Vec<f64>, big_t: f64) -> String {
    sine_band_tail(&starts, big_t)
}
