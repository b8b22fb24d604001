//! Simulation and limit-set analysis for hybrid inclusions.
//!
//! A hybrid inclusion flows by `x' ∈ F(x)` while `x ∈ C` and jumps by
//! `x+ ∈ G(x)` while `x ∈ D`. This crate discretizes such systems with
//! vanishing step sizes (deterministic and noisy), keeps the bookkeeping
//! needed to certify a run as an asymptotic simulation, and estimates the
//! limiting behavior of the resulting sample paths: ω-limit clouds,
//! (τ,ε)-chains and chain-recurrent classes.
//!
//! Module map:
//! - [`hybrid_time`]: hybrid time domains, arcs, tails, concatenation, graph closeness.
//! - [`system`]: flow/jump data, inflation, restriction, solution checks.
//! - [`schedule`] and [`simulate`]: step sizes and the Euler-type engine.
//! - [`stochastic`]: noise models, validators, Monte Carlo helpers.
//! - [`analyze`]: ω-limits, chains, reach graphs, diagnostics.
//! - [`presets`]: concrete systems with known ground truth.

pub mod analyze;
pub mod error;
pub mod hybrid_time;
pub mod presets;
pub mod schedule;
pub mod simulate;
pub mod stochastic;
pub mod system;
pub mod vecops;

pub use error::{Error, Result};
pub use hybrid_time::{HybridArc, HybridGraph, HybridTime, HybridTimeDomain};
pub use schedule::StepSchedule;
pub use simulate::{euler_simulate, SimConfig, SimulationResult};
pub use system::{HybridSystem, SetRegion, SetValuedMap, ValueSet};

/// A point in state space.
pub type State = Vec<f64>;
