//! Limit-set analysis of simulated curves: ω-limit clouds, `(τ, ε)`-chains,
//! reach graphs with their recurrent classes, and two diagnostics.

pub mod chain;
pub mod diagnostics;
pub mod omega;
pub mod reach;

pub use chain::{load_chain, save_chain, verify_chain, Chain, ChainFailure, ChainLink, ChainVerdict, FailureKind};
pub use diagnostics::{
    tail_closeness_diagnostic, weak_invariance_probe, CurveFamily, InvarianceReport, SystemFamily, TailEntry,
    TailSearch,
};
pub use omega::{default_thresholds, hausdorff, omega_estimate, OmegaEstimate};
pub use reach::{
    build_reach_graph, chain_recurrent_estimate, find_chain, recurrent_nodes, refinement_sweep, Budget,
    ChainSearchFailure, ReachConfig, ReachGraph, RecurrentEstimate, SweepReport,
};
