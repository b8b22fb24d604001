//! Step-size schedules `h_k` and their partial sums `τ_k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    /// `h_k = scale · k^{-a}`.
    Power {
        a: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `h_k = h` for all `k` (never admissible; useful as a baseline).
    Constant { h: f64 },
    /// Explicit finite list `h_1, h_2, …`.
    Custom { steps: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

impl StepSchedule {
    pub fn power(a: f64) -> Self {
        StepSchedule::Power { a, scale: 1.0 }
    }

    /// `h_k` for `k ≥ 1`; `None` past the end of a custom list.
    pub fn h(&self, k: usize) -> Option<f64> {
        assert!(k >= 1, "step sizes are indexed from 1");
        match self {
            StepSchedule::Power { a, scale } => Some(scale * (k as f64).powf(-a)),
            StepSchedule::Constant { h } => Some(*h),
            StepSchedule::Custom { steps } => steps.get(k - 1).copied(),
        }
    }

    /// `τ_0, …, τ_n`, summed in index order.
    pub fn partial_sums(&self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        out.push(acc);
        for k in 1..=n {
            match self.h(k) {
                Some(h) => {
                    acc += h;
                    out.push(acc);
                }
                None => break,
            }
        }
        out
    }

    /// Checks `h_k > 0`, `h_k → 0`, `Σ h_k = ∞`.
    ///
    /// Custom lists pass when every step is positive, the mean of the last
    /// quarter is below the mean of the first quarter, and the total exceeds
    /// `divergence_threshold`.
    pub fn validate_with(&self, divergence_threshold: f64) -> Result<()> {
        match self {
            StepSchedule::Power { a, scale } => {
                if !(*scale > 0.0) {
                    return Err(Error::Schedule(format!("scale must be positive, got {scale}")));
                }
                if !(*a > 0.0 && *a <= 1.0) {
                    return Err(Error::Schedule(format!(
                        "power schedule h_k = k^-a is admissible only for 0 < a <= 1 \
                         (steps must tend to zero but not be summable); got a = {a}"
                    )));
                }
                Ok(())
            }
            StepSchedule::Constant { h } => {
                Err(Error::Schedule(format!("constant step h = {h} does not tend to zero")))
            }
            StepSchedule::Custom { steps } => {
                if steps.len() < 4 {
                    return Err(Error::Schedule("custom schedule needs at least 4 steps".into()));
                }
                if let Some(bad) = steps.iter().find(|h| !(**h > 0.0) || !h.is_finite()) {
                    return Err(Error::Schedule(format!("step {bad} is not positive")));
                }
                let q = steps.len() / 4;
                let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
                if mean(&steps[steps.len() - q..]) >= mean(&steps[..q]) {
                    return Err(Error::Schedule("custom steps show no decreasing trend".into()));
                }
                let total: f64 = steps.iter().sum();
                if total <= divergence_threshold {
                    return Err(Error::Schedule(format!(
                        "custom steps sum to {total} <= {divergence_threshold}; looks summable"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(10.0)
    }

    pub fn is_admissible(&self) -> bool {
        self.validate().is_ok()
    }

    pub fn kind(&self) -> &'static str {
        match self {
            StepSchedule::Power { .. } => "power",
            StepSchedule::Constant { .. } => "constant",
            StepSchedule::Custom { .. } => "custom",
        }
    }
}

/// `τ_k = Σ_{i=0}^{k-1} h_{i+1}`.
pub fn tau_of(schedule: &StepSchedule, k: usize) -> f64 {
    *schedule.partial_sums(k).last().unwrap()
}

/// `m(t) = max{k : τ_k ≤ t}`. Bounded by the custom list length.
pub fn m_of(schedule: &StepSchedule, t: f64) -> usize {
    let mut acc = 0.0;
    let mut k = 0;
    while let Some(h) = schedule.h(k + 1) {
        if acc + h > t {
            break;
        }
        acc += h;
        k += 1;
    }
    k
}

/// `m(t)` against a cached `τ` table.
pub fn m_from_taus(taus: &[f64], t: f64) -> usize {
    taus.partition_point(|&tau| tau <= t).saturating_sub(1)
}
