//! Token estimation and the per-request cost comparison against a stepwise
//! baseline agent.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Baseline tokens per call (candidate-ranking agent, k = 50).
pub const BASELINE_TOKENS_PER_CALL: u64 = 1_565;
/// Baseline calls per task.
pub const BASELINE_CALLS: u64 = 126;

/// `ceil(chars / 4)`
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Baseline {
    pub tokens_per_call: u64,
    pub calls: u64,
}

impl Default for Baseline {
    fn default() -> Self {
        Self { tokens_per_call: BASELINE_TOKENS_PER_CALL, calls: BASELINE_CALLS }
    }
}

impl Baseline {
    pub fn total(&self) -> u64 {
        self.tokens_per_call * self.calls
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("baseline total is zero")]
    ZeroBaseline,
}

/// Exact comparison; `reduction = (baseline - library) / baseline` kept as a
/// rational so the percentage can be reported without float drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CostComparison {
    pub baseline: Baseline,
    pub baseline_total: u64,
    pub library_total: u64,
    pub library_calls: u64,
    pub reduction_num: i128,
    pub reduction_den: i128,
    pub estimated: bool,
}

impl CostComparison {
    pub fn reduction(&self) -> f64 {
        self.reduction_num as f64 / self.reduction_den as f64
    }

    /// Percentage rounded half away from zero to `decimals` places, scaled by
    /// `10^decimals` (87.32% at 1 decimal is `873`).
    pub fn reduction_percent_scaled(&self, decimals: u32) -> i128 {
        let scale = 100 * 10i128.pow(decimals);
        let n = self.reduction_num * scale;
        let d = self.reduction_den;
        let q = n / d;
        let r = n % d;
        if 2 * r.abs() >= d {
            q + n.signum()
        } else {
            q
        }
    }
}

pub fn compare_costs(
    library_total: u64,
    library_calls: u64,
    baseline: Baseline,
    estimated: bool,
) -> Result<CostComparison, CostError> {
    let baseline_total = baseline.total();
    if baseline_total == 0 {
        return Err(CostError::ZeroBaseline);
    }
    Ok(CostComparison {
        baseline,
        baseline_total,
        library_total,
        library_calls,
        reduction_num: baseline_total as i128 - library_total as i128,
        reduction_den: baseline_total as i128,
        estimated,
    })
}
