//! Per-API execution statistics.

use serde::{Deserialize, Serialize};

/// Consecutive failures after which an API is considered stale.
pub const DEFAULT_STALENESS_THRESHOLD: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Success,
    Failure,
}

pub fn is_stale(failure_streak: u32, threshold: u32) -> bool {
    failure_streak >= threshold
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExecutionStats {
    pub success_count: u64,
    pub failure_streak: u32,
    pub stale: bool,
}

impl ExecutionStats {
    pub fn record(&mut self, outcome: Outcome, threshold: u32) {
        match outcome {
            Outcome::Success => {
                self.success_count += 1;
                self.failure_streak = 0;
            }
            Outcome::Failure => self.failure_streak = self.failure_streak.saturating_add(1),
        }
        self.stale = is_stale(self.failure_streak, threshold);
    }

    pub fn is_consistent(&self, threshold: u32) -> bool {
        self.stale == is_stale(self.failure_streak, threshold)
    }
}
