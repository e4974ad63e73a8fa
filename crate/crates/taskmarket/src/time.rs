//! Integer-millisecond simulation clock and compute-time arithmetic.
//!
//! Time is kept in whole milliseconds so that event ordering, wait times and
//! the gain identities are exact integer arithmetic.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Span between two simulation instants, in milliseconds.
pub type DurationMs = u64;

/// One simulated day.
pub const DAY_MS: DurationMs = 86_400_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("domain error: {0}")]
pub struct DomainError(pub String);

/// An instant on the simulation clock.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_ms(ms: u64) -> Self {
        SimTime(ms)
    }

    pub fn as_ms(self) -> u64 {
        self.0
    }

    pub fn plus(self, d: DurationMs) -> SimTime {
        SimTime(self.0.saturating_add(d))
    }

    /// Milliseconds elapsed since `earlier` (0 if `earlier` is not earlier).
    pub fn since(self, earlier: SimTime) -> DurationMs {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

/// Time for a device to run a task once: `ceil(tokens / perf)` milliseconds,
/// with `perf` in tokens per millisecond.
pub fn compute_time(perf_tokens_per_ms: f64, tokens: u64) -> Result<DurationMs, DomainError> {
    if !(perf_tokens_per_ms.is_finite() && perf_tokens_per_ms > 0.0) {
        return Err(DomainError(format!(
            "perf must be positive and finite, got {perf_tokens_per_ms}"
        )));
    }
    if tokens == 0 {
        return Err(DomainError("task size must be positive".into()));
    }
    Ok((tokens as f64 / perf_tokens_per_ms).ceil() as DurationMs)
}
