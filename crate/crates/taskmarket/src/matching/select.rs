//! Seller selection heuristics. Each takes the candidate idle sellers for
//! one query (pool order, buyer already excluded) and returns a decision.

use super::{MatchDecision, PendingQuery, SellerView};
use crate::time::{DurationMs, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnTimeMode {
    Fastest,
    Slowest,
}

/// A seller is on time for a query if it could finish a run within the
/// buyer's self-compute baseline, counting any remaining busy time.
pub fn on_time(seller: &SellerView, q: &PendingQuery) -> bool {
    let finish: DurationMs = seller
        .until_idle_ms
        .saturating_add(seller.perf.compute_ms(q.tokens));
    finish <= q.baseline_ms()
}

fn take(q: &PendingQuery, mut picked: Vec<&SellerView>, partial: bool, fallback: bool) -> MatchDecision {
    let need = q.slots_needed();
    picked.truncate(need);
    if picked.len() == need || (partial && !picked.is_empty()) {
        MatchDecision {
            query: q.query,
            sellers: picked.iter().map(|s| s.id).collect(),
            deferred: false,
            fallback,
        }
    } else {
        MatchDecision::deferred(q.query)
    }
}

/// First candidates in pool-join order.
pub fn select_fifo(q: &PendingQuery, candidates: &[SellerView], partial: bool) -> MatchDecision {
    let picked: Vec<&SellerView> = candidates.iter().take(q.slots_needed()).collect();
    take(q, picked, partial, false)
}

fn by_perf_desc(candidates: &[SellerView]) -> Vec<&SellerView> {
    let mut v: Vec<&SellerView> = candidates.iter().collect();
    v.sort_by(|a, b| {
        b.perf
            .partial_cmp(&a.perf)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.id.cmp(&b.id))
    });
    v
}

/// Fastest available sellers, ties to the lowest device id.
pub fn select_greedy_fastest(
    q: &PendingQuery,
    candidates: &[SellerView],
    partial: bool,
) -> MatchDecision {
    take(q, by_perf_desc(candidates), partial, false)
}

/// Fastest or slowest sellers among those fast enough to finish on time.
///
/// The effective test charges a seller the deadline already consumed while
/// the query sat unmatched: `until_idle + compute <= baseline - elapsed`.
/// Every pick therefore also satisfies the plain [`on_time`] predicate.
/// A non-zero `deadline_margin` first tries the deadline tightened by that
/// fraction of the baseline, keeping slack in reserve, and relaxes to the
/// full deadline when too few sellers meet it. When not even the fastest
/// seller in the whole system could meet the remaining deadline, waiting
/// cannot help, so the query is matched with the fastest candidates
/// regardless; short of that hopeless case it defers to a later round.
pub fn select_sp_on_time(
    q: &PendingQuery,
    candidates: &[SellerView],
    mode: OnTimeMode,
    partial: bool,
    now: SimTime,
    max_system_perf: f64,
    deadline_margin: f64,
) -> MatchDecision {
    let elapsed = now.since(q.arrival);
    let baseline = q.baseline_ms();
    let remaining = baseline.saturating_sub(elapsed);
    let need = q.slots_needed();

    let timely_within = |deadline: DurationMs| -> Vec<&SellerView> {
        let mut v: Vec<&SellerView> = candidates
            .iter()
            .filter(|s| {
                s.until_idle_ms
                    .saturating_add(s.perf.compute_ms(q.tokens))
                    <= deadline
            })
            .collect();
        v.sort_by(|a, b| {
            let speed = match mode {
                OnTimeMode::Fastest => b.perf.partial_cmp(&a.perf),
                OnTimeMode::Slowest => a.perf.partial_cmp(&b.perf),
            };
            speed
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.id.cmp(&b.id))
        });
        v
    };

    if deadline_margin > 0.0 {
        let reserve = (baseline as f64 * deadline_margin) as DurationMs;
        let tightened = baseline.saturating_sub(reserve).saturating_sub(elapsed);
        if tightened > 0 {
            let timely = timely_within(tightened);
            if timely.len() >= need || (partial && !timely.is_empty()) {
                return take(q, timely, partial, false);
            }
        }
    }

    let timely = timely_within(remaining);
    if timely.len() >= need || (partial && !timely.is_empty()) {
        return take(q, timely, partial, false);
    }

    if timely.is_empty() && !candidates.is_empty() {
        let required = if remaining == 0 {
            f64::INFINITY
        } else {
            q.tokens as f64 / remaining as f64
        };
        if required > max_system_perf {
            // The remaining deadline is out of reach. Bind sellers that
            // would be on time from a fresh start: the loss stays bounded
            // by the overshoot, and fast sellers are left for queries that
            // can still make it.
            let fresh = timely_within(q.baseline_ms());
            if fresh.len() >= need || (partial && !fresh.is_empty()) {
                return take(q, fresh, partial, false);
            }
            // Hopeless from birth: fastest available regardless.
            let required_fresh = q.tokens as f64 / q.baseline_ms().max(1) as f64;
            if required_fresh > max_system_perf {
                return take(q, by_perf_desc(candidates), partial, true);
            }
        }
    }

    MatchDecision::deferred(q.query)
}
