//! Heuristic matcher framework: trigger discipline x query reordering x
//! seller selection x partial matching x probabilistic skipping.
//!
//! A matching round works over an immutable view of the idle seller pool and
//! the pending queries, so decisions are a deterministic function of
//! (snapshot, policy, rng substream state).

mod reorder;
mod select;

pub use reorder::{order_fifo, order_hardest_to_fulfill, order_min_variance, priority_cmp};
pub use select::{on_time, select_fifo, select_greedy_fastest, select_sp_on_time, OnTimeMode};

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceId, Perf};
use crate::query::QueryId;
use crate::time::{DurationMs, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// Run a round on every query arrival and computation completion.
    Instant,
    /// Run rounds at a fixed period, ignoring events in between.
    Scheduled { period_ms: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reorder {
    /// Arrival order.
    Fifo,
    /// Descending priority; priority starts at the token count and doubles
    /// after every round a query goes unmatched.
    MinVariance,
    /// Ascending self-compute baseline: tightest deadline first.
    HardestToFulfill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Select {
    /// First sellers in pool-join order.
    Fifo,
    /// Fastest available sellers.
    GreedyFastest,
    /// Fastest sellers among those fast enough to finish on time.
    SpFastestOnTime,
    /// Slowest sellers among those fast enough to finish on time.
    SpSlowestOnTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatcherPolicy {
    pub trigger: Trigger,
    pub reorder: Reorder,
    /// Process the reordered queue back to front (loosest deadline first for
    /// hardest-to-fulfill).
    pub reversed: bool,
    pub select: Select,
    /// Allow binding one seller and starting its run before the second
    /// seller is found.
    pub partial_matching: bool,
    /// Chance a query sits out a round entirely.
    pub skip_probability: f64,
    /// Fraction of the self-compute baseline the SP selectors try to keep
    /// in reserve. Sellers meeting the tightened deadline are preferred;
    /// when none can, the full deadline applies as usual.
    pub deadline_margin: f64,
}

impl MatcherPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.skip_probability) {
            return Err(format!(
                "skip_probability must be in [0,1], got {}",
                self.skip_probability
            ));
        }
        if !(0.0..=1.0).contains(&self.deadline_margin) {
            return Err(format!(
                "deadline_margin must be in [0,1], got {}",
                self.deadline_margin
            ));
        }
        if let Trigger::Scheduled { period_ms } = self.trigger {
            if period_ms == 0 {
                return Err("scheduled period must be positive".into());
            }
        }
        Ok(())
    }
}

/// A pending query as seen by the matcher.
#[derive(Debug, Clone)]
pub struct PendingQuery {
    pub query: QueryId,
    pub buyer: DeviceId,
    pub buyer_perf: Perf,
    pub tokens: u64,
    pub arrival: SimTime,
    /// Arrival tie-break; equals issuance order.
    pub seq: u64,
    /// Sellers already bound (non-empty only under partial matching).
    pub bound: Vec<DeviceId>,
    /// Rounds this query has been processed without receiving any seller.
    pub rounds_waited: u32,
    /// Drawn once at arrival; breaks priority ties.
    pub random_priority: f64,
}

impl PendingQuery {
    pub fn slots_needed(&self) -> usize {
        2 - self.bound.len()
    }

    /// Buyer's sequential double-run time: the deadline every gain is
    /// measured against.
    pub fn baseline_ms(&self) -> DurationMs {
        self.buyer_perf.compute_ms(self.tokens).saturating_mul(2)
    }

    /// Min-variance priority, `tokens * 2^rounds_waited`. Saturates to
    /// infinity for display; ordering uses the exact comparator instead.
    pub fn priority(&self) -> f64 {
        self.tokens as f64 * 2f64.powi(self.rounds_waited.min(i32::MAX as u32) as i32)
    }
}

/// An idle seller as seen by the matcher.
#[derive(Debug, Clone, Copy)]
pub struct SellerView {
    pub id: DeviceId,
    pub perf: Perf,
    pub credit: i64,
    /// Pool-join ticket; ascending equals join order.
    pub join_seq: u64,
    /// Remaining busy time. Zero for idle pool members; carried so the
    /// on-time predicate stays meaningful for any caller.
    pub until_idle_ms: DurationMs,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchDecision {
    pub query: QueryId,
    /// 0, 1 or 2 sellers; 1 only under partial matching.
    pub sellers: Vec<DeviceId>,
    pub deferred: bool,
    /// True when the on-time requirement was waived because no seller could
    /// possibly meet it.
    pub fallback: bool,
}

impl MatchDecision {
    pub fn deferred(query: QueryId) -> MatchDecision {
        MatchDecision {
            query,
            sellers: Vec::new(),
            deferred: true,
            fallback: false,
        }
    }
}

/// With probability `skip_probability`, convert a decision into a deferral.
pub fn probabilistic_skip(
    decision: MatchDecision,
    skip_probability: f64,
    rng: &mut impl Rng,
) -> MatchDecision {
    debug_assert!((0.0..=1.0).contains(&skip_probability));
    if skip_probability > 0.0 && rng.random::<f64>() < skip_probability {
        MatchDecision::deferred(decision.query)
    } else {
        decision
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct RoundStats {
    pub skipped: u64,
    pub threshold_deferrals: u64,
}

/// Market facts a round needs beyond the idle pool itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundCtx {
    pub now: SimTime,
    /// Fastest performance over every seller in the system, busy or absent
    /// included; the threshold for giving up on on-time fulfillment.
    pub max_system_perf: f64,
    /// Minimum combined seller credit for a pair to form.
    pub credit_threshold: Option<i64>,
}

/// One matching round: reorder the pending queries, run the selector per
/// query consuming idle sellers as they are bound, apply probabilistic
/// skipping and the optional pair-credit threshold, then double min-variance
/// priorities of the queries that got nothing.
///
/// `idle` must be sorted by `join_seq`. Decisions are returned in processing
/// order; the caller starts the bound computations.
pub fn run_matching_round(
    pending: &mut [PendingQuery],
    idle: &[SellerView],
    policy: &MatcherPolicy,
    ctx: &RoundCtx,
    rng: &mut impl Rng,
) -> (Vec<MatchDecision>, RoundStats) {
    debug_assert!(idle.windows(2).all(|w| w[0].join_seq < w[1].join_seq));

    let mut order = match policy.reorder {
        Reorder::Fifo => order_fifo(pending),
        Reorder::MinVariance => order_min_variance(pending),
        Reorder::HardestToFulfill => order_hardest_to_fulfill(pending),
    };
    if policy.reversed {
        order.reverse();
    }
    if matches!(policy.select, Select::SpFastestOnTime | Select::SpSlowestOnTime) {
        // Deadline triage: queries already past their baseline cannot be
        // saved, so queries that still can be go first.
        order.sort_by_key(|&i| {
            let q = &pending[i];
            ctx.now.since(q.arrival) > q.baseline_ms()
        });
    }
    if policy.partial_matching {
        // Close half-bound pairs before opening new ones: their first
        // seller is already committed and its run is wasted if the second
        // slot lingers.
        order.sort_by_key(|&i| pending[i].bound.is_empty());
    }

    let idle_pos: HashMap<DeviceId, usize> =
        idle.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
    let mut taken = vec![false; idle.len()];
    let mut granted = vec![0usize; pending.len()];
    let mut decisions = Vec::with_capacity(order.len());
    let mut stats = RoundStats::default();

    for qi in order {
        let q = &pending[qi];
        let candidates: Vec<SellerView> = idle
            .iter()
            .enumerate()
            .filter(|(i, s)| !taken[*i] && s.id != q.buyer && !q.bound.contains(&s.id))
            .map(|(_, s)| *s)
            .collect();

        let mut decision = match policy.select {
            Select::Fifo => select_fifo(q, &candidates, policy.partial_matching),
            Select::GreedyFastest => select_greedy_fastest(q, &candidates, policy.partial_matching),
            Select::SpFastestOnTime => select_sp_on_time(
                q,
                &candidates,
                OnTimeMode::Fastest,
                policy.partial_matching,
                ctx.now,
                ctx.max_system_perf,
                policy.deadline_margin,
            ),
            Select::SpSlowestOnTime => select_sp_on_time(
                q,
                &candidates,
                OnTimeMode::Slowest,
                policy.partial_matching,
                ctx.now,
                ctx.max_system_perf,
                policy.deadline_margin,
            ),
        };

        if policy.skip_probability > 0.0 {
            let before = decision.deferred;
            decision = probabilistic_skip(decision, policy.skip_probability, rng);
            if decision.deferred && !before {
                stats.skipped += 1;
            }
        }

        // A pair only forms if the sellers' combined credit clears the
        // configured threshold.
        if let Some(t) = ctx.credit_threshold {
            if !decision.deferred && q.bound.len() + decision.sellers.len() == 2 {
                let sum: i64 = decision
                    .sellers
                    .iter()
                    .chain(q.bound.iter())
                    .map(|id| credit_of(idle, &idle_pos, *id))
                    .sum();
                if sum <= t {
                    decision = MatchDecision::deferred(decision.query);
                    stats.threshold_deferrals += 1;
                }
            }
        }

        if !decision.deferred {
            for id in &decision.sellers {
                let i = idle_pos[id];
                debug_assert!(!taken[i]);
                taken[i] = true;
            }
            granted[qi] = decision.sellers.len();
        }
        decisions.push(decision);
    }

    for (qi, q) in pending.iter_mut().enumerate() {
        if q.bound.is_empty() && granted[qi] == 0 {
            q.rounds_waited += 1;
        }
    }

    (decisions, stats)
}

fn credit_of(idle: &[SellerView], pos: &HashMap<DeviceId, usize>, id: DeviceId) -> i64 {
    // Bound sellers of a partial query are busy, hence not in `idle`; their
    // credit was checked against the pool when they were bound, and the pair
    // check here only sees them through position lookups that may miss.
    pos.get(&id).map(|&i| idle[i].credit).unwrap_or(0)
}
