//! Query processing orders. Each returns indices into the pending slice.

use std::cmp::Ordering;

use super::PendingQuery;

/// Arrival order, stable on the issuance sequence.
pub fn order_fifo(pending: &[PendingQuery]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pending.len()).collect();
    idx.sort_by_key(|&i| (pending[i].arrival, pending[i].seq));
    idx
}

/// Exact comparison of `t1 * 2^r1` vs `t2 * 2^r2` without overflow.
pub fn priority_cmp(t1: u64, r1: u32, t2: u64, r2: u32) -> Ordering {
    if r1 == r2 {
        return t1.cmp(&t2);
    }
    // Normalize so the left side has the larger round count.
    let (hi_t, lo_t, d, flipped) = if r1 > r2 {
        (t1, t2, r1 - r2, false)
    } else {
        (t2, t1, r2 - r1, true)
    };
    // hi_t * 2^d: for d > 64 this exceeds any u64 on the other side.
    let ord = if d >= 64 {
        Ordering::Greater
    } else {
        ((hi_t as u128) << d).cmp(&(lo_t as u128))
    };
    if flipped {
        ord.reverse()
    } else {
        ord
    }
}

/// Descending priority (`tokens * 2^rounds_waited`), ties broken by the
/// query's random priority, then issuance order.
pub fn order_min_variance(pending: &[PendingQuery]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pending.len()).collect();
    idx.sort_by(|&a, &b| {
        let (qa, qb) = (&pending[a], &pending[b]);
        priority_cmp(qb.tokens, qb.rounds_waited, qa.tokens, qa.rounds_waited)
            .then_with(|| {
                qb.random_priority
                    .partial_cmp(&qa.random_priority)
                    .unwrap_or(Ordering::Equal)
            })
            .then_with(|| qa.seq.cmp(&qb.seq))
    });
    idx
}

/// Ascending self-compute baseline: the queries with the least slack to beat
/// their buyer's own double run go first.
pub fn order_hardest_to_fulfill(pending: &[PendingQuery]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pending.len()).collect();
    idx.sort_by_key(|&i| {
        let q = &pending[i];
        (q.baseline_ms(), q.arrival, q.seq)
    });
    idx
}
