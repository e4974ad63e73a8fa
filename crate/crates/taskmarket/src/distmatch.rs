//! Distributional matcher: minimize summed expected wait under exponential
//! inter-query gaps, allowing a query to hold out for sellers that are not
//! in the market yet.
//!
//! For a candidate pair, each side contributes a deterministic part
//! `c = until_idle + compute_time` plus, for a device currently out of the
//! market, an Exp(alpha) re-entry delay. The expected maximum over the pair
//! has a closed form per case, cross-checked against a Monte Carlo estimate
//! (see `monte_carlo_expected_max` and `oracle_suite`).

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::device::{DeviceId, Perf};
use crate::matching::{MatchDecision, PendingQuery};
use crate::time::{DomainError, DurationMs};

/// Exponential inter-arrival model, rate per millisecond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpParams {
    pub alpha: f64,
}

impl ExpParams {
    pub fn new(alpha: f64) -> Result<ExpParams, DomainError> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(DomainError(format!("alpha must be positive, got {alpha}")));
        }
        Ok(ExpParams { alpha })
    }
}

/// When a device could start a run for a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SellerAvailability {
    pub device: DeviceId,
    pub perf: Perf,
    /// Remaining busy time for pool members; 0 when idle or absent.
    pub base_delay_ms: DurationMs,
    /// True for devices out of the market, which re-enter after an
    /// Exp(alpha) delay.
    pub stochastic: bool,
    /// Free to start a run at this instant. Not implied by a zero delay: a
    /// seller finishing exactly now still has its completion pending.
    pub available_now: bool,
}

impl SellerAvailability {
    pub fn idle(device: DeviceId, perf: Perf) -> SellerAvailability {
        SellerAvailability {
            device,
            perf,
            base_delay_ms: 0,
            stochastic: false,
            available_now: true,
        }
    }

    pub fn busy(device: DeviceId, perf: Perf, remaining_ms: DurationMs) -> SellerAvailability {
        SellerAvailability {
            device,
            perf,
            base_delay_ms: remaining_ms,
            stochastic: false,
            available_now: false,
        }
    }

    pub fn absent(device: DeviceId, perf: Perf) -> SellerAvailability {
        SellerAvailability {
            device,
            perf,
            base_delay_ms: 0,
            stochastic: true,
            available_now: false,
        }
    }
}

/// E[max(c1 + X1, c2 + X2)] where Xi is 0 for a deterministic side and
/// Exp(alpha) for a stochastic one.
pub fn expected_max_ms(
    c1: f64,
    stochastic1: bool,
    c2: f64,
    stochastic2: bool,
    alpha: f64,
) -> Result<f64, DomainError> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(DomainError(format!("alpha must be positive, got {alpha}")));
    }
    if c1 < 0.0 || c2 < 0.0 {
        return Err(DomainError("delays must be non-negative".into()));
    }
    Ok(match (stochastic1, stochastic2) {
        (false, false) => c1.max(c2),
        (false, true) => one_sided(c1, c2, alpha),
        (true, false) => one_sided(c2, c1, alpha),
        (true, true) => {
            let (hi, lo) = if c1 >= c2 { (c1, c2) } else { (c2, c1) };
            hi + 1.0 / alpha + (-alpha * (hi - lo)).exp() / (2.0 * alpha)
        }
    })
}

// E[max(det, sto + Exp(alpha))].
fn one_sided(det: f64, sto: f64, alpha: f64) -> f64 {
    let d = det - sto;
    if d >= 0.0 {
        det + (-alpha * d).exp() / alpha
    } else {
        sto + 1.0 / alpha
    }
}

/// Expected wait for a query of `tokens` run by the given pair.
pub fn expected_max_wait(
    tokens: u64,
    a1: &SellerAvailability,
    a2: &SellerAvailability,
    params: ExpParams,
) -> Result<f64, DomainError> {
    let c1 = a1.base_delay_ms as f64 + a1.perf.compute_ms(tokens) as f64;
    let c2 = a2.base_delay_ms as f64 + a2.perf.compute_ms(tokens) as f64;
    expected_max_ms(c1, a1.stochastic, c2, a2.stochastic, params.alpha)
}

/// Straight sampling estimate of the same expectation; the independent
/// check the closed forms are held to.
pub fn monte_carlo_expected_max(
    c1: f64,
    stochastic1: bool,
    c2: f64,
    stochastic2: bool,
    alpha: f64,
    samples: u32,
    rng: &mut impl Rng,
) -> f64 {
    let exp = Exp::new(alpha).expect("positive alpha");
    let mut acc = 0.0;
    for _ in 0..samples {
        let x1 = if stochastic1 { exp.sample(rng) } else { 0.0 };
        let x2 = if stochastic2 { exp.sample(rng) } else { 0.0 };
        acc += (c1 + x1).max(c2 + x2);
    }
    acc / samples as f64
}

#[derive(Debug, Clone)]
pub struct OracleCheck {
    pub case: &'static str,
    pub c1: f64,
    pub c2: f64,
    pub alpha: f64,
    pub closed_form: f64,
    pub monte_carlo: f64,
    pub rel_err: f64,
    pub pass: bool,
}

/// Closed form vs Monte Carlo on random parameter triples for every case,
/// plus the known value E[max of two iid Exp(alpha)] = 3/(2 alpha).
/// Tolerance is 0.5% relative error.
pub fn oracle_suite(samples: u32, trials_per_case: u32, seed: u64) -> Vec<OracleCheck> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let tol = 0.005;

    let cases: [(&'static str, bool, bool); 3] = [
        ("deterministic", false, false),
        ("one_stochastic", false, true),
        ("both_stochastic", true, true),
    ];
    for (name, s1, s2) in cases {
        for _ in 0..trials_per_case {
            let c1 = rng.random_range(0.0..2000.0);
            let c2 = rng.random_range(0.0..2000.0);
            // Spread alpha so exp(-alpha * d) sweeps from ~1 to ~0.
            let alpha = 10f64.powf(rng.random_range(-4.0..-1.0));
            let closed = expected_max_ms(c1, s1, c2, s2, alpha).unwrap();
            let mc = monte_carlo_expected_max(c1, s1, c2, s2, alpha, samples, &mut rng);
            let rel_err = (closed - mc).abs() / mc.abs().max(f64::MIN_POSITIVE);
            out.push(OracleCheck {
                case: name,
                c1,
                c2,
                alpha,
                closed_form: closed,
                monte_carlo: mc,
                rel_err,
                pass: rel_err <= tol,
            });
        }
    }

    // Known value: two fresh stochastic arrivals, no deterministic part.
    for alpha in [0.5, 2.0] {
        let known = 1.5 / alpha;
        let closed = expected_max_ms(0.0, true, 0.0, true, alpha).unwrap();
        let mc = monte_carlo_expected_max(0.0, true, 0.0, true, alpha, samples, &mut rng);
        let rel_err = ((closed - known).abs() / known).max((mc - known).abs() / known);
        out.push(OracleCheck {
            case: "known_value",
            c1: 0.0,
            c2: 0.0,
            alpha,
            closed_form: closed,
            monte_carlo: mc,
            rel_err,
            pass: rel_err <= tol,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistParams {
    pub alpha: f64,
    /// Pair search is restricted to this many candidates per query, ranked
    /// by an optimistic completion bound. Pass `usize::MAX` for exhaustive
    /// search at small scale.
    pub top_k: usize,
}

/// Plan matches that minimize summed expected wait, then start every match
/// whose both sellers are idle right now, and re-plan the rest until no new
/// start appears. Queries whose best pair involves a busy or out-of-market
/// device wait for it; seller conflicts go to the higher random priority.
pub fn match_distributional(
    pending: &[PendingQuery],
    candidates: &[SellerAvailability],
    params: &DistParams,
) -> Vec<MatchDecision> {
    let alpha = ExpParams { alpha: params.alpha };
    let mut open: Vec<usize> = (0..pending.len()).collect();
    open.sort_by(|&a, &b| {
        pending[b]
            .random_priority
            .partial_cmp(&pending[a].random_priority)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| pending[a].seq.cmp(&pending[b].seq))
    });

    let mut taken: HashSet<DeviceId> = HashSet::new();
    let mut decisions = Vec::new();

    loop {
        let mut claimed: HashSet<DeviceId> = HashSet::new();
        let mut plans: Vec<(usize, DeviceId, DeviceId, bool)> = Vec::new();

        for &qi in &open {
            let q = &pending[qi];
            let mut avail: Vec<&SellerAvailability> = candidates
                .iter()
                .filter(|c| {
                    c.device != q.buyer
                        && !taken.contains(&c.device)
                        && !claimed.contains(&c.device)
                })
                .collect();
            if avail.len() < 2 {
                continue;
            }
            // Optimistic bound: the wait if the re-entry delay were zero.
            avail.sort_by_key(|c| {
                (
                    c.base_delay_ms.saturating_add(c.perf.compute_ms(q.tokens)),
                    c.device,
                )
            });
            avail.truncate(params.top_k.max(2));

            let mut best: Option<(usize, usize, f64)> = None;
            for i in 0..avail.len() {
                for j in (i + 1)..avail.len() {
                    let e = expected_max_wait(q.tokens, avail[i], avail[j], alpha)
                        .expect("validated alpha");
                    if best.is_none_or(|(_, _, b)| e < b) {
                        best = Some((i, j, e));
                    }
                }
            }
            if let Some((i, j, _)) = best {
                let (s1, s2) = (avail[i], avail[j]);
                claimed.insert(s1.device);
                claimed.insert(s2.device);
                plans.push((
                    qi,
                    s1.device,
                    s2.device,
                    s1.available_now && s2.available_now,
                ));
            }
        }

        let started: Vec<&(usize, DeviceId, DeviceId, bool)> =
            plans.iter().filter(|p| p.3).collect();
        if started.is_empty() {
            break;
        }
        let mut started_queries = HashSet::new();
        for &&(qi, s1, s2, _) in &started {
            decisions.push(MatchDecision {
                query: pending[qi].query,
                sellers: vec![s1, s2],
                deferred: false,
                fallback: false,
            });
            taken.insert(s1);
            taken.insert(s2);
            started_queries.insert(qi);
        }
        open.retain(|qi| !started_queries.contains(qi));
    }

    for &qi in &open {
        decisions.push(MatchDecision::deferred(pending[qi].query));
    }
    decisions
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::QueryId;
    use crate::time::SimTime;
    use rand::SeedableRng;

    #[test]
    fn deterministic_case_is_plain_max() {
        assert_eq!(expected_max_ms(7.0, false, 4.0, false, 1.0).unwrap(), 7.0);
        assert_eq!(expected_max_ms(4.0, false, 7.0, false, 1.0).unwrap(), 7.0);
    }

    #[test]
    fn one_stochastic_matches_hand_derivation() {
        // c1 = 5 deterministic, c2 = 3 stochastic, alpha = 1:
        // 5 + e^{-2} (checked by integration and Monte Carlo).
        let v = expected_max_ms(5.0, false, 3.0, true, 1.0).unwrap();
        assert!((v - (5.0 + (-2.0f64).exp())).abs() < 1e-12);
        // Symmetric in argument order.
        let w = expected_max_ms(3.0, true, 5.0, false, 1.0).unwrap();
        assert_eq!(v, w);
        // Stochastic side dominant: c2 + 1/alpha.
        let v = expected_max_ms(1.0, false, 3.0, true, 0.5).unwrap();
        assert_eq!(v, 5.0);
    }

    #[test]
    fn both_stochastic_matches_known_value() {
        // c1 = c2 = 0: E[max of two iid Exp(2)] = 3/4.
        let v = expected_max_ms(0.0, true, 0.0, true, 2.0).unwrap();
        assert!((v - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_alpha() {
        assert!(expected_max_ms(1.0, true, 1.0, false, 0.0).is_err());
        assert!(expected_max_ms(1.0, true, 1.0, false, -2.0).is_err());
        assert!(ExpParams::new(f64::NAN).is_err());
    }

    #[test]
    fn never_below_deterministic_max_and_monotone() {
        for &(s1, s2) in &[(false, true), (true, true)] {
            let mut prev = 0.0;
            for i in 0..50 {
                let c1 = i as f64 * 10.0;
                let v = expected_max_ms(c1, s1, 120.0, s2, 0.01).unwrap();
                assert!(v >= c1.max(120.0) - 1e-9, "value {v} below max({c1},120)");
                assert!(v >= prev - 1e-9, "not monotone at c1={c1}");
                prev = v;
            }
        }
    }

    #[test]
    fn large_alpha_converges_to_deterministic() {
        let det = expected_max_ms(300.0, false, 200.0, false, 1.0).unwrap();
        for alpha in [1.0, 10.0, 1e3, 1e6] {
            let v = expected_max_ms(300.0, false, 200.0, true, alpha).unwrap();
            assert!(v >= det);
            if alpha >= 1e6 {
                assert!((v - det).abs() < 1e-3, "alpha={alpha} v={v}");
            }
        }
    }

    #[test]
    fn closed_forms_agree_with_monte_carlo() {
        // Quick version of the oracle suite; the acceptance suite runs the
        // full 1e6-sample sweep.
        let checks = oracle_suite(120_000, 4, 11);
        for c in &checks {
            assert!(
                c.pass,
                "case {} (c1={}, c2={}, alpha={}): closed {} vs mc {} rel_err {}",
                c.case, c.c1, c.c2, c.alpha, c.closed_form, c.monte_carlo, c.rel_err
            );
        }
    }

    #[test]
    fn miscaled_one_sided_form_fails_the_oracle() {
        // Using alpha instead of 1/alpha as the scale of the exponential
        // correction term is off by orders of magnitude: at c1 = c2 the
        // correction is the full mean re-entry delay.
        let (c1, c2, alpha): (f64, f64, f64) = (100.0, 100.0, 0.01);
        let wrong = c1 + alpha * (-alpha * (c1 - c2)).exp();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mc = monte_carlo_expected_max(c1, false, c2, true, alpha, 200_000, &mut rng);
        assert!((wrong - mc).abs() / mc > 0.3);
        let right = expected_max_ms(c1, false, c2, true, alpha).unwrap();
        assert!((right - mc).abs() / mc < 0.005);
    }

    fn avail(id: u32, perf: f64, base: u64, stochastic: bool) -> SellerAvailability {
        SellerAvailability {
            device: DeviceId(id),
            perf: Perf::new(perf).unwrap(),
            base_delay_ms: base,
            stochastic,
            available_now: !stochastic && base == 0,
        }
    }

    fn pending(query: u64, buyer: u32, tokens: u64, rp: f64) -> PendingQuery {
        PendingQuery {
            query: QueryId(query),
            buyer: DeviceId(buyer),
            buyer_perf: Perf::new(10.0).unwrap(),
            tokens,
            arrival: SimTime::ZERO,
            seq: query,
            bound: Vec::new(),
            rounds_waited: 0,
            random_priority: rp,
        }
    }

    #[test]
    fn waits_for_fast_devices_when_expectation_says_so() {
        // Two idle slow sellers (400 ms each) vs two out-of-market fast ones
        // (50 ms compute, mean re-entry 100 ms): expected 200 < 400, so the
        // matcher defers rather than starting the slow pair.
        let params = DistParams { alpha: 0.01, top_k: usize::MAX };
        let q = [pending(0, 99, 2000, 0.5)];
        let cands = [
            avail(1, 5.0, 0, false),
            avail(2, 5.0, 0, false),
            avail(3, 40.0, 0, true),
            avail(4, 40.0, 0, true),
        ];
        let slow_pair = expected_max_wait(2000, &cands[0], &cands[1], ExpParams { alpha: 0.01 })
            .unwrap();
        let fast_pair = expected_max_wait(2000, &cands[2], &cands[3], ExpParams { alpha: 0.01 })
            .unwrap();
        assert_eq!(slow_pair, 400.0);
        assert!((fast_pair - 200.0).abs() < 1e-9);

        let decisions = match_distributional(&q, &cands, &params);
        assert_eq!(decisions.len(), 1);
        assert!(decisions[0].deferred);

        // With sluggish re-entry (mean 1e5 ms) the idle slow pair wins.
        let params = DistParams { alpha: 1e-5, top_k: usize::MAX };
        let decisions = match_distributional(&q, &cands, &params);
        assert_eq!(decisions[0].sellers, vec![DeviceId(1), DeviceId(2)]);
    }

    #[test]
    fn conflicts_go_to_higher_random_priority() {
        let params = DistParams { alpha: 0.001, top_k: usize::MAX };
        let qs = [pending(0, 90, 1000, 0.2), pending(1, 91, 1000, 0.9)];
        let cands = [avail(1, 10.0, 0, false), avail(2, 10.0, 0, false)];
        let decisions = match_distributional(&qs, &cands, &params);
        let winner = decisions.iter().find(|d| !d.deferred).unwrap();
        assert_eq!(winner.query, QueryId(1));
        assert!(decisions.iter().any(|d| d.query == QueryId(0) && d.deferred));
    }

    #[test]
    fn empty_pending_yields_no_decisions() {
        let params = DistParams { alpha: 0.001, top_k: 16 };
        let cands = [avail(1, 10.0, 0, false)];
        assert!(match_distributional(&[], &cands, &params).is_empty());
    }

    #[test]
    fn iterative_recomputation_reaches_fixed_point() {
        // Three queries, four idle sellers: the two highest priorities claim
        // both pairs in the first pass; the third query finds no pair on any
        // later pass and defers.
        let params = DistParams { alpha: 0.001, top_k: usize::MAX };
        let qs = [
            pending(0, 90, 1000, 0.9),
            pending(1, 91, 1000, 0.5),
            pending(2, 92, 1000, 0.1),
        ];
        let cands = [
            avail(1, 10.0, 0, false),
            avail(2, 10.0, 0, false),
            avail(3, 10.0, 0, false),
            avail(4, 10.0, 0, false),
        ];
        let decisions = match_distributional(&qs, &cands, &params);
        let started = decisions.iter().filter(|d| !d.deferred).count();
        assert_eq!(started, 2);
        assert_eq!(decisions.iter().filter(|d| d.deferred).count(), 1);

        // No seller is bound twice.
        let mut seen = HashSet::new();
        for d in decisions.iter().filter(|d| !d.deferred) {
            for s in &d.sellers {
                assert!(seen.insert(*s));
            }
        }
    }
}
