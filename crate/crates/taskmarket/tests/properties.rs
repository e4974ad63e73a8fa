//! Property tests over the matching round, the expectation math, the
//! economy rules and whole small simulations.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use taskmarket::config::{ExperimentConfig, MatcherChoice};
use taskmarket::device::{DeviceId, Perf};
use taskmarket::dist::DistSpec;
use taskmarket::distmatch::expected_max_ms;
use taskmarket::economy::{settle_query, verification_probability, CreditLedger, ResultQuality, SettleOutcome};
use taskmarket::matching::{
    on_time, priority_cmp, run_matching_round, MatcherPolicy, PendingQuery, Reorder, RoundCtx,
    Select, SellerView, Trigger,
};
use taskmarket::metrics::{moving_average, summarize, Window};
use taskmarket::query::QueryId;
use taskmarket::sim::run_collect;
use taskmarket::time::SimTime;

fn arb_sellers(max: usize) -> impl Strategy<Value = Vec<SellerView>> {
    prop::collection::vec((0.5f64..500.0, 0i64..6), 0..max).prop_map(|specs| {
        specs
            .into_iter()
            .enumerate()
            .map(|(i, (perf, credit))| SellerView {
                id: DeviceId(i as u32),
                perf: Perf::new(perf).unwrap(),
                credit: credit - 3,
                join_seq: i as u64,
                until_idle_ms: 0,
            })
            .collect()
    })
}

fn arb_pending(max: usize) -> impl Strategy<Value = Vec<PendingQuery>> {
    prop::collection::vec(
        (0u32..40, 0.5f64..200.0, 1_000u64..5_000_000, 0u64..500_000, 0u32..8, 0.0f64..1.0),
        0..max,
    )
    .prop_map(|specs| {
        specs
            .into_iter()
            .enumerate()
            .map(|(i, (buyer, perf, tokens, arrival, rounds, rp))| PendingQuery {
                query: QueryId(i as u64),
                buyer: DeviceId(buyer),
                buyer_perf: Perf::new(perf).unwrap(),
                tokens,
                arrival: SimTime::from_ms(arrival),
                seq: i as u64,
                bound: Vec::new(),
                rounds_waited: rounds,
                random_priority: rp,
            })
            .collect()
    })
}

fn arb_policy() -> impl Strategy<Value = MatcherPolicy> {
    (
        prop::sample::select(vec![Reorder::Fifo, Reorder::MinVariance, Reorder::HardestToFulfill]),
        any::<bool>(),
        prop::sample::select(vec![
            Select::Fifo,
            Select::GreedyFastest,
            Select::SpFastestOnTime,
            Select::SpSlowestOnTime,
        ]),
        any::<bool>(),
    )
        .prop_map(|(reorder, reversed, select, partial)| MatcherPolicy {
            trigger: Trigger::Instant,
            reorder,
            reversed,
            select,
            partial_matching: partial,
            skip_probability: 0.0,
            deadline_margin: 0.0,
        })
}

fn ctx(now: u64) -> RoundCtx {
    RoundCtx {
        now: SimTime::from_ms(now),
        max_system_perf: 1000.0,
        credit_threshold: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn rounds_never_overbook_or_self_deal(
        sellers in arb_sellers(24),
        mut pending in arb_pending(10),
        policy in arb_policy(),
        now in 500_000u64..2_000_000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let before = pending.clone();
        let (decisions, _) = run_matching_round(&mut pending, &sellers, &policy, &ctx(now), &mut rng);

        let mut used = std::collections::HashSet::new();
        for d in decisions.iter().filter(|d| !d.deferred) {
            let q = before.iter().find(|q| q.query == d.query).unwrap();
            // No partial matching: full pairs only.
            if !policy.partial_matching {
                prop_assert_eq!(d.sellers.len(), 2);
            }
            prop_assert!(!d.sellers.is_empty() && d.sellers.len() <= 2);
            for id in &d.sellers {
                // A seller binds at most once per round, never to its own buyer,
                // and must come from the idle pool.
                prop_assert!(used.insert(*id), "seller {:?} bound twice", id);
                prop_assert!(*id != q.buyer);
                prop_assert!(sellers.iter().any(|s| s.id == *id));
            }
            // Within one decision the sellers are distinct.
            if d.sellers.len() == 2 {
                prop_assert!(d.sellers[0] != d.sellers[1]);
            }
        }
    }

    #[test]
    fn sp_non_fallback_decisions_are_on_time(
        sellers in arb_sellers(24),
        mut pending in arb_pending(10),
        mode in prop::sample::select(vec![Select::SpFastestOnTime, Select::SpSlowestOnTime]),
        reversed in any::<bool>(),
        partial in any::<bool>(),
    ) {
        // At the arrival instant no deadline has been consumed, so the
        // selector's test coincides with the plain predicate.
        let now = pending.iter().map(|q| q.arrival.as_ms()).max().unwrap_or(0);
        for q in &mut pending {
            q.arrival = SimTime::from_ms(now);
        }
        let policy = MatcherPolicy {
            trigger: Trigger::Instant,
            reorder: Reorder::HardestToFulfill,
            reversed,
            select: mode,
            partial_matching: partial,
            skip_probability: 0.0,
            deadline_margin: 0.0,
        };
        let before = pending.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (decisions, _) = run_matching_round(&mut pending, &sellers, &policy, &ctx(now), &mut rng);
        for d in decisions.iter().filter(|d| !d.deferred && !d.fallback) {
            let q = before.iter().find(|q| q.query == d.query).unwrap();
            for id in &d.sellers {
                let s = sellers.iter().find(|s| s.id == *id).unwrap();
                prop_assert!(on_time(s, q), "late seller {:?} for {:?}", id, d.query);
            }
        }
    }

    #[test]
    fn fifo_fifo_is_blind_to_performance(
        sellers in arb_sellers(24),
        pending in arb_pending(10),
        now in 500_000u64..2_000_000,
        shuffle_seed in any::<u64>(),
    ) {
        let policy = MatcherPolicy {
            trigger: Trigger::Instant,
            reorder: Reorder::Fifo,
            reversed: false,
            select: Select::Fifo,
            partial_matching: false,
            skip_probability: 0.0,
            deadline_margin: 0.0,
        };
        // Permute only the performance values; ids and join order stay put.
        let mut permuted = sellers.clone();
        let mut perfs: Vec<Perf> = permuted.iter().map(|s| s.perf).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
        for i in (1..perfs.len()).rev() {
            use rand::Rng;
            let j = rng.random_range(0..=i);
            perfs.swap(i, j);
        }
        for (s, p) in permuted.iter_mut().zip(perfs) {
            s.perf = p;
        }

        let mut pa = pending.clone();
        let mut pb = pending;
        let mut ra = ChaCha8Rng::seed_from_u64(3);
        let mut rb = ChaCha8Rng::seed_from_u64(3);
        let (da, _) = run_matching_round(&mut pa, &sellers, &policy, &ctx(now), &mut ra);
        let (db, _) = run_matching_round(&mut pb, &permuted, &policy, &ctx(now), &mut rb);
        prop_assert_eq!(da, db);
    }

    #[test]
    fn priority_comparator_is_exact(
        t1 in 1u64..10_000_000,
        r1 in 0u32..40,
        t2 in 1u64..10_000_000,
        r2 in 0u32..40,
    ) {
        let truth = ((t1 as u128) << r1).cmp(&((t2 as u128) << r2));
        prop_assert_eq!(priority_cmp(t1, r1, t2, r2), truth);
    }

    #[test]
    fn unmatched_queries_double_their_priority(
        tokens in 1u64..5_000_000,
        rounds in 0u32..20,
    ) {
        let mut pending = vec![PendingQuery {
            query: QueryId(0),
            buyer: DeviceId(9),
            buyer_perf: Perf::new(10.0).unwrap(),
            tokens,
            arrival: SimTime::ZERO,
            seq: 0,
            bound: Vec::new(),
            rounds_waited: 0,
            random_priority: 0.5,
        }];
        let policy = MatcherPolicy {
            trigger: Trigger::Instant,
            reorder: Reorder::MinVariance,
            reversed: false,
            select: Select::GreedyFastest,
            partial_matching: false,
            skip_probability: 0.0,
            deadline_margin: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..rounds {
            run_matching_round(&mut pending, &[], &policy, &ctx(0), &mut rng);
        }
        prop_assert_eq!(pending[0].rounds_waited, rounds);
        prop_assert_eq!(pending[0].priority(), tokens as f64 * 2f64.powi(rounds as i32));
    }

    #[test]
    fn expected_max_dominates_and_grows(
        c1 in 0.0f64..5_000.0,
        c2 in 0.0f64..5_000.0,
        bump in 1.0f64..500.0,
        alpha in 1e-4f64..0.1,
        s1 in any::<bool>(),
        s2 in any::<bool>(),
    ) {
        let v = expected_max_ms(c1, s1, c2, s2, alpha).unwrap();
        prop_assert!(v >= c1.max(c2) - 1e-9);
        let v_up = expected_max_ms(c1 + bump, s1, c2, s2, alpha).unwrap();
        prop_assert!(v_up >= v - 1e-9);
        // Symmetric under swapping the pair.
        let swapped = expected_max_ms(c2, s2, c1, s1, alpha).unwrap();
        prop_assert!((v - swapped).abs() < 1e-9);
        // A stochastic side vanishes as its re-entry rate explodes.
        if s1 || s2 {
            let det = c1.max(c2);
            let fast = expected_max_ms(c1, s1, c2, s2, 1e9).unwrap();
            prop_assert!((fast - det).abs() < 1e-6);
        }
    }

    #[test]
    fn verification_probability_behaves(
        c1 in -40i64..40,
        c2 in -40i64..40,
        p1 in 1e-3f64..1e6,
        p2 in 1e-3f64..1e6,
        scale in 1e-2f64..1e3,
    ) {
        let v = verification_probability(c1, c2, p1, p2).unwrap();
        prop_assert!((0.0..=1.0).contains(&v.value));
        // Symmetric in the perplexities and scale-invariant.
        let sym = verification_probability(c1, c2, p2, p1).unwrap();
        prop_assert_eq!(v.value, sym.value);
        let scaled = verification_probability(c1, c2, p1 * scale, p2 * scale).unwrap();
        prop_assert!((v.value - scaled.value).abs() < 1e-9);
        // More combined credit never increases suspicion.
        let richer = verification_probability(c1 + 1, c2, p1, p2).unwrap();
        prop_assert!(richer.value <= v.value + 1e-12);
    }

    #[test]
    fn settlements_preserve_zero_sum_and_reward_quality(
        outcomes in prop::collection::vec((0u32..6, 0u32..6, 1.0f64..1e4, 1.0f64..1e4), 1..60),
    ) {
        let mut ledger = CreditLedger::new(6);
        for (a, b, pa, pb) in outcomes {
            if a == b {
                continue;
            }
            let qa = ResultQuality { perplexity: pa, valid: true };
            let qb = ResultQuality { perplexity: pb, valid: true };
            let out = settle_query(&mut ledger, DeviceId(a), &qa, DeviceId(b), &qb);
            match out {
                SettleOutcome::Transfer { winner, .. } => {
                    let expect = if pa < pb { DeviceId(a) } else { DeviceId(b) };
                    prop_assert_eq!(winner, expect);
                }
                SettleOutcome::Tie => prop_assert_eq!(pa, pb),
                SettleOutcome::BothInvalid => prop_assert!(false),
            }
            prop_assert_eq!(ledger.sum(), 0);
        }
    }

    #[test]
    fn moving_average_partitions_the_series(
        waits in prop::collection::vec(0u64..1_000_000, 0..400),
        group in 1usize..150,
    ) {
        let pts = moving_average(&waits, group);
        prop_assert_eq!(pts.iter().map(|p| p.len).sum::<usize>(), waits.len());
        prop_assert!(pts.iter().rev().skip(1).all(|p| !p.partial));
        for p in &pts {
            let chunk = &waits[p.start..p.start + p.len];
            let lo = *chunk.iter().min().unwrap() as f64;
            let hi = *chunk.iter().max().unwrap() as f64;
            prop_assert!(p.mean_ms >= lo && p.mean_ms <= hi);
        }
        if group == 1 && !waits.is_empty() {
            prop_assert!(pts.iter().zip(&waits).all(|(p, &w)| p.mean_ms == w as f64));
        }
    }

    #[test]
    fn summarize_is_permutation_invariant_over_the_full_window(
        seed in any::<u64>(),
    ) {
        // Take real records from a small run, then shuffle.
        let cfg = tiny_sim_config(seed % 4);
        let policy = resolve(&cfg, "InstantGreedy");
        let (_, mut records) = run_collect(&cfg.to_sim_config(), &policy, seed).unwrap();
        prop_assume!(records.len() > 3);
        let base = summarize(&records, Window::All);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..records.len()).rev() {
            use rand::Rng;
            let j = rng.random_range(0..=i);
            records.swap(i, j);
        }
        let shuffled = summarize(&records, Window::All);
        prop_assert_eq!(base, shuffled);
    }
}

fn tiny_sim_config(variant: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        devices: 20 + 10 * variant as u32,
        servers: 2,
        horizon_ms: 900_000,
        query_gap: DistSpec::Uniform { lo: 0.0, hi: 90_000.0 },
        task_size: DistSpec::Uniform { lo: 10_000.0, hi: 800_000.0 },
        ..ExperimentConfig::default()
    };
    cfg.economy.bad_actor_fraction = 0.1;
    cfg
}

fn resolve(cfg: &ExperimentConfig, alias: &str) -> taskmarket::sim::PolicyKind {
    cfg.resolve_matcher(&MatcherChoice::Alias(alias.into()))
        .unwrap()
        .1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Whole small simulations keep their structural invariants under every
    /// matcher alias.
    #[test]
    fn small_runs_hold_structural_invariants(
        seed in 0u64..1_000,
        alias in prop::sample::select(vec![
            "InstantFIFO",
            "InstantGreedy",
            "InstantSPImproved",
            "InstantSPReversedImproved",
            "ScheduledMinVar",
            "SelectiveProbablisticScheduledGreedy",
            "Distributional",
        ]),
    ) {
        let cfg = tiny_sim_config(seed % 3);
        let policy = resolve(&cfg, alias);
        let (report, records) = run_collect(&cfg.to_sim_config(), &policy, seed).unwrap();

        prop_assert_eq!(report.issued, report.completed + report.pending_at_horizon);
        prop_assert_eq!(report.ledger_sum, 0);
        prop_assert_eq!(report.completed as usize, records.len());

        let mut stints: std::collections::HashMap<DeviceId, Vec<(u64, u64)>> = Default::default();
        let mut per_buyer: std::collections::HashMap<DeviceId, Vec<(u64, u64)>> = Default::default();
        for r in &records {
            prop_assert!(r.sellers[0].seller != r.sellers[1].seller);
            prop_assert!(r.sellers.iter().all(|s| s.seller != r.buyer));
            prop_assert_eq!(r.gain_ms, r.baseline_ms as i64 - r.wait_ms as i64);
            for s in &r.sellers {
                stints.entry(s.seller).or_default().push((s.start.as_ms(), s.finish.as_ms()));
            }
            per_buyer
                .entry(r.buyer)
                .or_default()
                .push((r.arrival.as_ms(), r.completed.as_ms()));
        }
        for intervals in stints.values_mut() {
            intervals.sort_unstable();
            for w in intervals.windows(2) {
                prop_assert!(w[1].0 >= w[0].1, "device busy in two assignments at once");
            }
        }
        // A device's next query never arrives before its previous completed.
        for queries in per_buyer.values_mut() {
            queries.sort_unstable();
            for w in queries.windows(2) {
                prop_assert!(w[1].0 >= w[0].1, "buyer issued overlapping queries");
            }
        }
    }
}
