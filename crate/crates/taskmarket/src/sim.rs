//! The deterministic discrete-event engine.
//!
//! A run is a pure function of `(config, policy, seed)`. Devices issue a
//! query, enter the seller pool while they wait, compute for peers when a
//! matcher binds them, and drop out until their next query once their own
//! completes and any assigned task is finished, whichever comes later.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{Device, DeviceId, DeviceState, Perf};
use crate::dist::DistSpec;
use crate::distmatch::{match_distributional, DistParams, SellerAvailability};
use crate::economy::{
    settle_query, verification_draw, verification_probability, CreditLedger, QualityModel,
    SettleOutcome, VerificationOutcome,
};
use crate::event::{EventKind, EventQueue};
use crate::matching::{
    run_matching_round, MatchDecision, MatcherPolicy, PendingQuery, RoundCtx, SellerView, Trigger,
};
use crate::metrics::{CompletionRecord, Histogram, MetricsCollector, RecordSink, SellerStint};
use crate::query::{Assignment, Query, QueryId};
use crate::rng::{self, Purpose};
use crate::time::{DomainError, SimTime};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

fn invariant(msg: impl Into<String>) -> SimError {
    SimError::Invariant(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EconomyParams {
    /// Row-sum tolerance for model validation (exposed to evaluation users;
    /// the simulated quality model always produces valid results).
    pub epsilon: f64,
    pub quality: QualityModel,
    /// Fraction of non-server devices flagged as bad actors at setup.
    pub bad_actor_fraction: f64,
    /// Minimum combined seller credit for a pair to form; `None` disables.
    pub credit_threshold: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Non-server devices.
    pub devices: u32,
    /// Dedicated always-on sellers that never issue queries.
    pub servers: u32,
    pub server_perf: f64,
    /// Gap between a device's query completion and its next query, ms.
    pub query_gap: DistSpec,
    /// Device performance, tokens per millisecond.
    pub perf: DistSpec,
    /// Task size, tokens.
    pub task_size: DistSpec,
    pub horizon_ms: u64,
    pub economy: EconomyParams,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.horizon_ms == 0 {
            return Err(SimError::Config("horizon must be positive".into()));
        }
        if self.servers > 0 && !(self.server_perf.is_finite() && self.server_perf > 0.0) {
            return Err(SimError::Config("server_perf must be positive".into()));
        }
        self.query_gap
            .validate(false)
            .map_err(|e| SimError::Config(format!("query_gap: {e}")))?;
        self.perf
            .validate(true)
            .map_err(|e| SimError::Config(format!("perf: {e}")))?;
        self.task_size
            .validate(true)
            .map_err(|e| SimError::Config(format!("task_size: {e}")))?;
        let eco = &self.economy;
        if !(eco.epsilon.is_finite() && eco.epsilon > 0.0) {
            return Err(SimError::Config("economy.epsilon must be positive".into()));
        }
        if !(0.0..=1.0).contains(&eco.bad_actor_fraction) {
            return Err(SimError::Config(
                "economy.bad_actor_fraction must be in [0,1]".into(),
            ));
        }
        if !(eco.quality.base.is_finite() && eco.quality.base > 0.0)
            || eco.quality.noise < 0.0
            || eco.quality.bad_actor_penalty < 0.0
        {
            return Err(SimError::Config("economy.quality parameters invalid".into()));
        }
        Ok(())
    }

    pub fn total_devices(&self) -> usize {
        self.devices as usize + self.servers as usize
    }
}

/// Which matcher drives a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicyKind {
    Heuristic(MatcherPolicy),
    /// Expected-wait minimizer; always instant-triggered.
    Distributional(DistParams),
}

impl PolicyKind {
    pub fn trigger(&self) -> Trigger {
        match self {
            PolicyKind::Heuristic(p) => p.trigger,
            PolicyKind::Distributional(_) => Trigger::Instant,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match self {
            PolicyKind::Heuristic(p) => p.validate().map_err(SimError::Config),
            PolicyKind::Distributional(d) => {
                if !(d.alpha.is_finite() && d.alpha > 0.0) {
                    return Err(SimError::Config("distributional alpha must be positive".into()));
                }
                if d.top_k < 2 {
                    return Err(SimError::Config("distributional top_k must be at least 2".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceInfo {
    pub id: DeviceId,
    pub perf: f64,
    pub is_server: bool,
    pub bad_actor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub issued: u64,
    pub completed: u64,
    pub pending_at_horizon: u64,
    pub matching_rounds: u64,
    pub skipped_decisions: u64,
    pub threshold_deferrals: u64,
    pub verification_draws: u64,
    pub verifications: u64,
    pub probability_clamps: u64,
    pub flagged_queries: u64,
    pub ledger_sum: i64,
    pub ledger: Vec<(DeviceId, i64)>,
    pub devices: Vec<DeviceInfo>,
    pub idle_seller_perf: Histogram,
}

/// Round a sampled gap to whole milliseconds.
fn gap_ms(sample: f64) -> u64 {
    sample.max(0.0).round() as u64
}

/// Round a sampled task size to whole tokens, at least one.
fn tokens_from(sample: f64) -> u64 {
    sample.round().max(1.0) as u64
}

/// Draw the device's next inter-query gap, task size and random priority,
/// advance its draw counter, and produce the arrival event payload.
pub fn schedule_next_query(
    device: &mut Device,
    completed_at: SimTime,
    root_seed: u64,
    query_gap: &DistSpec,
    task_size: &DistSpec,
) -> Result<(SimTime, EventKind), SimError> {
    if device.is_server {
        return Err(invariant(format!(
            "server {:?} cannot issue queries",
            device.id
        )));
    }
    let n = device.queries_made;
    device.queries_made += 1;
    let id = device.id.0 as u64;
    let lambda = gap_ms(query_gap.sample(&mut rng::stream(root_seed, Purpose::Arrival, id, n)));
    let tokens = tokens_from(task_size.sample(&mut rng::stream(root_seed, Purpose::TaskSize, id, n)));
    let random_priority = rng::uniform(root_seed, Purpose::Priority, id, n);
    Ok((
        completed_at.plus(lambda),
        EventKind::QueryArrival {
            device: device.id,
            tokens,
            random_priority,
        },
    ))
}

struct Engine<'a, S: RecordSink> {
    cfg: &'a SimConfig,
    policy: &'a PolicyKind,
    seed: u64,
    now: SimTime,
    devices: Vec<Device>,
    queries: Vec<Query>,
    pending: Vec<PendingQuery>,
    /// Pool members by join ticket; iteration order is join order.
    pool: BTreeMap<u64, DeviceId>,
    next_join_seq: u64,
    events: EventQueue,
    ledger: CreditLedger,
    skip_rng: ChaCha8Rng,
    max_system_perf: f64,
    sink: &'a mut S,

    issued: u64,
    completed: u64,
    rounds: u64,
    skipped: u64,
    threshold_deferrals: u64,
    verification_draws: u64,
    verifications: u64,
    prob_clamps: u64,
    flagged: u64,
    idle_perf_hist: Histogram,
}

impl<'a, S: RecordSink> Engine<'a, S> {
    fn new(cfg: &'a SimConfig, policy: &'a PolicyKind, seed: u64, sink: &'a mut S) -> Engine<'a, S> {
        let hist_hi = match cfg.perf {
            DistSpec::Uniform { hi, .. } => hi,
            DistSpec::Exponential { rate } => 5.0 / rate,
        };
        Engine {
            cfg,
            policy,
            seed,
            now: SimTime::ZERO,
            devices: Vec::with_capacity(cfg.total_devices()),
            queries: Vec::new(),
            pending: Vec::new(),
            pool: BTreeMap::new(),
            next_join_seq: 0,
            events: EventQueue::new(),
            ledger: CreditLedger::new(cfg.total_devices()),
            skip_rng: rng::stream(seed, Purpose::Skip, 0, 0),
            max_system_perf: 0.0,
            sink,
            issued: 0,
            completed: 0,
            rounds: 0,
            skipped: 0,
            threshold_deferrals: 0,
            verification_draws: 0,
            verifications: 0,
            prob_clamps: 0,
            flagged: 0,
            idle_perf_hist: Histogram::new(0.0, hist_hi.max(1.0), 40),
        }
    }

    fn join_pool(&mut self, id: DeviceId) {
        let seq = self.next_join_seq;
        self.next_join_seq += 1;
        self.devices[id.index()].join_seq = Some(seq);
        self.pool.insert(seq, id);
    }

    fn leave_pool(&mut self, id: DeviceId) {
        if let Some(seq) = self.devices[id.index()].join_seq.take() {
            self.pool.remove(&seq);
        }
    }

    fn init(&mut self) -> Result<(), SimError> {
        let server_perf = if self.cfg.servers > 0 {
            Some(Perf::new(self.cfg.server_perf)?)
        } else {
            None
        };
        for i in 0..self.cfg.servers {
            let id = DeviceId(i);
            let mut d = Device::new(id, server_perf.unwrap(), true);
            d.state = DeviceState::Idle;
            self.devices.push(d);
            self.join_pool(id);
        }
        for i in 0..self.cfg.devices {
            let id = DeviceId(self.cfg.servers + i);
            let perf_draw = self
                .cfg
                .perf
                .sample(&mut rng::stream(self.seed, Purpose::DevicePerf, id.0 as u64, 0));
            let mut d = Device::new(id, Perf::new(perf_draw)?, false);
            d.bad_actor = rng::uniform(self.seed, Purpose::BadActor, id.0 as u64, 0)
                < self.cfg.economy.bad_actor_fraction;
            self.devices.push(d);
        }
        // Every device behaves as if a previous query completed at t = 0.
        for i in 0..self.cfg.devices {
            let idx = (self.cfg.servers + i) as usize;
            let (time, kind) = schedule_next_query(
                &mut self.devices[idx],
                SimTime::ZERO,
                self.seed,
                &self.cfg.query_gap,
                &self.cfg.task_size,
            )?;
            if time.as_ms() <= self.cfg.horizon_ms {
                self.events.push(time, kind);
            }
        }
        self.max_system_perf = self
            .devices
            .iter()
            .map(|d| d.perf.get())
            .fold(0.0, f64::max);
        if let Trigger::Scheduled { period_ms } = self.policy.trigger() {
            self.events
                .push(SimTime::from_ms(period_ms), EventKind::MatchTick);
        }
        Ok(())
    }

    fn on_arrival(
        &mut self,
        device: DeviceId,
        tokens: u64,
        random_priority: f64,
    ) -> Result<(), SimError> {
        let qid = QueryId(self.queries.len() as u64);
        {
            let d = &mut self.devices[device.index()];
            if d.is_server {
                return Err(invariant("server issued a query"));
            }
            if d.open_query.is_some() {
                return Err(invariant(format!(
                    "device {:?} issued a query before its last completed",
                    device
                )));
            }
            d.open_query = Some(qid);
        }
        self.queries
            .push(Query::new(qid, device, tokens, self.now));
        self.issued += 1;

        match self.devices[device.index()].state {
            DeviceState::Absent => {
                self.join_pool(device);
                self.devices[device.index()].state = DeviceState::WaitingBuyer;
            }
            // Still computing a previous assignment: already in the pool.
            DeviceState::ComputingSeller => {}
            other => {
                return Err(invariant(format!(
                    "device {device:?} issued a query in state {other:?}"
                )))
            }
        }

        let d = &self.devices[device.index()];
        self.pending.push(PendingQuery {
            query: qid,
            buyer: device,
            buyer_perf: d.perf,
            tokens,
            arrival: self.now,
            seq: qid.0,
            bound: Vec::new(),
            rounds_waited: 0,
            random_priority,
        });
        Ok(())
    }

    fn start_assignment(&mut self, seller: DeviceId, qid: QueryId) -> Result<(), SimError> {
        let (perf, state_ok) = {
            let d = &self.devices[seller.index()];
            (d.perf, d.is_available_seller())
        };
        if !state_ok {
            return Err(invariant(format!(
                "seller {seller:?} double-booked for {qid:?}"
            )));
        }
        let q = &mut self.queries[qid.index()];
        if q.assignments.len() >= 2 {
            return Err(invariant(format!("{qid:?} already fully assigned")));
        }
        if q.buyer == seller {
            return Err(invariant("buyer bound to its own query"));
        }
        if q.assignments.iter().any(|a| a.seller == seller) {
            return Err(invariant("same seller bound twice to one query"));
        }
        let finish = self.now.plus(perf.compute_ms(q.tokens));
        q.assignments.push(Assignment {
            seller,
            start: self.now,
            finish,
            done: false,
        });
        let d = &mut self.devices[seller.index()];
        d.state = DeviceState::ComputingSeller;
        d.busy_until = Some(finish);
        d.computing = Some(qid);
        if finish.as_ms() <= self.cfg.horizon_ms {
            self.events.push(
                finish,
                EventKind::ComputationDone {
                    device: seller,
                    query: qid,
                },
            );
        }
        Ok(())
    }

    fn on_done(&mut self, device: DeviceId, qid: QueryId) -> Result<(), SimError> {
        {
            let d = &mut self.devices[device.index()];
            if d.computing != Some(qid) {
                return Err(invariant(format!(
                    "completion event for {device:?} does not match its task"
                )));
            }
            d.computing = None;
            d.busy_until = None;
        }
        {
            let q = &mut self.queries[qid.index()];
            let a = q
                .assignments
                .iter_mut()
                .find(|a| a.seller == device && !a.done)
                .ok_or_else(|| invariant("completion without a matching assignment"))?;
            a.done = true;
        }
        // Stop sharing on the later of: own query completed, assigned task
        // finished.
        let d = &self.devices[device.index()];
        if d.is_server {
            self.devices[device.index()].state = DeviceState::Idle;
        } else if d.open_query.is_some() {
            self.devices[device.index()].state = DeviceState::WaitingBuyer;
        } else {
            self.devices[device.index()].state = DeviceState::Absent;
            self.leave_pool(device);
        }

        if self.queries[qid.index()].all_done() {
            self.complete_query(qid)?;
        }
        Ok(())
    }

    fn complete_query(&mut self, qid: QueryId) -> Result<(), SimError> {
        let (buyer, tokens, arrival, s1, s2, stint1, stint2) = {
            let q = &mut self.queries[qid.index()];
            q.completed_at = Some(self.now);
            let a1 = q.assignments[0];
            let a2 = q.assignments[1];
            (
                q.buyer,
                q.tokens,
                q.arrival,
                a1.seller,
                a2.seller,
                SellerStint {
                    seller: a1.seller,
                    start: a1.start,
                    finish: a1.finish,
                },
                SellerStint {
                    seller: a2.seller,
                    start: a2.start,
                    finish: a2.finish,
                },
            )
        };
        self.completed += 1;

        // Result quality and settlement. The verification chance is read off
        // the credits the sellers carried into this query.
        let quality = self.cfg.economy.quality;
        let u1 = {
            let d = &mut self.devices[s1.index()];
            let n = d.quality_draws;
            d.quality_draws += 1;
            rng::uniform(self.seed, Purpose::Quality, s1.0 as u64, n)
        };
        let u2 = {
            let d = &mut self.devices[s2.index()];
            let n = d.quality_draws;
            d.quality_draws += 1;
            rng::uniform(self.seed, Purpose::Quality, s2.0 as u64, n)
        };
        let q1 = quality.draw(self.devices[s1.index()].bad_actor, u1);
        let q2 = quality.draw(self.devices[s2.index()].bad_actor, u2);

        let vp = verification_probability(
            self.ledger.get(s1),
            self.ledger.get(s2),
            q1.perplexity,
            q2.perplexity,
        )
        .map_err(|e| invariant(format!("quality model produced bad perplexity: {e}")))?;
        if vp.clamped {
            self.prob_clamps += 1;
        }
        self.verification_draws += 1;
        let mut vrng = rng::stream(self.seed, Purpose::Verification, qid.0, 0);
        if verification_draw(vp.value, &mut vrng) == VerificationOutcome::Verify {
            self.verifications += 1;
        }
        if settle_query(&mut self.ledger, s1, &q1, s2, &q2) == SettleOutcome::BothInvalid {
            self.flagged += 1;
        }

        let wait_ms = self.now.since(arrival);
        let baseline_ms = self.devices[buyer.index()]
            .perf
            .compute_ms(tokens)
            .saturating_mul(2);
        self.sink.record(CompletionRecord {
            query: qid,
            buyer,
            tokens,
            arrival,
            completed: self.now,
            wait_ms,
            baseline_ms,
            gain_ms: baseline_ms as i64 - wait_ms as i64,
            sellers: [stint1, stint2],
        });

        // The buyer's next query is timed from this completion.
        self.devices[buyer.index()].open_query = None;
        let (time, kind) = schedule_next_query(
            &mut self.devices[buyer.index()],
            self.now,
            self.seed,
            &self.cfg.query_gap,
            &self.cfg.task_size,
        )?;
        if time.as_ms() <= self.cfg.horizon_ms {
            self.events.push(time, kind);
        }
        match self.devices[buyer.index()].state {
            DeviceState::WaitingBuyer => {
                self.devices[buyer.index()].state = DeviceState::Absent;
                self.leave_pool(buyer);
            }
            DeviceState::ComputingSeller => {}
            other => {
                return Err(invariant(format!(
                    "buyer {buyer:?} completed a query in state {other:?}"
                )))
            }
        }
        Ok(())
    }

    fn idle_sellers(&self) -> Vec<SellerView> {
        self.pool
            .iter()
            .filter_map(|(&seq, &id)| {
                let d = &self.devices[id.index()];
                d.is_available_seller().then(|| SellerView {
                    id,
                    perf: d.perf,
                    credit: self.ledger.get(id),
                    join_seq: seq,
                    until_idle_ms: 0,
                })
            })
            .collect()
    }

    fn distmatch_candidates(&self) -> Vec<SellerAvailability> {
        self.devices
            .iter()
            .map(|d| match d.state {
                DeviceState::Idle | DeviceState::WaitingBuyer => {
                    SellerAvailability::idle(d.id, d.perf)
                }
                DeviceState::ComputingSeller => {
                    SellerAvailability::busy(d.id, d.perf, d.time_until_idle(self.now))
                }
                DeviceState::Absent => SellerAvailability::absent(d.id, d.perf),
            })
            .collect()
    }

    fn matching_round(&mut self) -> Result<(), SimError> {
        if self.pending.is_empty() {
            return Ok(());
        }
        self.rounds += 1;
        let idle = self.idle_sellers();
        for s in &idle {
            self.idle_perf_hist.add(s.perf.get());
        }
        let ctx = RoundCtx {
            now: self.now,
            max_system_perf: self.max_system_perf,
            credit_threshold: self.cfg.economy.credit_threshold,
        };
        let decisions: Vec<MatchDecision> = match self.policy {
            PolicyKind::Heuristic(p) => {
                let (decisions, stats) =
                    run_matching_round(&mut self.pending, &idle, p, &ctx, &mut self.skip_rng);
                self.skipped += stats.skipped;
                self.threshold_deferrals += stats.threshold_deferrals;
                decisions
            }
            PolicyKind::Distributional(dp) => {
                let candidates = self.distmatch_candidates();
                match_distributional(&self.pending, &candidates, dp)
            }
        };
        for decision in decisions {
            if decision.deferred {
                continue;
            }
            for &seller in &decision.sellers {
                self.start_assignment(seller, decision.query)?;
            }
            let idx = self
                .pending
                .iter()
                .position(|p| p.query == decision.query)
                .ok_or_else(|| invariant("decision for a query that is not pending"))?;
            self.pending[idx].bound.extend(decision.sellers.iter());
            if self.pending[idx].bound.len() == 2 {
                self.pending.remove(idx);
            }
        }
        Ok(())
    }

    fn run(&mut self) -> Result<(), SimError> {
        self.init()?;
        let instant = matches!(self.policy.trigger(), Trigger::Instant);
        while let Some(ev) = self.events.pop() {
            debug_assert!(ev.time >= self.now);
            if ev.time.as_ms() > self.cfg.horizon_ms {
                break;
            }
            self.now = ev.time;
            match ev.kind {
                EventKind::QueryArrival {
                    device,
                    tokens,
                    random_priority,
                } => {
                    self.on_arrival(device, tokens, random_priority)?;
                    if instant {
                        self.matching_round()?;
                    }
                }
                EventKind::ComputationDone { device, query } => {
                    self.on_done(device, query)?;
                    if instant {
                        self.matching_round()?;
                    }
                }
                EventKind::MatchTick => {
                    self.matching_round()?;
                    if let Trigger::Scheduled { period_ms } = self.policy.trigger() {
                        let next = self.now.plus(period_ms);
                        if next.as_ms() <= self.cfg.horizon_ms {
                            self.events.push(next, EventKind::MatchTick);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn report(self) -> SimulationReport {
        SimulationReport {
            seed: self.seed,
            issued: self.issued,
            completed: self.completed,
            pending_at_horizon: self.issued - self.completed,
            matching_rounds: self.rounds,
            skipped_decisions: self.skipped,
            threshold_deferrals: self.threshold_deferrals,
            verification_draws: self.verification_draws,
            verifications: self.verifications,
            probability_clamps: self.prob_clamps,
            flagged_queries: self.flagged,
            ledger_sum: self.ledger.sum(),
            ledger: self.ledger.iter().collect(),
            devices: self
                .devices
                .iter()
                .map(|d| DeviceInfo {
                    id: d.id,
                    perf: d.perf.get(),
                    is_server: d.is_server,
                    bad_actor: d.bad_actor,
                })
                .collect(),
            idle_seller_perf: self.idle_perf_hist,
        }
    }
}

/// Run one simulation, streaming completion records into `sink`.
pub fn run(
    cfg: &SimConfig,
    policy: &PolicyKind,
    seed: u64,
    sink: &mut impl RecordSink,
) -> Result<SimulationReport, SimError> {
    cfg.validate()?;
    policy.validate()?;
    let mut engine = Engine::new(cfg, policy, seed, sink);
    engine.run()?;
    Ok(engine.report())
}

/// Run one simulation and collect the records in completion order.
pub fn run_collect(
    cfg: &SimConfig,
    policy: &PolicyKind,
    seed: u64,
) -> Result<(SimulationReport, Vec<CompletionRecord>), SimError> {
    let mut collector = MetricsCollector::default();
    let report = run(cfg, policy, seed, &mut collector)?;
    Ok((report, collector.records))
}
