//! Simulation events and the deterministic event queue.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::device::DeviceId;
use crate::query::QueryId;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    /// A buyer issues a query. Payload was drawn when the event was scheduled
    /// so the arrival streams stay independent of policy.
    QueryArrival {
        device: DeviceId,
        tokens: u64,
        random_priority: f64,
    },
    /// A seller finishes its run of a query.
    ComputationDone { device: DeviceId, query: QueryId },
    /// Fixed-rate trigger for scheduled matchers.
    MatchTick,
}

#[derive(Debug, Clone)]
pub struct Event {
    pub time: SimTime,
    /// Tie-break: events at equal time are processed in scheduling order.
    pub seq: u64,
    pub kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; reverse for earliest-first.
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> EventQueue {
        EventQueue::default()
    }

    pub fn push(&mut self, time: SimTime, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { time, seq, kind });
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
