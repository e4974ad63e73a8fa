//! Queries: computation tasks issued by buyers, each run by two sellers.

use serde::{Deserialize, Serialize};

use crate::device::DeviceId;
use crate::time::SimTime;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct QueryId(pub u64);

impl QueryId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One seller's run of a query, scheduled in full at bind time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub seller: DeviceId,
    pub start: SimTime,
    pub finish: SimTime,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct Query {
    pub id: QueryId,
    pub buyer: DeviceId,
    pub tokens: u64,
    pub arrival: SimTime,
    /// At most two; the query completes when both have finished.
    pub assignments: Vec<Assignment>,
    pub completed_at: Option<SimTime>,
}

impl Query {
    pub fn new(id: QueryId, buyer: DeviceId, tokens: u64, arrival: SimTime) -> Query {
        Query {
            id,
            buyer,
            tokens,
            arrival,
            assignments: Vec::new(),
            completed_at: None,
        }
    }

    pub fn slots_bound(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_fully_assigned(&self) -> bool {
        self.assignments.len() == 2
    }

    pub fn all_done(&self) -> bool {
        self.assignments.len() == 2 && self.assignments.iter().all(|a| a.done)
    }
}
