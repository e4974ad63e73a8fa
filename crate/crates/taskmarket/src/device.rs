//! Devices: participants with fixed performance and a market lifecycle.

use serde::{Deserialize, Serialize};

use crate::query::QueryId;
use crate::time::{DomainError, DurationMs, SimTime};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct DeviceId(pub u32);

impl DeviceId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Device performance in tokens per millisecond. Positive by construction.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Perf(f64);

impl Perf {
    pub fn new(tokens_per_ms: f64) -> Result<Perf, DomainError> {
        if !(tokens_per_ms.is_finite() && tokens_per_ms > 0.0) {
            return Err(DomainError(format!(
                "perf must be positive and finite, got {tokens_per_ms}"
            )));
        }
        Ok(Perf(tokens_per_ms))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// One full run of a `tokens`-sized task on this device, whole ms.
    pub fn compute_ms(self, tokens: u64) -> DurationMs {
        (tokens as f64 / self.0).ceil() as DurationMs
    }
}

/// Where a device currently stands in the market.
///
/// `WaitingBuyer` means the device has an open query and is offering itself
/// as a seller while it waits. `Idle` is a pool member without an open query
/// (servers between tasks). `ComputingSeller` devices are pool members bound
/// to someone's task; `Absent` devices are out of the market until their next
/// query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceState {
    Absent,
    WaitingBuyer,
    ComputingSeller,
    Idle,
}

#[derive(Debug, Clone)]
pub struct Device {
    pub id: DeviceId,
    pub perf: Perf,
    pub is_server: bool,
    pub bad_actor: bool,
    pub state: DeviceState,
    pub busy_until: Option<SimTime>,
    pub computing: Option<QueryId>,
    pub open_query: Option<QueryId>,
    /// Pool membership ticket; `Some` iff the device is currently sharing.
    pub join_seq: Option<u64>,
    /// Queries issued so far; indexes this device's draw streams.
    pub queries_made: u64,
    /// Result-quality draws consumed so far.
    pub quality_draws: u64,
}

impl Device {
    pub fn new(id: DeviceId, perf: Perf, is_server: bool) -> Device {
        Device {
            id,
            perf,
            is_server,
            bad_actor: false,
            state: DeviceState::Absent,
            busy_until: None,
            computing: None,
            open_query: None,
            join_seq: None,
            queries_made: 0,
            quality_draws: 0,
        }
    }

    /// Remaining busy time: `busy_until - now` while computing, else 0.
    pub fn time_until_idle(&self, now: SimTime) -> DurationMs {
        debug_assert!(self.state != DeviceState::Absent);
        match self.busy_until {
            Some(t) => t.since(now),
            None => 0,
        }
    }

    /// In the pool and free to start a task right now.
    pub fn is_available_seller(&self) -> bool {
        matches!(self.state, DeviceState::WaitingBuyer | DeviceState::Idle)
            && self.join_seq.is_some()
            && self.computing.is_none()
    }

    pub fn in_pool(&self) -> bool {
        self.join_seq.is_some()
    }
}
