//! Deterministic discrete-event simulator and policy library for a
//! peer-to-peer computational-resource exchange market.
//!
//! Buyers submit computation tasks sized in tokens; every task is run twice.
//! While a buyer waits on its own query it also offers its device as a
//! seller, alongside a small number of dedicated servers. Pluggable matchers
//! bind each query to a pair of sellers, a zero-sum credit ledger settles
//! every completed query by result quality, and the metrics pipeline tracks
//! how much time participants save (or lose) versus computing alone.
//!
//! Everything is a pure function of `(config, seed)`: one root seed feeds
//! per-purpose substreams so that runs are reproducible byte-for-byte and
//! policies can be compared against identical arrival processes.

pub mod config;
pub mod device;
pub mod dist;
pub mod distmatch;
pub mod economy;
pub mod event;
pub mod experiment;
pub mod matching;
pub mod metrics;
pub mod query;
pub mod rng;
pub mod sim;
pub mod time;

pub use config::{ExperimentConfig, MatcherChoice};
pub use device::{Device, DeviceId, DeviceState, Perf};
pub use matching::{MatchDecision, MatcherPolicy, Reorder, Select, Trigger};
pub use metrics::{CompletionRecord, Summary};
pub use query::{Query, QueryId};
pub use sim::{PolicyKind, SimConfig, SimulationReport};
pub use time::{compute_time, DurationMs, SimTime, DAY_MS};
