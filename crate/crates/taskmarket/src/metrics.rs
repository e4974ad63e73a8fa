//! Completion records and the derived performance metrics.
//!
//! Per-record statistics (wait, saved, wasted, slow ratio) are taken over a
//! configurable trailing window; per-device net gains are cumulative over
//! the whole run. Wasted-time and net-loss figures are reported as negative
//! numbers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::DeviceId;
use crate::query::QueryId;
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serializing {what}: {source}")]
    Serialize {
        what: &'static str,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SellerStint {
    pub seller: DeviceId,
    pub start: SimTime,
    pub finish: SimTime,
}

/// Outcome of one completed query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub query: QueryId,
    pub buyer: DeviceId,
    pub tokens: u64,
    pub arrival: SimTime,
    pub completed: SimTime,
    /// `completed - arrival`: matching delay plus computation.
    pub wait_ms: u64,
    /// The buyer's sequential double run of the same task.
    pub baseline_ms: u64,
    /// `baseline - wait`; negative means the query was slow.
    pub gain_ms: i64,
    pub sellers: [SellerStint; 2],
}

/// Sink for completion records streamed out of the event loop.
pub trait RecordSink {
    fn record(&mut self, rec: CompletionRecord);
}

/// Keeps every record, in completion order.
#[derive(Debug, Default, Clone)]
pub struct MetricsCollector {
    pub records: Vec<CompletionRecord>,
}

impl RecordSink for MetricsCollector {
    fn record(&mut self, rec: CompletionRecord) {
        self.records.push(rec);
    }
}

/// Which trailing slice of completions the per-record statistics cover.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    All,
    Last(usize),
    /// Fraction of completions, rounded up, at least one.
    LastFraction(f64),
}

impl Window {
    fn slice<'a>(&self, records: &'a [CompletionRecord]) -> &'a [CompletionRecord] {
        let n = records.len();
        let keep = match *self {
            Window::All => n,
            Window::Last(k) => k.min(n),
            Window::LastFraction(f) => ((n as f64 * f).ceil() as usize).clamp(1.min(n), n),
        };
        &records[n - keep..]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub empty: bool,
    pub total_records: usize,
    pub window_records: usize,

    pub avg_wait_s: f64,
    pub max_wait_s: f64,
    /// Fraction of windowed queries strictly slower than their baseline.
    pub slow_ratio: f64,
    pub max_time_saved_s: f64,
    pub avg_time_saved_s: f64,
    /// Largest single loss, as a negative number (0 if none).
    pub max_time_wasted_s: f64,
    /// Mean over losing queries, negative (0 if none).
    pub avg_time_wasted_s: f64,
    /// Worst cumulative per-device net gain, negative (0 if none negative).
    pub max_net_loss_s: f64,
    pub devices_net_gain: usize,
    pub devices_net_loss: usize,

    pub verification_draws: u64,
    pub verifications: u64,
    pub probability_clamps: u64,
}

fn ms_to_s(ms: u64) -> f64 {
    ms as f64 / 1000.0
}

fn ms_i_to_s(ms: i64) -> f64 {
    ms as f64 / 1000.0
}

/// Cumulative net gain per buyer device, exact integer milliseconds.
pub fn per_device_net_gain(records: &[CompletionRecord]) -> BTreeMap<DeviceId, i64> {
    let mut net: BTreeMap<DeviceId, i64> = BTreeMap::new();
    for r in records {
        *net.entry(r.buyer).or_insert(0) += r.gain_ms;
    }
    net
}

pub fn summarize(records: &[CompletionRecord], window: Window) -> Summary {
    if records.is_empty() {
        return Summary {
            empty: true,
            total_records: 0,
            window_records: 0,
            avg_wait_s: 0.0,
            max_wait_s: 0.0,
            slow_ratio: 0.0,
            max_time_saved_s: 0.0,
            avg_time_saved_s: 0.0,
            max_time_wasted_s: 0.0,
            avg_time_wasted_s: 0.0,
            max_net_loss_s: 0.0,
            devices_net_gain: 0,
            devices_net_loss: 0,
            verification_draws: 0,
            verifications: 0,
            probability_clamps: 0,
        };
    }

    let win = window.slice(records);
    let mut wait_sum: u128 = 0;
    let mut max_wait: u64 = 0;
    let mut slow = 0usize;
    let mut saved_sum: i128 = 0;
    let mut saved_n = 0usize;
    let mut max_saved: i64 = 0;
    let mut wasted_sum: i128 = 0;
    let mut wasted_n = 0usize;
    let mut max_wasted: i64 = 0; // most negative gain

    for r in win {
        wait_sum += r.wait_ms as u128;
        max_wait = max_wait.max(r.wait_ms);
        if r.gain_ms < 0 {
            slow += 1;
            wasted_sum += r.gain_ms as i128;
            wasted_n += 1;
            max_wasted = max_wasted.min(r.gain_ms);
        } else if r.gain_ms > 0 {
            saved_sum += r.gain_ms as i128;
            saved_n += 1;
            max_saved = max_saved.max(r.gain_ms);
        }
    }

    let net = per_device_net_gain(records);
    let devices_net_gain = net.values().filter(|&&g| g > 0).count();
    let devices_net_loss = net.values().filter(|&&g| g < 0).count();
    let max_net_loss_ms = net.values().copied().min().unwrap_or(0).min(0);

    Summary {
        empty: false,
        total_records: records.len(),
        window_records: win.len(),
        avg_wait_s: wait_sum as f64 / win.len() as f64 / 1000.0,
        max_wait_s: ms_to_s(max_wait),
        slow_ratio: slow as f64 / win.len() as f64,
        max_time_saved_s: ms_i_to_s(max_saved),
        avg_time_saved_s: if saved_n > 0 {
            saved_sum as f64 / saved_n as f64 / 1000.0
        } else {
            0.0
        },
        max_time_wasted_s: ms_i_to_s(max_wasted),
        avg_time_wasted_s: if wasted_n > 0 {
            wasted_sum as f64 / wasted_n as f64 / 1000.0
        } else {
            0.0
        },
        max_net_loss_s: ms_i_to_s(max_net_loss_ms),
        devices_net_gain,
        devices_net_loss,
        verification_draws: 0,
        verifications: 0,
        probability_clamps: 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovingAvgPoint {
    pub start: usize,
    pub len: usize,
    pub mean_ms: f64,
    /// True for a trailing group smaller than the requested size.
    pub partial: bool,
}

/// Means over disjoint consecutive groups of `group` waits, in completion
/// order. A trailing partial group is emitted and flagged.
pub fn moving_average(waits_ms: &[u64], group: usize) -> Vec<MovingAvgPoint> {
    assert!(group >= 1, "group size must be at least 1");
    waits_ms
        .chunks(group)
        .enumerate()
        .map(|(i, chunk)| MovingAvgPoint {
            start: i * group,
            len: chunk.len(),
            mean_ms: chunk.iter().map(|&w| w as u128).sum::<u128>() as f64 / chunk.len() as f64,
            partial: chunk.len() < group,
        })
        .collect()
}

/// Fixed-width histogram with explicit out-of-range counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub bins: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Histogram {
        assert!(bins >= 1 && hi > lo);
        Histogram {
            lo,
            hi,
            bins: vec![0; bins],
            underflow: 0,
            overflow: 0,
        }
    }

    pub fn add(&mut self, v: f64) {
        if v < self.lo {
            self.underflow += 1;
        } else if v >= self.hi {
            self.overflow += 1;
        } else {
            let w = (self.hi - self.lo) / self.bins.len() as f64;
            let idx = (((v - self.lo) / w) as usize).min(self.bins.len() - 1);
            self.bins[idx] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().sum::<u64>() + self.underflow + self.overflow
    }

    pub fn bin_edges(&self, idx: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.bins.len() as f64;
        (self.lo + idx as f64 * w, self.lo + (idx + 1) as f64 * w)
    }
}

/// Everything exported for one run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub matcher: String,
    pub seed: u64,
    pub summary: Summary,
    pub records: Vec<CompletionRecord>,
    /// (device, perf, is_server, bad_actor)
    pub devices: Vec<(DeviceId, f64, bool, bool)>,
    pub ledger: Vec<(DeviceId, i64)>,
    pub idle_seller_perf: Histogram,
    pub moving_average_group: usize,
    pub wait_histogram_bins: usize,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), ExportError> {
    fs::write(path, contents).map_err(|source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Write the machine-readable summary plus the per-figure flat tables for
/// one run. Output is a deterministic function of the artifacts.
pub fn export_run(dir: &Path, art: &RunArtifacts) -> Result<(), ExportError> {
    fs::create_dir_all(dir).map_err(|source| ExportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;

    let summary_json = serde_json::to_vec_pretty(&art.summary).map_err(|source| {
        ExportError::Serialize {
            what: "summary",
            source,
        }
    })?;
    write_file(&dir.join("summary.json"), &summary_json)?;

    // Moving average of waits, in completion order.
    let waits: Vec<u64> = art.records.iter().map(|r| r.wait_ms).collect();
    let mut out = String::from("start,len,mean_ms,partial\n");
    for p in moving_average(&waits, art.moving_average_group) {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.start, p.len, p.mean_ms, p.partial
        ));
    }
    write_file(&dir.join("moving_avg.csv"), out.as_bytes())?;

    // Raw waits, completion order.
    let mut out = String::from("idx,wait_ms\n");
    for (i, w) in waits.iter().enumerate() {
        out.push_str(&format!("{i},{w}\n"));
    }
    write_file(&dir.join("waits.csv"), out.as_bytes())?;

    // Wait histogram.
    let max_wait = waits.iter().copied().max().unwrap_or(0);
    let mut hist = Histogram::new(0.0, (max_wait + 1) as f64, art.wait_histogram_bins);
    for &w in &waits {
        hist.add(w as f64);
    }
    write_file(&dir.join("wait_hist.csv"), hist_csv(&hist).as_bytes())?;

    // Idle seller performance histogram sampled during the run.
    write_file(
        &dir.join("idle_seller_perf_hist.csv"),
        hist_csv(&art.idle_seller_perf).as_bytes(),
    )?;

    // Time saved vs device performance, plus per-device slow ratio.
    let net = per_device_net_gain(&art.records);
    let mut slow: BTreeMap<DeviceId, (u64, u64)> = BTreeMap::new();
    for r in &art.records {
        let e = slow.entry(r.buyer).or_insert((0, 0));
        e.1 += 1;
        if r.gain_ms < 0 {
            e.0 += 1;
        }
    }
    let mut scatter = String::from("device,perf,net_gain_s\n");
    let mut ratios = String::from("device,queries,slow_queries,slow_ratio\n");
    for &(id, perf, is_server, _) in &art.devices {
        if is_server {
            continue;
        }
        if let Some(g) = net.get(&id) {
            scatter.push_str(&format!("{},{},{}\n", id.0, perf, ms_i_to_s(*g)));
        }
        if let Some(&(s, n)) = slow.get(&id) {
            ratios.push_str(&format!("{},{},{},{}\n", id.0, n, s, s as f64 / n as f64));
        }
    }
    write_file(&dir.join("scatter_time_saved.csv"), scatter.as_bytes())?;
    write_file(&dir.join("slow_ratio_per_device.csv"), ratios.as_bytes())?;

    // Final ledger.
    let mut out = String::from("device,credit\n");
    for (id, credit) in &art.ledger {
        out.push_str(&format!("{},{credit}\n", id.0));
    }
    write_file(&dir.join("ledger.csv"), out.as_bytes())?;

    Ok(())
}

fn hist_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    out.push_str(&format!("-inf,{},{}\n", h.lo, h.underflow));
    for (i, &c) in h.bins.iter().enumerate() {
        let (lo, hi) = h.bin_edges(i);
        out.push_str(&format!("{lo},{hi},{c}\n"));
    }
    out.push_str(&format!("{},+inf,{}\n", h.hi, h.overflow));
    out
}
