//! Experiment orchestration: matcher x seed sweeps, per-run exports and the
//! cross-matcher comparison table. The CLI is a thin shell over this module.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::metrics::{
    export_run, summarize, CompletionRecord, ExportError, RunArtifacts, Summary,
};
use crate::sim::{run_collect, PolicyKind, SimError, SimulationReport};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run {matcher} seed {seed}: {source}")]
    Run {
        matcher: String,
        seed: u64,
        #[source]
        source: SimError,
    },
    #[error(transparent)]
    Export(#[from] ExportError),
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub matcher: String,
    pub seed: u64,
    pub report: SimulationReport,
    pub records: Vec<CompletionRecord>,
    pub summary: Summary,
}

/// One comparison line per matcher: medians across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub matcher: String,
    pub seeds: usize,
    pub avg_wait_s: f64,
    pub max_wait_s: f64,
    pub max_time_saved_s: f64,
    pub avg_time_saved_s: f64,
    pub max_time_wasted_s: f64,
    pub avg_time_wasted_s: f64,
    pub slow_ratio: f64,
    pub max_net_loss_s: f64,
    pub completed: u64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunOutput>,
    pub comparison: Vec<ComparisonRow>,
}

/// Run one (matcher, seed) cell and summarize it with the experiment's
/// metrics window.
pub fn run_one(
    cfg: &ExperimentConfig,
    matcher: &str,
    policy: &PolicyKind,
    seed: u64,
) -> Result<RunOutput, ExperimentError> {
    let sim_cfg = cfg.to_sim_config();
    let (report, records) =
        run_collect(&sim_cfg, policy, seed).map_err(|source| ExperimentError::Run {
            matcher: matcher.to_string(),
            seed,
            source,
        })?;
    let mut summary = summarize(&records, cfg.window());
    summary.verification_draws = report.verification_draws;
    summary.verifications = report.verifications;
    summary.probability_clamps = report.probability_clamps;
    Ok(RunOutput {
        matcher: matcher.to_string(),
        seed,
        report,
        records,
        summary,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = values.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median-over-seeds rows, in the order matchers appear in the config.
pub fn comparison_rows(runs: &[RunOutput], matcher_order: &[String]) -> Vec<ComparisonRow> {
    matcher_order
        .iter()
        .map(|name| {
            let cells: Vec<&RunOutput> = runs.iter().filter(|r| &r.matcher == name).collect();
            let med = |f: &dyn Fn(&Summary) -> f64| {
                let mut v: Vec<f64> = cells.iter().map(|r| f(&r.summary)).collect();
                median(&mut v)
            };
            let mut completed: Vec<f64> = cells.iter().map(|r| r.report.completed as f64).collect();
            ComparisonRow {
                matcher: name.clone(),
                seeds: cells.len(),
                avg_wait_s: med(&|s| s.avg_wait_s),
                max_wait_s: med(&|s| s.max_wait_s),
                max_time_saved_s: med(&|s| s.max_time_saved_s),
                avg_time_saved_s: med(&|s| s.avg_time_saved_s),
                max_time_wasted_s: med(&|s| s.max_time_wasted_s),
                avg_time_wasted_s: med(&|s| s.avg_time_wasted_s),
                slow_ratio: med(&|s| s.slow_ratio),
                max_net_loss_s: med(&|s| s.max_net_loss_s),
                completed: median(&mut completed) as u64,
            }
        })
        .collect()
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(
        "matcher,seeds,avg_wait_s,max_wait_s,max_time_saved_s,avg_time_saved_s,\
         max_time_wasted_s,avg_time_wasted_s,slow_ratio,max_net_loss_s,completed\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.matcher,
            r.seeds,
            r.avg_wait_s,
            r.max_wait_s,
            r.max_time_saved_s,
            r.avg_time_saved_s,
            r.max_time_wasted_s,
            r.avg_time_wasted_s,
            r.slow_ratio,
            r.max_net_loss_s,
            r.completed
        );
    }
    out
}

pub fn comparison_text(rows: &[ComparisonRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<40} {:>10} {:>10} {:>12} {:>12} {:>13} {:>13} {:>11} {:>13}",
        "matcher",
        "AvgWait(s)",
        "MaxWait(s)",
        "MaxSaved(s)",
        "AvgSaved(s)",
        "MaxWasted(s)",
        "AvgWasted(s)",
        "SlowRatio",
        "MaxNetLoss(s)"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<40} {:>10.3} {:>10.3} {:>12.3} {:>12.3} {:>13.3} {:>13.3} {:>11.3e} {:>13.3}",
            r.matcher,
            r.avg_wait_s,
            r.max_wait_s,
            r.max_time_saved_s,
            r.avg_time_saved_s,
            r.max_time_wasted_s,
            r.avg_time_wasted_s,
            r.slow_ratio,
            r.max_net_loss_s
        );
    }
    out
}

/// Run every (matcher, seed) cell, optionally exporting per-run artifacts and
/// the comparison table under `out_dir`. Cells run in parallel; outputs come
/// back in deterministic (matcher, seed) order.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentOutcome, ExperimentError> {
    cfg.validate()?;
    let matchers = cfg.resolved_matchers()?;

    let cells: Vec<(String, PolicyKind, u64)> = matchers
        .iter()
        .flat_map(|(name, policy)| {
            cfg.seeds
                .iter()
                .map(move |&seed| (name.clone(), policy.clone(), seed))
        })
        .collect();

    let runs: Vec<RunOutput> = cells
        .par_iter()
        .map(|(name, policy, seed)| run_one(cfg, name, policy, *seed))
        .collect::<Result<_, _>>()?;

    if let Some(dir) = out_dir {
        for run in &runs {
            let run_dir = dir.join(&run.matcher).join(format!("seed_{}", run.seed));
            let artifacts = RunArtifacts {
                matcher: run.matcher.clone(),
                seed: run.seed,
                summary: run.summary.clone(),
                records: run.records.clone(),
                devices: run
                    .report
                    .devices
                    .iter()
                    .map(|d| (d.id, d.perf, d.is_server, d.bad_actor))
                    .collect(),
                ledger: run.report.ledger.clone(),
                idle_seller_perf: run.report.idle_seller_perf.clone(),
                moving_average_group: cfg.metrics.moving_average_group,
                wait_histogram_bins: cfg.metrics.histogram_bins,
            };
            export_run(&run_dir, &artifacts)?;
        }
    }

    let order: Vec<String> = matchers.iter().map(|(n, _)| n.clone()).collect();
    let comparison = comparison_rows(&runs, &order);

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|source| ExportError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        fs::write(dir.join("comparison.csv"), comparison_csv(&comparison)).map_err(|source| {
            ExportError::Io {
                path: dir.join("comparison.csv"),
                source,
            }
        })?;
        fs::write(dir.join("comparison.txt"), comparison_text(&comparison)).map_err(|source| {
            ExportError::Io {
                path: dir.join("comparison.txt"),
                source,
            }
        })?;
    }

    Ok(ExperimentOutcome { runs, comparison })
}
