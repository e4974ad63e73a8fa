//! Command-line front end: load a config, sweep matchers x seeds, write
//! per-run artifacts and the comparison table.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use taskmarket::config::{ExperimentConfig, MatcherChoice};
use taskmarket::distmatch;
use taskmarket::experiment::{comparison_text, run_experiment};

#[derive(Debug, Parser)]
#[command(
    name = "taskmarket",
    about = "Discrete-event simulator for a peer-to-peer compute exchange market",
    version
)]
struct Cli {
    /// Experiment config (TOML). Without it, desk-scale defaults apply.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Matcher name or alias; repeat for several. Overrides the config list.
    #[arg(long = "matcher", value_name = "NAME")]
    matchers: Vec<String>,

    /// Root seed; repeat for several. Overrides the config list.
    #[arg(long = "seed", value_name = "N")]
    seeds: Vec<u64>,

    /// Number of non-server devices.
    #[arg(long, value_name = "N")]
    devices: Option<u32>,

    /// Simulation horizon in milliseconds.
    #[arg(long, value_name = "MS")]
    horizon: Option<u64>,

    /// Output directory for per-run artifacts and the comparison table.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Check the closed-form expected-wait formulas against Monte Carlo
    /// sampling before simulating.
    #[arg(long)]
    check: bool,
}

fn oracle_check() -> Result<(), String> {
    eprintln!("expected-wait oracle: 20 triples per case, 1e6 samples each");
    let checks = distmatch::oracle_suite(1_000_000, 20, 0xC0FFEE);
    let mut failures = 0;
    for c in &checks {
        let status = if c.pass { "ok " } else { "FAIL" };
        eprintln!(
            "  [{status}] {:<16} c1={:9.2} c2={:9.2} alpha={:.3e} closed={:12.4} mc={:12.4} rel_err={:.2e}",
            c.case, c.c1, c.c2, c.alpha, c.closed_form, c.monte_carlo, c.rel_err
        );
        if !c.pass {
            failures += 1;
        }
    }
    if failures > 0 {
        Err(format!("{failures} oracle checks failed"))
    } else {
        eprintln!("expected-wait oracle: all checks passed");
        Ok(())
    }
}

fn real_main() -> Result<(), String> {
    let cli = Cli::parse();

    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path).map_err(|e| e.to_string())?,
        None => ExperimentConfig::default(),
    };
    if !cli.matchers.is_empty() {
        cfg.matchers = cli
            .matchers
            .iter()
            .map(|m| MatcherChoice::Alias(m.clone()))
            .collect();
    }
    if !cli.seeds.is_empty() {
        cfg.seeds = cli.seeds.clone();
    }
    if let Some(devices) = cli.devices {
        cfg.devices = devices;
    }
    if let Some(horizon) = cli.horizon {
        cfg.horizon_ms = horizon;
    }
    cfg.validate().map_err(|e| e.to_string())?;

    if cli.check {
        oracle_check()?;
    }

    let outcome = run_experiment(&cfg, Some(&cli.out)).map_err(|e| e.to_string())?;
    for run in &outcome.runs {
        eprintln!(
            "{:<40} seed={:<3} completed={:<8} pending={:<6} avg_wait={:.3}s slow_ratio={:.3e} ledger_sum={}",
            run.matcher,
            run.seed,
            run.report.completed,
            run.report.pending_at_horizon,
            run.summary.avg_wait_s,
            run.summary.slow_ratio,
            run.report.ledger_sum,
        );
    }
    println!("{}", comparison_text(&outcome.comparison));
    println!("artifacts written to {}", cli.out.display());
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
