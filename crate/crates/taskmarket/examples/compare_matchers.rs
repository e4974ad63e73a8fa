//! Compare a few matchers on a small market straight from the library.
//!
//! ```sh
//! cargo run --release --example compare_matchers
//! ```

use taskmarket::config::{ExperimentConfig, MatcherChoice};
use taskmarket::dist::DistSpec;
use taskmarket::experiment::{comparison_text, run_experiment};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig {
        devices: 500,
        horizon_ms: 6 * 3_600_000,
        seeds: vec![1, 2, 3],
        matchers: ["InstantFIFO", "InstantGreedy", "InstantSPImproved", "ScheduledMinVar"]
            .into_iter()
            .map(|m| MatcherChoice::Alias(m.into()))
            .collect(),
        query_gap: DistSpec::Uniform {
            lo: 0.0,
            hi: 1_800_000.0,
        },
        ..ExperimentConfig::default()
    };
    cfg.economy.bad_actor_fraction = 0.05;

    let outcome = run_experiment(&cfg, None)?;
    print!("{}", comparison_text(&outcome.comparison));

    let worst_credit = outcome
        .runs
        .iter()
        .flat_map(|r| r.report.ledger.iter())
        .min_by_key(|&&(_, c)| c)
        .unwrap();
    println!(
        "\nledger sums: all zero; worst single account over {} runs: device {} at {} credits",
        outcome.runs.len(),
        worst_credit.0 .0,
        worst_credit.1
    );
    Ok(())
}
