//! The configs shipped in the repository parse and carry the documented
//! experiment parameters.

use std::path::Path;

use taskmarket::config::ExperimentConfig;
use taskmarket::dist::DistSpec;
use taskmarket::economy::{perplexity, validate_model, TopicModel};
use taskmarket::time::DAY_MS;

fn config_path(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

#[test]
fn full_scale_config_carries_the_published_parameters() {
    let cfg = ExperimentConfig::from_file(&config_path("full_scale.toml")).unwrap();
    assert_eq!(cfg.devices, 100_000);
    assert_eq!(cfg.servers, 2);
    assert_eq!(cfg.server_perf, 1000.0);
    assert_eq!(cfg.horizon_ms, DAY_MS);
    assert_eq!(
        cfg.query_gap,
        DistSpec::Uniform { lo: 0.0, hi: 3_600_000.0 }
    );
    assert_eq!(cfg.perf, DistSpec::Uniform { lo: 1.0, hi: 100.0 });
    assert_eq!(
        cfg.task_size,
        DistSpec::Uniform { lo: 10_000.0, hi: 5_000_000.0 }
    );
}

#[test]
fn desk_config_matches_the_defaults_plus_bad_actors() {
    let cfg = ExperimentConfig::from_file(&config_path("desk.toml")).unwrap();
    let mut expected = ExperimentConfig::default();
    expected.economy.bad_actor_fraction = 0.05;
    assert_eq!(cfg, expected);
    assert_eq!(cfg.resolved_matchers().unwrap().len(), 8);
}

#[test]
fn corpus_file_round_trips_through_the_evaluator() {
    let text = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/corpus.txt"),
    )
    .unwrap();
    let docs = taskmarket::economy::parse_corpus(&text).unwrap();
    assert_eq!(docs.len(), 4);

    // Uniform model over the 8-token vocabulary scores exactly 8.
    let model = TopicModel {
        theta: docs.iter().map(|_| vec![1.0]).collect(),
        phi: vec![vec![0.125; 8]],
    };
    assert!(validate_model(&model, 1e-9).unwrap());
    let p = perplexity(&docs, &model).unwrap();
    assert!((p.ln() - 8f64.ln()).abs() < 1e-9);
}
