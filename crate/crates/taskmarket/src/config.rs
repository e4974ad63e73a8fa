//! Experiment configuration: TOML schema, validation and matcher aliases.
//!
//! Defaults are the desk-scale setup: 2,000 devices, two 1,000 tokens/ms
//! servers, gaps uniform over an hour, performance uniform on [1, 100),
//! task sizes uniform on [10^4, 5*10^6) tokens, one simulated day.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::DistSpec;
use crate::distmatch::DistParams;
use crate::matching::{MatcherPolicy, Reorder, Select, Trigger};
use crate::metrics::Window;
use crate::sim::{EconomyParams, PolicyKind, SimConfig};
use crate::time::DAY_MS;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config at `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchingParams {
    /// Period for scheduled matchers, ms.
    pub scheduled_period_ms: u64,
    /// Skip probability applied by the `Selective*` aliases.
    pub skip_probability: f64,
    /// Exponential re-entry rate for the distributional matcher, 1/ms, or
    /// "auto" for 1 / mean(query_gap).
    pub distributional_alpha: AlphaChoice,
    /// Candidate pool cap per query for the distributional pair search.
    pub distributional_top_k: usize,
}

impl Default for MatchingParams {
    fn default() -> Self {
        MatchingParams {
            scheduled_period_ms: 1000,
            skip_probability: 0.5,
            distributional_alpha: AlphaChoice::Keyword("auto".into()),
            distributional_top_k: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaChoice {
    Rate(f64),
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EconomyConfig {
    pub epsilon: f64,
    pub quality_base: f64,
    pub quality_noise: f64,
    pub bad_actor_fraction: f64,
    pub bad_actor_penalty: f64,
    /// Minimum combined seller credit for a pair; omit to disable.
    pub credit_threshold: Option<i64>,
}

impl Default for EconomyConfig {
    fn default() -> Self {
        EconomyConfig {
            epsilon: 1e-6,
            quality_base: 100.0,
            quality_noise: 0.1,
            bad_actor_fraction: 0.0,
            bad_actor_penalty: 50.0,
            credit_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WindowChoice {
    Keyword(String),
    Fraction { fraction: f64 },
    Last { last: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Trailing window for per-record statistics.
    pub window: WindowChoice,
    pub moving_average_group: usize,
    pub histogram_bins: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            window: WindowChoice::Fraction { fraction: 0.25 },
            moving_average_group: 100,
            histogram_bins: 40,
        }
    }
}

/// A matcher by alias name, or spelled out in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatcherChoice {
    Alias(String),
    Custom(CustomMatcher),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomMatcher {
    pub name: String,
    pub trigger: CustomTrigger,
    /// Only meaningful with `trigger = "scheduled"`; defaults to the global
    /// scheduled period.
    #[serde(default)]
    pub period_ms: Option<u64>,
    pub reorder: Reorder,
    #[serde(default)]
    pub reversed: bool,
    pub select: Select,
    #[serde(default)]
    pub partial_matching: bool,
    #[serde(default)]
    pub skip_probability: f64,
    #[serde(default)]
    pub deadline_margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CustomTrigger {
    Instant,
    Scheduled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub devices: u32,
    pub servers: u32,
    pub server_perf: f64,
    pub horizon_ms: u64,
    pub seeds: Vec<u64>,
    pub matchers: Vec<MatcherChoice>,
    pub query_gap: DistSpec,
    pub perf: DistSpec,
    pub task_size: DistSpec,
    pub matching: MatchingParams,
    pub economy: EconomyConfig,
    pub metrics: MetricsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            devices: 2000,
            servers: 2,
            server_perf: 1000.0,
            horizon_ms: DAY_MS,
            seeds: vec![1, 2, 3, 4, 5],
            matchers: TABLE_ALIASES
                .iter()
                .map(|&(name, _)| MatcherChoice::Alias(name.into()))
                .collect(),
            query_gap: DistSpec::Uniform {
                lo: 0.0,
                hi: 3_600_000.0,
            },
            perf: DistSpec::Uniform { lo: 1.0, hi: 100.0 },
            task_size: DistSpec::Uniform {
                lo: 10_000.0,
                hi: 5_000_000.0,
            },
            matching: MatchingParams::default(),
            economy: EconomyConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

/// The comparison-table matcher lineup, canonical names paired with their
/// normalized lookup keys.
const TABLE_ALIASES: &[(&str, &str)] = &[
    ("InstantSPReversedImproved", "instantspreversedimproved"),
    ("InstantSPImproved", "instantspimproved"),
    ("InstantSP", "instantsp"),
    ("ScheduledSP", "scheduledsp"),
    ("ScheduledMinVar", "scheduledminvar"),
    (
        "SelectiveProbablisticScheduledGreedy",
        "selectiveprobablisticscheduledgreedy",
    ),
    ("InstantFIFO", "instantfifo"),
    ("InstantGreedy", "instantgreedy"),
];

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<ExperimentConfig, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        ExperimentConfig::from_toml_str(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.horizon_ms == 0 {
            return Err(invalid("horizon_ms", "must be positive"));
        }
        if self.servers > 0 && !(self.server_perf.is_finite() && self.server_perf > 0.0) {
            return Err(invalid("server_perf", "must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "need at least one seed"));
        }
        if self.matchers.is_empty() {
            return Err(invalid("matchers", "need at least one matcher"));
        }
        self.query_gap
            .validate(false)
            .map_err(|e| invalid("query_gap", e))?;
        self.perf.validate(true).map_err(|e| invalid("perf", e))?;
        self.task_size
            .validate(true)
            .map_err(|e| invalid("task_size", e))?;

        let m = &self.matching;
        if m.scheduled_period_ms == 0 {
            return Err(invalid("matching.scheduled_period_ms", "must be positive"));
        }
        if !(0.0..=1.0).contains(&m.skip_probability) {
            return Err(invalid("matching.skip_probability", "must be in [0, 1]"));
        }
        if m.distributional_top_k < 2 {
            return Err(invalid("matching.distributional_top_k", "must be at least 2"));
        }
        match &m.distributional_alpha {
            AlphaChoice::Rate(r) if r.is_nan() || *r <= 0.0 || r.is_infinite() => {
                return Err(invalid("matching.distributional_alpha", "rate must be positive"));
            }
            AlphaChoice::Keyword(k) if k != "auto" => {
                return Err(invalid(
                    "matching.distributional_alpha",
                    format!("unknown keyword {k:?}, expected \"auto\" or a rate"),
                ));
            }
            _ => {}
        }

        let e = &self.economy;
        if !(e.epsilon.is_finite() && e.epsilon > 0.0) {
            return Err(invalid("economy.epsilon", "must be positive"));
        }
        if !(e.quality_base.is_finite() && e.quality_base > 0.0) {
            return Err(invalid("economy.quality_base", "must be positive"));
        }
        if e.quality_noise < 0.0 {
            return Err(invalid("economy.quality_noise", "must be non-negative"));
        }
        if e.bad_actor_penalty < 0.0 {
            return Err(invalid("economy.bad_actor_penalty", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&e.bad_actor_fraction) {
            return Err(invalid("economy.bad_actor_fraction", "must be in [0, 1]"));
        }

        let mm = &self.metrics;
        if mm.moving_average_group == 0 {
            return Err(invalid("metrics.moving_average_group", "must be at least 1"));
        }
        if mm.histogram_bins == 0 {
            return Err(invalid("metrics.histogram_bins", "must be at least 1"));
        }
        match &mm.window {
            WindowChoice::Keyword(k) if k != "all" => {
                return Err(invalid(
                    "metrics.window",
                    format!("unknown keyword {k:?}, expected \"all\", {{ fraction }} or {{ last }}"),
                ));
            }
            WindowChoice::Fraction { fraction } if !(fraction.is_finite() && *fraction > 0.0 && *fraction <= 1.0) => {
                return Err(invalid("metrics.window.fraction", "must be in (0, 1]"));
            }
            _ => {}
        }

        // Every matcher entry must resolve.
        for choice in &self.matchers {
            self.resolve_matcher(choice)?;
        }
        Ok(())
    }

    pub fn window(&self) -> Window {
        match &self.metrics.window {
            WindowChoice::Keyword(_) => Window::All,
            WindowChoice::Fraction { fraction } => Window::LastFraction(*fraction),
            WindowChoice::Last { last } => Window::Last(*last),
        }
    }

    pub fn to_sim_config(&self) -> SimConfig {
        SimConfig {
            devices: self.devices,
            servers: self.servers,
            server_perf: self.server_perf,
            query_gap: self.query_gap,
            perf: self.perf,
            task_size: self.task_size,
            horizon_ms: self.horizon_ms,
            economy: EconomyParams {
                epsilon: self.economy.epsilon,
                quality: crate::economy::QualityModel {
                    base: self.economy.quality_base,
                    noise: self.economy.quality_noise,
                    bad_actor_penalty: self.economy.bad_actor_penalty,
                },
                bad_actor_fraction: self.economy.bad_actor_fraction,
                credit_threshold: self.economy.credit_threshold,
            },
        }
    }

    pub fn distributional_alpha(&self) -> f64 {
        match &self.matching.distributional_alpha {
            AlphaChoice::Rate(r) => *r,
            AlphaChoice::Keyword(_) => {
                let mean = self.query_gap.mean();
                if mean > 0.0 {
                    1.0 / mean
                } else {
                    1.0
                }
            }
        }
    }

    /// Expand one matcher entry into its canonical name and policy.
    pub fn resolve_matcher(
        &self,
        choice: &MatcherChoice,
    ) -> Result<(String, PolicyKind), ConfigError> {
        match choice {
            MatcherChoice::Alias(name) => self.resolve_alias(name),
            MatcherChoice::Custom(c) => {
                let trigger = match c.trigger {
                    CustomTrigger::Instant => Trigger::Instant,
                    CustomTrigger::Scheduled => Trigger::Scheduled {
                        period_ms: c.period_ms.unwrap_or(self.matching.scheduled_period_ms),
                    },
                };
                let policy = MatcherPolicy {
                    trigger,
                    reorder: c.reorder,
                    reversed: c.reversed,
                    select: c.select,
                    partial_matching: c.partial_matching,
                    skip_probability: c.skip_probability,
                    deadline_margin: c.deadline_margin,
                };
                policy
                    .validate()
                    .map_err(|e| invalid(&format!("matchers.{}", c.name), e))?;
                Ok((c.name.clone(), PolicyKind::Heuristic(policy)))
            }
        }
    }

    fn resolve_alias(&self, name: &str) -> Result<(String, PolicyKind), ConfigError> {
        let mut key = name.to_ascii_lowercase();
        if let Some(stripped) = key.strip_suffix("matcher") {
            key = stripped.to_string();
        }
        // Tolerate the common spelling of "Probablistic".
        let key = key.replace("probabilistic", "probablistic");
        let period = self.matching.scheduled_period_ms;
        let skip = self.matching.skip_probability;

        let heuristic = |trigger, reorder, reversed, select, partial, skip_probability, deadline_margin| {
            PolicyKind::Heuristic(MatcherPolicy {
                trigger,
                reorder,
                reversed,
                select,
                partial_matching: partial,
                skip_probability,
                deadline_margin,
            })
        };
        let scheduled = Trigger::Scheduled { period_ms: period };

        let policy = match key.as_str() {
            "instantfifo" => heuristic(
                Trigger::Instant,
                Reorder::Fifo,
                false,
                Select::Fifo,
                false,
                0.0,
                0.0,
            ),
            "instantgreedy" => heuristic(
                Trigger::Instant,
                Reorder::Fifo,
                false,
                Select::GreedyFastest,
                false,
                0.0,
                0.0,
            ),
            "instantsp" => heuristic(
                Trigger::Instant,
                Reorder::HardestToFulfill,
                false,
                Select::SpSlowestOnTime,
                false,
                0.0,
                0.0,
            ),
            "instantspimproved" => heuristic(
                Trigger::Instant,
                Reorder::HardestToFulfill,
                false,
                Select::SpSlowestOnTime,
                true,
                0.0,
                0.0,
            ),
            "instantspreversedimproved" => heuristic(
                Trigger::Instant,
                Reorder::HardestToFulfill,
                true,
                Select::SpSlowestOnTime,
                true,
                0.0,
                0.0,
            ),
            "scheduledsp" => heuristic(
                scheduled,
                Reorder::HardestToFulfill,
                false,
                Select::SpSlowestOnTime,
                false,
                0.0,
                0.0,
            ),
            "scheduledminvar" | "scheduledminvariance" => heuristic(
                scheduled,
                Reorder::MinVariance,
                false,
                Select::GreedyFastest,
                false,
                0.0,
                0.0,
            ),
            "selectivescheduledminvar" | "selectivescheduledminvariance" => heuristic(
                scheduled,
                Reorder::MinVariance,
                false,
                Select::GreedyFastest,
                false,
                skip,
                0.0,
            ),
            "selectiveprobablisticscheduledgreedy" | "selectivescheduledgreedy" => heuristic(
                scheduled,
                Reorder::Fifo,
                false,
                Select::GreedyFastest,
                false,
                skip,
                0.0,
            ),
            "distributional" => PolicyKind::Distributional(DistParams {
                alpha: self.distributional_alpha(),
                top_k: self.matching.distributional_top_k,
            }),
            _ => {
                return Err(invalid(
                    "matchers",
                    format!("unknown matcher alias {name:?}"),
                ))
            }
        };
        let canonical = TABLE_ALIASES
            .iter()
            .find(|&&(_, k)| k == key)
            .map(|&(n, _)| n.to_string())
            .unwrap_or_else(|| match key.as_str() {
                "distributional" => "Distributional".to_string(),
                "scheduledminvariance" => "ScheduledMinVar".to_string(),
                "selectivescheduledminvar" | "selectivescheduledminvariance" => {
                    "SelectiveScheduledMinVar".to_string()
                }
                "selectivescheduledgreedy" => "SelectiveProbablisticScheduledGreedy".to_string(),
                _ => name.to_string(),
            });
        Ok((canonical, policy))
    }

    /// Canonical `(name, policy)` list for this experiment.
    pub fn resolved_matchers(&self) -> Result<Vec<(String, PolicyKind)>, ConfigError> {
        self.matchers
            .iter()
            .map(|c| self.resolve_matcher(c))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.devices, 2000);
        assert_eq!(cfg.servers, 2);
        assert_eq!(cfg.resolved_matchers().unwrap().len(), 8);
    }

    #[test]
    fn empty_file_is_desk_scale() {
        let cfg = ExperimentConfig::from_toml_str("", Path::new("empty.toml")).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn alias_instantfifo_expands_to_fifo_fifo() {
        let cfg = ExperimentConfig::default();
        let (name, policy) = cfg
            .resolve_matcher(&MatcherChoice::Alias("InstantFIFO".into()))
            .unwrap();
        assert_eq!(name, "InstantFIFO");
        match policy {
            PolicyKind::Heuristic(p) => {
                assert_eq!(p.trigger, Trigger::Instant);
                assert_eq!(p.reorder, Reorder::Fifo);
                assert_eq!(p.select, Select::Fifo);
                assert!(!p.partial_matching);
                assert_eq!(p.skip_probability, 0.0);
            }
            _ => panic!("expected heuristic"),
        }
    }

    #[test]
    fn alias_variants_resolve() {
        let cfg = ExperimentConfig::default();
        for (name, partial, reversed) in [
            ("InstantSP", false, false),
            ("InstantSPImproved", true, false),
            ("InstantSPReversedImproved", true, true),
        ] {
            let (canon, policy) = cfg
                .resolve_matcher(&MatcherChoice::Alias(name.into()))
                .unwrap();
            assert_eq!(canon, name);
            match policy {
                PolicyKind::Heuristic(p) => {
                    assert_eq!(p.reorder, Reorder::HardestToFulfill);
                    assert_eq!(p.select, Select::SpSlowestOnTime);
                    assert_eq!(p.partial_matching, partial);
                    assert_eq!(p.reversed, reversed);
                }
                _ => panic!("expected heuristic"),
            }
        }
        // Suffixed / respelled forms land on the canonical names.
        let (canon, _) = cfg
            .resolve_matcher(&MatcherChoice::Alias("InstantFIFOMatcher".into()))
            .unwrap();
        assert_eq!(canon, "InstantFIFO");
        let (canon, p) = cfg
            .resolve_matcher(&MatcherChoice::Alias(
                "SelectiveProbabilisticScheduledGreedy".into(),
            ))
            .unwrap();
        assert_eq!(canon, "SelectiveProbablisticScheduledGreedy");
        match p {
            PolicyKind::Heuristic(p) => assert_eq!(p.skip_probability, 0.5),
            _ => panic!(),
        }
        assert!(cfg
            .resolve_matcher(&MatcherChoice::Alias("NoSuchThing".into()))
            .is_err());
    }

    #[test]
    fn full_scale_values_parse() {
        let text = r#"
            devices = 100000
            servers = 2
            server_perf = 1000.0

            [query_gap]
            kind = "uniform"
            lo = 0.0
            hi = 3600000.0

            [perf]
            kind = "uniform"
            lo = 1.0
            hi = 100.0

            [task_size]
            kind = "uniform"
            lo = 10000.0
            hi = 5000000.0
        "#;
        let cfg = ExperimentConfig::from_toml_str(text, Path::new("full.toml")).unwrap();
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
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml_str("devicess = 5", Path::new("x.toml"));
        assert!(matches!(err, Err(ConfigError::Parse { .. })));
        let err = ExperimentConfig::from_toml_str(
            "[economy]\nnot_a_key = 1",
            Path::new("x.toml"),
        );
        assert!(matches!(err, Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn bad_distribution_rejected_with_key_path() {
        let err = ExperimentConfig::from_toml_str(
            "[perf]\nkind = \"uniform\"\nlo = 100.0\nhi = 1.0",
            Path::new("x.toml"),
        )
        .unwrap_err();
        match err {
            ConfigError::Invalid { key, .. } => assert_eq!(key, "perf"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn custom_matcher_parses() {
        let text = r#"
            matchers = [
                "InstantGreedy",
                { name = "slow-tick", trigger = "scheduled", period_ms = 5000, reorder = "min_variance", select = "greedy_fastest" },
            ]
        "#;
        let cfg = ExperimentConfig::from_toml_str(text, Path::new("x.toml")).unwrap();
        let resolved = cfg.resolved_matchers().unwrap();
        assert_eq!(resolved[1].0, "slow-tick");
        match &resolved[1].1 {
            PolicyKind::Heuristic(p) => {
                assert_eq!(p.trigger, Trigger::Scheduled { period_ms: 5000 });
                assert_eq!(p.reorder, Reorder::MinVariance);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn auto_alpha_is_reciprocal_mean_gap() {
        let cfg = ExperimentConfig::default();
        let alpha = cfg.distributional_alpha();
        assert!((alpha - 1.0 / 1_800_000.0).abs() < 1e-15);
    }

    #[test]
    fn window_choices_map() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(cfg.window(), Window::LastFraction(0.25));
        cfg.metrics.window = WindowChoice::Keyword("all".into());
        assert_eq!(cfg.window(), Window::All);
        cfg.metrics.window = WindowChoice::Last { last: 250_000 };
        assert_eq!(cfg.window(), Window::Last(250_000));
        cfg.metrics.window = WindowChoice::Keyword("sometimes".into());
        assert!(cfg.validate().is_err());
    }
}
