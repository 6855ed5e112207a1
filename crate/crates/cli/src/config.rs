//! Run configuration, read from TOML.

use std::path::Path;

use lease_audit_core::ifrs16::MeasurementParams;
use lease_audit_core::journal::JournalFormat;
use lease_audit_core::scenario::ScenarioSpec;
use lease_audit_core::{LearningParams, MatchLevel, RewardParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSection {
    pub level: MatchLevel,
    /// Per-department step cap; derived from the grid size when absent.
    pub max_steps: Option<usize>,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        Self {
            level: MatchLevel::Exchange,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Account-code prefixes that mark cash-outflow accounts.
    #[serde(default = "default_prefixes")]
    pub account_prefixes: Vec<String>,
    #[serde(default)]
    pub journal: JournalFormat,
    #[serde(default)]
    pub reward: RewardParams,
    #[serde(default)]
    pub learning: LearningParams,
    #[serde(default)]
    pub episode: EpisodeSection,
    /// Falls back to the defaults with the transition at the audit period start.
    #[serde(default)]
    pub measurement: Option<MeasurementParams>,
    /// Input to `generate`.
    #[serde(default)]
    pub scenario: Option<ScenarioSpec>,
}

fn default_seed() -> u64 {
    42
}

fn default_prefixes() -> Vec<String> {
    vec!["51".into()]
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            account_prefixes: default_prefixes(),
            journal: JournalFormat::default(),
            reward: RewardParams::default(),
            learning: LearningParams::default(),
            episode: EpisodeSection::default(),
            measurement: None,
            scenario: None,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub level: Option<MatchLevel>,
    pub episodes: Option<usize>,
}

impl AuditConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(vec![e.message().to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
        Self::from_toml(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(level) = o.level {
            self.episode.level = level;
        }
        if let Some(episodes) = o.episodes {
            self.learning.episodes = episodes;
        }
    }

    /// Checks every section and reports each problem with its field path.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        let mut section = |name: &str, r: lease_audit_core::Result<()>| {
            if let Err(e) = r {
                let text = e.to_string();
                let detail = text.split_once(": ").map_or(text.as_str(), |(_, d)| d);
                for part in detail.split("; ") {
                    problems.push(format!("{name}.{part}"));
                }
            }
        };
        section("reward", self.reward.validate());
        section("learning", self.learning.validate());
        if let Some(m) = &self.measurement {
            section("measurement", m.validate());
        }
        if self.account_prefixes.is_empty() {
            problems.push("account_prefixes must not be empty".into());
        }
        if self.account_prefixes.iter().any(|p| p.is_empty()) {
            problems.push("account_prefixes must not contain an empty prefix".into());
        }
        if self.episode.max_steps == Some(0) {
            problems.push("episode.max_steps must be > 0".into());
        }
        if self.journal.decimal_scale > 6 {
            problems.push("journal.decimal_scale must be <= 6".into());
        }
        if !self.journal.delimiter.is_ascii() {
            problems.push("journal.delimiter must be a single ASCII character".into());
        }
        if let Some(period) = &self.journal.audit_period {
            if period.start > period.end {
                problems.push("journal.audit_period ends before it starts".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems))
        }
    }

    pub fn measurement_params(&self) -> MeasurementParams {
        match (self.measurement, &self.journal.audit_period) {
            (Some(m), _) => m,
            (None, Some(period)) => MeasurementParams::for_period(period),
            (None, None) => MeasurementParams::default(),
        }
    }

    /// Hex SHA-256 of the effective configuration in canonical JSON.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Seed for one department, derived from the run seed and the code.
    pub fn department_seed(&self, department: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(department.as_bytes());
        let out = h.finalize();
        u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = AuditConfig::from_toml("").unwrap();
        assert_eq!(c, AuditConfig::default());
        assert_eq!(c.episode.level, MatchLevel::Exchange);
        c.validate().unwrap();
    }

    #[test]
    fn sections_parse() {
        let c = AuditConfig::from_toml(
            r#"
seed = 7
account_prefixes = ["51", "53"]
[journal]
decimal_scale = 0
audit_period = { start = "2019-01-01", end = "2019-12-31" }
[learning]
episodes = 50
memory_enabled = false
[episode]
level = 1
max_steps = 30
[measurement]
discount_rate_per_period = 0.0
"#,
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.learning.episodes, 50);
        assert_eq!(c.episode.level, MatchLevel::Regular);
        assert_eq!(c.measurement_params().discount_rate_per_period, 0.0);
        assert_eq!(c.journal.decimal_scale, 0);
    }

    #[test]
    fn field_level_messages() {
        let mut c = AuditConfig::default();
        c.learning.alpha = 0.0;
        c.learning.episodes = 0;
        c.reward.cv_max = -1.0;
        c.account_prefixes.clear();
        let Err(CliError::Config(problems)) = c.validate() else {
            panic!("expected a config error");
        };
        assert!(problems.iter().any(|p| p.starts_with("learning.alpha")));
        assert!(problems.iter().any(|p| p.starts_with("learning.episodes")));
        assert!(problems.iter().any(|p| p.starts_with("reward.cv_max")));
        assert!(problems.iter().any(|p| p.starts_with("account_prefixes")));
    }

    #[test]
    fn unknown_fields_and_bad_levels_are_config_errors() {
        assert!(matches!(
            AuditConfig::from_toml("sed = 1"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            AuditConfig::from_toml("[episode]\nlevel = 3"),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn overrides_change_the_digest() {
        let mut c = AuditConfig::default();
        let before = c.digest();
        assert_eq!(before.len(), 64);
        c.apply(&Overrides {
            seed: Some(9),
            ..Default::default()
        });
        assert_ne!(c.digest(), before);
        assert_ne!(c.department_seed("D01"), c.department_seed("D02"));
    }
}
