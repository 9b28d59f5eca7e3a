//! Run configuration: defaults, then a TOML file, then `key.path=value` overrides.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tasks::TaskSpec;
use crate::catalog::InitialSkill;
use crate::env::DEFAULT_PEER_TIMEOUT;
use crate::executor::{ExecutorConfig, Provider, SkillMode};
use crate::gateway::GatewayConfig;
use crate::microworld::TaskFamily;
use crate::trajectory::DEFAULT_HORIZON;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    NoSkill,
    StaticSkill,
    SkillUnaware,
    #[default]
    SkillAware,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::NoSkill, Mode::StaticSkill, Mode::SkillUnaware, Mode::SkillAware];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::NoSkill => "no_skill",
            Mode::StaticSkill => "static_skill",
            Mode::SkillUnaware => "skill_unaware",
            Mode::SkillAware => "skill_aware",
        }
    }

    pub fn skill_mode(self) -> SkillMode {
        match self {
            Mode::NoSkill => SkillMode::None,
            Mode::StaticSkill => SkillMode::Static,
            Mode::SkillUnaware | Mode::SkillAware => SkillMode::Evolving,
        }
    }

    pub fn evolves(self) -> bool {
        self.skill_mode() == SkillMode::Evolving
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (expected one of no_skill, static_skill, skill_unaware, skill_aware)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionSource {
    #[default]
    Oracle,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevisionSource {
    #[default]
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub reflection: ReflectionSource,
    pub revision: RevisionSource,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentConfig {
    /// In-process micro-world.
    #[default]
    Microworld,
    /// A peer process speaking the JSON-lines protocol on stdin/stdout.
    Subprocess {
        command: Vec<String>,
        #[serde(default = "default_peer_timeout")]
        timeout_secs: f64,
    },
}

fn default_peer_timeout() -> f64 {
    DEFAULT_PEER_TIMEOUT.as_secs_f64()
}

impl EnvironmentConfig {
    pub fn peer_timeout(&self) -> Duration {
        match self {
            EnvironmentConfig::Microworld => DEFAULT_PEER_TIMEOUT,
            EnvironmentConfig::Subprocess { timeout_secs, .. } => Duration::from_secs_f64(*timeout_secs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub master_seed: u64,
    pub mode: Mode,
    /// K: reflections kept per trajectory.
    pub max_reflections: usize,
    /// B: buffered signals that trigger one revision.
    pub revision_interval: usize,
    /// N: revisions to run.
    pub stage_count: usize,
    pub horizon: usize,
    pub initial_skill: InitialSkill,
    /// Guard against a stream that stops producing reflections.
    pub max_train_episodes: usize,
    /// Evaluate after every revision; otherwise only baseline and final.
    pub eval_every_stage: bool,
    pub train: TaskSpec,
    pub test: TaskSpec,
    pub executor: ExecutorConfig,
    pub providers: ProviderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gateway: Option<GatewayConfig>,
    pub environment: EnvironmentConfig,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            mode: Mode::SkillAware,
            max_reflections: 1,
            revision_interval: crate::revision::DEFAULT_INTERVAL,
            stage_count: 10,
            horizon: DEFAULT_HORIZON,
            initial_skill: InitialSkill::Seeded,
            max_train_episodes: 50_000,
            eval_every_stage: true,
            train: TaskSpec {
                families: TaskFamily::ALL.to_vec(),
                per_family: 40,
                first_seed: 0,
            },
            test: TaskSpec {
                families: TaskFamily::ALL.to_vec(),
                per_family: 20,
                first_seed: 100_000,
            },
            executor: ExecutorConfig::default(),
            providers: ProviderConfig::default(),
            gateway: None,
            environment: EnvironmentConfig::Microworld,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("override {entry:?}: {message}")]
    Override { entry: String, message: String },
    #[error("invalid config at `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Reads `raw` as a TOML value, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, entry: &str) -> Result<(), ConfigError> {
    let fail = |message: &str| ConfigError::Override {
        entry: entry.to_string(),
        message: message.to_string(),
    };
    let (path, raw) = entry.split_once('=').ok_or_else(|| fail("expected key.path=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(fail("empty key segment"));
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut node = table;
    for key in parents {
        node = match node
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        {
            toml::Value::Table(t) => t,
            _ => return Err(fail(&format!("`{key}` is not a table"))),
        };
    }
    node.insert(last.to_string(), override_value(raw.trim()));
    Ok(())
}

impl EvolutionConfig {
    /// Defaults < file < overrides, then validated.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = toml::Table::try_from(Self::default()).expect("defaults serialize");
        let source = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                let top: toml::Table = toml::from_str(&text).map_err(|e| ConfigError::Parse {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                merge(&mut table, top);
                path.display().to_string()
            }
            None => "<defaults>".to_string(),
        };
        for entry in overrides {
            apply_override(&mut table, entry)?;
        }
        let config: Self = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
            path: source,
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config.resolved())
    }

    /// This config with `overrides` applied on top, then validated.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        for entry in overrides {
            apply_override(&mut table, entry)?;
        }
        let config: Self = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
            path: "<overrides>".to_string(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config.resolved())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<string>".into(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config.resolved())
    }

    /// The executor's skill mode follows the run mode.
    pub fn resolved(mut self) -> Self {
        self.executor.skill_mode = self.mode.skill_mode();
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn uses_gateway(&self) -> bool {
        self.providers.reflection == ReflectionSource::Remote
            || self.providers.revision == RevisionSource::Remote
            || self.executor.provider == Provider::RemoteModel
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.revision_interval == 0 {
            return Err(invalid("revision_interval", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        for (name, spec) in [("train", &self.train), ("test", &self.test)] {
            spec.validate().map_err(|m| invalid(name, m))?;
        }
        if self.train.overlaps(&self.test) {
            return Err(invalid("test.first_seed", "train and test seed ranges overlap"));
        }
        self.executor.validate().map_err(|m| invalid("executor", m))?;
        match (&self.gateway, self.uses_gateway()) {
            (None, true) => return Err(invalid("gateway", "remote providers need a [gateway] section")),
            (Some(g), _) => g.validate().map_err(|m| invalid("gateway", m))?,
            _ => {}
        }
        if let EnvironmentConfig::Subprocess { command, timeout_secs } = &self.environment {
            if command.is_empty() {
                return Err(invalid("environment.command", "must name a program"));
            }
            if !(timeout_secs.is_finite() && *timeout_secs > 0.0) {
                return Err(invalid("environment.timeout_secs", "must be positive"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = EvolutionConfig::default();
        assert_eq!(EvolutionConfig::from_toml_str(&c.to_toml()).unwrap(), c.resolved());
    }

    #[test]
    fn file_then_flags_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "stage_count = 3\nmaster_seed = 9\n[executor]\nlapse_rate = 0.3\n").unwrap();
        let c = EvolutionConfig::load(Some(&path), &["stage_count=5".into(), "mode=static_skill".into()]).unwrap();
        assert_eq!(c.stage_count, 5);
        assert_eq!(c.master_seed, 9);
        assert_eq!(c.executor.lapse_rate, 0.3);
        assert_eq!(c.executor.appendix_damping, 0.25);
        assert_eq!(c.mode, Mode::StaticSkill);
        assert_eq!(c.executor.skill_mode, SkillMode::Static);
    }

    #[test]
    fn unknown_fields_and_bad_values_are_rejected() {
        assert!(matches!(
            EvolutionConfig::load(None, &["stage_cuont=3".into()]),
            Err(ConfigError::Parse { .. })
        ));
        assert!(matches!(
            EvolutionConfig::load(None, &["executor.lapse_rate=2.0".into()]),
            Err(ConfigError::Invalid { .. })
        ));
        assert!(matches!(
            EvolutionConfig::load(None, &["test.first_seed=10".into()]),
            Err(ConfigError::Invalid { field, .. }) if field == "test.first_seed"
        ));
        assert!(matches!(
            EvolutionConfig::load(None, &["providers.reflection=remote".into()]),
            Err(ConfigError::Invalid { field, .. }) if field == "gateway"
        ));
        assert!(matches!(EvolutionConfig::load(None, &["novalue".into()]), Err(ConfigError::Override { .. })));
    }

    #[test]
    fn string_overrides_need_no_quotes() {
        let c = EvolutionConfig::load(None, &["initial_skill=complete".into(), "train.families=[\"put\"]".into()]).unwrap();
        assert_eq!(c.initial_skill, InitialSkill::Complete);
        assert_eq!(c.train.families, vec![TaskFamily::Put]);
    }
}
