use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::llm::ProviderConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timeouts {
    /// Inactivity allowed while verdicts are awaited.
    #[serde(default = "ten_minutes")]
    pub verdict_secs: u64,
    /// Inactivity allowed while rejectors owe feedback.
    #[serde(default = "ten_minutes")]
    pub feedback_secs: u64,
    /// Inactivity allowed while opinions are collected; unlimited when unset.
    #[serde(default)]
    pub opinion_secs: Option<u64>,
    /// How often the server looks for expired or stalled sessions.
    #[serde(default = "default_sweep")]
    pub sweep_secs: u64,
}

fn ten_minutes() -> u64 {
    600
}

fn default_sweep() -> u64 {
    5
}

impl Default for Timeouts {
    fn default() -> Self {
        Self {
            verdict_secs: ten_minutes(),
            feedback_secs: ten_minutes(),
            opinion_secs: None,
            sweep_secs: default_sweep(),
        }
    }
}

impl Timeouts {
    pub fn verdict(&self) -> Duration {
        Duration::from_secs(self.verdict_secs)
    }

    pub fn feedback(&self) -> Duration {
        Duration::from_secs(self.feedback_secs)
    }

    pub fn opinion(&self) -> Option<Duration> {
        self.opinion_secs.map(Duration::from_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_max_iterations")]
    pub default_max_iterations: u32,
    #[serde(default = "default_min_participants")]
    pub min_participants: u32,
    #[serde(default = "default_max_participants")]
    pub max_participants: u32,
    /// Redact other participants' feedback texts in snapshots and streams.
    #[serde(default)]
    pub hide_feedback: bool,
    /// Environment variable holding the token for `POST /questions`.
    #[serde(default)]
    pub admin_token_env: Option<String>,
    #[serde(default)]
    pub timeouts: Timeouts,
    #[serde(default)]
    pub providers: Vec<ProviderConfig>,
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

fn default_listen() -> String {
    "127.0.0.1:8080".to_owned()
}

fn default_max_iterations() -> u32 {
    5
}

fn default_min_participants() -> u32 {
    2
}

fn default_max_participants() -> u32 {
    8
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_dir: default_data_dir(),
            listen: default_listen(),
            default_max_iterations: default_max_iterations(),
            min_participants: default_min_participants(),
            max_participants: default_max_participants(),
            hide_feedback: false,
            admin_token_env: None,
            timeouts: Timeouts::default(),
            providers: vec![ProviderConfig::scripted("scripted")],
        }
    }
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut config = Self::from_toml_str(&text)?;
        // relative paths are taken relative to the config file
        if let Some(base) = path.parent() {
            if config.data_dir.is_relative() {
                config.data_dir = base.join(&config.data_dir);
            }
            for p in &mut config.providers {
                if let Some(script) = p.script.as_mut().filter(|s| s.is_relative()) {
                    *script = base.join(&*script);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.default_max_iterations == 0 {
            return invalid("default_max_iterations must be at least 1".into());
        }
        if self.min_participants < 1 || self.min_participants > self.max_participants {
            return invalid(format!(
                "participant range {}..={} is empty",
                self.min_participants, self.max_participants
            ));
        }
        if self.providers.is_empty() {
            return invalid("at least one provider is required".into());
        }
        let mut ids: Vec<&str> = self.providers.iter().map(|p| p.provider_id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return invalid(format!("duplicate provider id {:?}", w[0]));
        }
        Ok(())
    }
}
