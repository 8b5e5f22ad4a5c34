//! Service configuration, read from TOML.
//!
//! ```toml
//! [server]
//! host = "127.0.0.1"
//! port = 8080
//! cors_origin = "http://localhost:5173"
//!
//! [data]
//! train = "train.csv"
//! holdout = "holdout.csv"
//! review = "review.csv"
//!
//! [log]
//! path = "interventions.jsonl"
//!
//! [policy]
//! retrain_every_n = 10
//!
//! [train]
//! max_depth = 6
//! ```
//!
//! Relative paths resolve against the directory of the config file.
//! `CYTOTUNE_PORT` overrides `server.port`.

use std::path::{Path, PathBuf};

use cytotune_core::{AdaptationPolicy, FeatureSchema, TrainConfig};
use serde::{Deserialize, Serialize};

pub const PORT_ENV: &str = "CYTOTUNE_PORT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub host: String,
    pub port: u16,
    /// Allowed browser origin; `"*"` allows any.
    pub cors_origin: Option<String>,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            cors_origin: Some("http://localhost:5173".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: PathBuf,
    pub holdout: Option<PathBuf>,
    pub review: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogSection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default)]
    pub server: ServerSection,
    pub data: DataSection,
    pub log: LogSection,
    #[serde(default)]
    pub policy: AdaptationPolicy,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub schema: FeatureSchema,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{PORT_ENV}=`{0}` is not a port number")]
    BadPortOverride(String),
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path`, resolves relative data and log paths against its
    /// directory, and applies the port override from the environment.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        config.apply_port_override(std::env::var(PORT_ENV).ok().as_deref())?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.train);
        self.data.holdout.as_mut().map(fix);
        self.data.review.as_mut().map(fix);
        fix(&mut self.log.path);
    }

    pub fn apply_port_override(&mut self, value: Option<&str>) -> Result<(), ConfigError> {
        if let Some(v) = value {
            self.server.port = v
                .trim()
                .parse()
                .map_err(|_| ConfigError::BadPortOverride(v.to_string()))?;
        }
        Ok(())
    }
}
