//! `alignui.toml`.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use alignui_core::llm::GatewayConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub bind: SocketAddr,
    /// Preference dataset JSON; the bundled dataset when unset.
    pub dataset: Option<PathBuf>,
    pub selections_log: PathBuf,
    pub n_runs: u32,
    /// Use the dataset-count fallback instead of calling a model.
    pub offline: bool,
    /// Seed for the withpref10 / withpref25 subsets.
    pub condition_seed: u64,
    /// Key mixed into participant hashes for study assignments.
    pub assignment_key: String,
    pub cors_allowlist: Vec<String>,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            dataset: None,
            selections_log: PathBuf::from("selections.jsonl"),
            n_runs: 10,
            offline: false,
            condition_seed: 2025,
            assignment_key: "alignui".into(),
            cors_allowlist: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub service: ServiceSection,
    pub gateway: GatewayConfig,
}

impl ServiceConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_path_buf(),
            source,
        })?;
        // Relative paths are relative to the config file.
        if let Some(base) = origin.parent() {
            let rebase = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            if let Some(d) = cfg.service.dataset.as_mut() {
                rebase(d);
            }
            rebase(&mut cfg.service.selections_log);
            if let Some(s) = cfg.gateway.mock_script.as_mut() {
                rebase(s);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// `path` if given, else `./alignui.toml` if present, else defaults.
    pub fn discover(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            Some(p) => Self::load(p),
            None => {
                let local = Path::new("alignui.toml");
                if local.exists() {
                    Self::load(local)
                } else {
                    Ok(Self::default())
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.service.n_runs == 0 {
            return Err(ConfigError::Invalid(
                "service.n_runs must be at least 1".into(),
            ));
        }
        if self.service.assignment_key.is_empty() {
            return Err(ConfigError::Invalid(
                "service.assignment_key must not be empty".into(),
            ));
        }
        Ok(())
    }
}
