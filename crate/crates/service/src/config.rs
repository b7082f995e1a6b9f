use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const ENV_CONFIG: &str = "FEATSEARCH_CONFIG";
pub const ENV_PORT: &str = "FEATSEARCH_PORT";
pub const DEFAULT_PORT: u16 = 8080;

/// One mounted store. One store holds one (model, layer) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MountConfig {
    pub name: String,
    pub store_path: PathBuf,
    /// Directory of original images, used for thumbnails and mask-size checks.
    #[serde(default)]
    pub image_dir: Option<PathBuf>,
    /// Stores whose decoded size fits are held in memory; larger ones are
    /// streamed from disk on every search.
    #[serde(default)]
    pub ram_budget_mb: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub stores: Vec<MountConfig>,
    #[serde(default)]
    pub port: Option<u16>,
    /// Allowed CORS origin for the web UI; any origin when unset.
    #[serde(default)]
    pub cors_origin: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: ServiceConfig =
            serde_json::from_slice(&bytes).map_err(|source| ConfigError::Parse {
                path: path.to_path_buf(),
                source,
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut names = std::collections::HashSet::new();
        for m in &self.stores {
            if m.name.is_empty() || m.name.contains('/') {
                return Err(ConfigError::Invalid(format!("bad store name {:?}", m.name)));
            }
            if !names.insert(m.name.as_str()) {
                return Err(ConfigError::Invalid(format!("store {} mounted twice", m.name)));
            }
        }
        Ok(())
    }

    /// Port precedence: explicit argument, then `FEATSEARCH_PORT`, then the
    /// config file, then the default.
    pub fn resolve_port(&self, explicit: Option<u16>) -> Result<u16, ConfigError> {
        if let Some(p) = explicit {
            return Ok(p);
        }
        if let Ok(v) = std::env::var(ENV_PORT) {
            return v
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{ENV_PORT}={v:?} is not a port")));
        }
        Ok(self.port.unwrap_or(DEFAULT_PORT))
    }
}
