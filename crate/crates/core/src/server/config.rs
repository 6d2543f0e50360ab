//! Server configuration: one TOML file, overridable from the environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const ENV_LISTEN: &str = "GEAR_LISTEN";
pub const ENV_ADMIN_TOKEN: &str = "GEAR_ADMIN_TOKEN";
pub const ENV_OVERDUE_MULTIPLIER: &str = "GEAR_OVERDUE_MULTIPLIER";
pub const ENV_STORE: &str = "GEAR_STORE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: String,
    pub admin_token: Option<String>,
    /// A source is overdue once `multiplier * expected interval` has passed
    /// since its latest measurement. New campaigns start with this value.
    pub overdue_multiplier: f64,
    /// SQLite file; `None` keeps everything in memory.
    pub store: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            admin_token: None,
            overdue_multiplier: 2.0,
            store: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{var}: {message}")]
    Env { var: &'static str, message: String },
}

impl ServerConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Apply overrides from a variable lookup (normally `std::env::var`).
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = get(ENV_LISTEN) {
            self.listen = v;
        }
        if let Some(v) = get(ENV_ADMIN_TOKEN) {
            self.admin_token = Some(v);
        }
        if let Some(v) = get(ENV_OVERDUE_MULTIPLIER) {
            self.overdue_multiplier = v.parse().map_err(|_| ConfigError::Env {
                var: ENV_OVERDUE_MULTIPLIER,
                message: format!("not a number: {v:?}"),
            })?;
        }
        if let Some(v) = get(ENV_STORE) {
            self.store = Some(PathBuf::from(v));
        }
        Ok(())
    }

    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_overrides_file() {
        let mut cfg: ServerConfig = toml::from_str("listen = \"0.0.0.0:9000\"\noverdue_multiplier = 3.0\n").unwrap();
        cfg.apply_env(|k| (k == ENV_OVERDUE_MULTIPLIER).then(|| "1.5".to_string())).unwrap();
        assert_eq!(cfg.listen, "0.0.0.0:9000");
        assert_eq!(cfg.overdue_multiplier, 1.5);
        assert!(cfg.apply_env(|_| Some("x".into())).is_err());
        assert!(toml::from_str::<ServerConfig>("bogus = 1").is_err());
    }
}
