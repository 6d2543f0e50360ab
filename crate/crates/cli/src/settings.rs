//! Global settings. Command-line flags win over environment variables,
//! which win over the config file.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Table,
    Csv,
}

/// Contents of the optional `gearctl.toml`.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub server_url: Option<String>,
    pub admin_token_file: Option<PathBuf>,
    pub ledger: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub format: Option<Format>,
    /// Base of activation links when it differs from the server URL.
    pub link_base: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum SettingsError {
    #[error("config {path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("no admin token: pass --admin-token-file or set GEARCTL_ADMIN_TOKEN_FILE")]
    NoAdminToken,
    #[error("admin token file {path}: {message}")]
    TokenFile { path: PathBuf, message: String },
    #[error("no server: pass --server-url, or --store to work on a local store file")]
    NoServer,
    #[error("no ledger: pass --ledger or set GEARCTL_LEDGER")]
    NoLedger,
}

/// Settings after merging all sources.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub server_url: Option<String>,
    pub admin_token_file: Option<PathBuf>,
    pub ledger: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub format: Format,
    pub link_base: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, SettingsError> {
        let err = |message: String| SettingsError::File {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        toml::from_str(&text).map_err(|e| err(e.to_string()))
    }
}

impl Settings {
    /// `flags` already hold flag-or-env values (clap resolves that order);
    /// gaps are filled from the config file.
    pub fn merge(flags: FileConfig, file: FileConfig) -> Self {
        Self {
            server_url: flags.server_url.or(file.server_url),
            admin_token_file: flags.admin_token_file.or(file.admin_token_file),
            ledger: flags.ledger.or(file.ledger),
            store: flags.store.or(file.store),
            format: flags.format.or(file.format).unwrap_or_default(),
            link_base: flags.link_base.or(file.link_base),
        }
    }

    /// Read the admin token. Fails before anything touches the server.
    pub fn admin_token(&self) -> Result<String, SettingsError> {
        let path = self.admin_token_file.as_ref().ok_or(SettingsError::NoAdminToken)?;
        let err = |message: String| SettingsError::TokenFile {
            path: path.clone(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let token = text.trim();
        if token.is_empty() {
            return Err(err("file is empty".into()));
        }
        Ok(token.to_string())
    }

    pub fn ledger_path(&self) -> Result<&Path, SettingsError> {
        self.ledger.as_deref().ok_or(SettingsError::NoLedger)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file() {
        let flags = FileConfig {
            server_url: Some("http://flag".into()),
            ..FileConfig::default()
        };
        let file: FileConfig = toml::from_str(
            "server_url = \"http://file\"\nledger = \"/tmp/l.csv\"\nformat = \"csv\"\n",
        )
        .unwrap();
        let s = Settings::merge(flags, file);
        assert_eq!(s.server_url.as_deref(), Some("http://flag"));
        assert_eq!(s.ledger.as_deref(), Some(Path::new("/tmp/l.csv")));
        assert_eq!(s.format, Format::Csv);
        assert!(toml::from_str::<FileConfig>("colour = 1").is_err());
    }

    #[test]
    fn token_file_is_trimmed_and_required() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("token");
        std::fs::write(&p, "  s3cret\n").unwrap();
        let mut s = Settings::default();
        assert!(matches!(s.admin_token(), Err(SettingsError::NoAdminToken)));
        s.admin_token_file = Some(p.clone());
        assert_eq!(s.admin_token().unwrap(), "s3cret");
        std::fs::write(&p, "\n").unwrap();
        assert!(s.admin_token().is_err());
    }
}
