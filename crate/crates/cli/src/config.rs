//! Client configuration: command-line flag > environment variable > config file.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub const ENV_URL: &str = "ARCHIVE_URL";
pub const ENV_TOKEN: &str = "ARCHIVE_TOKEN";
pub const ENV_COMMUNITY: &str = "ARCHIVE_COMMUNITY";
pub const ENV_CONFIG: &str = "ARCHIVE_CONFIG";

/// Values from one source; unset fields fall through to the next source.
#[derive(Clone, Default)]
pub struct Sources {
    pub server_url: Option<String>,
    pub token: Option<String>,
    pub default_community: Option<String>,
    pub config_path: Option<PathBuf>,
}

impl Sources {
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        Sources {
            server_url: var(ENV_URL),
            token: var(ENV_TOKEN),
            default_community: var(ENV_COMMUNITY),
            config_path: var(ENV_CONFIG).map(PathBuf::from),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    server_url: Option<String>,
    token: Option<String>,
    default_community: Option<String>,
}

#[derive(Clone, Default)]
pub struct ClientConfig {
    pub server_url: Option<String>,
    bearer_token: Option<String>,
    pub default_community: Option<String>,
}

impl fmt::Debug for ClientConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClientConfig")
            .field("server_url", &self.server_url)
            .field("bearer_token", &self.bearer_token.as_ref().map(|_| "<redacted>"))
            .field("default_community", &self.default_community)
            .finish()
    }
}

/// `$XDG_CONFIG_HOME/archive/config.toml`, else `~/.config/archive/config.toml`.
pub fn default_config_path() -> Option<PathBuf> {
    let base = std::env::var_os("XDG_CONFIG_HOME")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or_else(|| std::env::var_os("HOME").map(|h| Path::new(&h).join(".config")))?;
    Some(base.join("archive").join("config.toml"))
}

fn read_file(path: &Path, explicit: bool) -> CliResult<ConfigFile> {
    match std::fs::read_to_string(path) {
        Ok(text) => toml::from_str(&text).map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound && !explicit => Ok(ConfigFile::default()),
        Err(e) => Err(CliError::Usage(format!("config file {}: {e}", path.display()))),
    }
}

impl ClientConfig {
    pub fn new(server_url: impl Into<String>, token: Option<String>) -> Self {
        ClientConfig {
            server_url: Some(server_url.into()),
            bearer_token: token,
            default_community: None,
        }
    }

    /// Merges the sources in precedence order.
    pub fn resolve(flags: &Sources, env: &Sources) -> CliResult<Self> {
        let explicit = flags.config_path.clone().or_else(|| env.config_path.clone());
        let file = match (&explicit, default_config_path()) {
            (Some(p), _) => read_file(p, true)?,
            (None, Some(p)) => read_file(&p, false)?,
            (None, None) => ConfigFile::default(),
        };
        let pick = |f: &Option<String>, e: &Option<String>, c: Option<String>| f.clone().or_else(|| e.clone()).or(c);
        Ok(ClientConfig {
            server_url: pick(&flags.server_url, &env.server_url, file.server_url)
                .map(|u| u.trim_end_matches('/').to_string()),
            bearer_token: pick(&flags.token, &env.token, file.token).filter(|t| !t.is_empty()),
            default_community: pick(&flags.default_community, &env.default_community, file.default_community),
        })
    }

    pub fn token(&self) -> Option<&str> {
        self.bearer_token.as_deref()
    }

    pub fn require_token(&self) -> CliResult<&str> {
        self.token().ok_or_else(|| {
            CliError::Auth(format!("no bearer token configured (use --token, {ENV_TOKEN} or the config file)"))
        })
    }

    pub fn require_url(&self) -> CliResult<&str> {
        self.server_url
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("no server URL configured (use --url, {ENV_URL} or the config file)")))
    }
}
