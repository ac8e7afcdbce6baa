//! Deployment configuration, loaded from a TOML file at startup.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ArchiveError, Result};
use crate::license::License;
use crate::model::{Community, CommunityKind, UserAccount};

pub const DEFAULT_QUOTA_BYTES: u64 = 100 * 1_000_000_000;
pub const DEFAULT_SALT_PERIOD_HOURS: u32 = 24;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentConfig {
    #[serde(default = "default_display_name")]
    pub display_name: String,
    /// Public base URL; share links are `<base_url>/records/<id>?token=<token>`.
    #[serde(default = "default_base_url")]
    pub base_url: String,
    #[serde(default = "default_listen")]
    pub listen: String,
    pub data_dir: PathBuf,
    #[serde(default = "default_quota")]
    pub quota_bytes: u64,
    #[serde(default)]
    pub quota_overrides: BTreeMap<String, u64>,
    #[serde(default = "default_salt_period")]
    pub salt_period_hours: u32,
    #[serde(default)]
    pub cidr_table: Option<PathBuf>,
    /// Use the first `X-Forwarded-For` entry as the remote address.
    #[serde(default)]
    pub trust_forwarded_for: bool,
    pub communities: Vec<CommunityConfig>,
    #[serde(default)]
    pub users: Vec<UserConfig>,
    #[serde(default)]
    pub licenses: Vec<License>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommunityConfig {
    pub slug: String,
    pub display_name: String,
    pub kind: CommunityKind,
    #[serde(default)]
    pub managers: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    pub user_id: String,
    pub email: String,
    #[serde(default = "yes")]
    pub email_confirmed: bool,
    #[serde(default)]
    pub memberships: Vec<String>,
}

fn default_display_name() -> String {
    "Consortium Archive".into()
}
fn default_base_url() -> String {
    "http://localhost:8080".into()
}
fn default_listen() -> String {
    "127.0.0.1:8080".into()
}
fn default_quota() -> u64 {
    DEFAULT_QUOTA_BYTES
}
fn default_salt_period() -> u32 {
    DEFAULT_SALT_PERIOD_HOURS
}
fn yes() -> bool {
    true
}

impl DeploymentConfig {
    /// A configuration with only the mandatory umbrella community.
    pub fn new(data_dir: impl Into<PathBuf>, umbrella_slug: &str) -> Self {
        DeploymentConfig {
            display_name: default_display_name(),
            base_url: default_base_url(),
            listen: default_listen(),
            data_dir: data_dir.into(),
            quota_bytes: DEFAULT_QUOTA_BYTES,
            quota_overrides: BTreeMap::new(),
            salt_period_hours: DEFAULT_SALT_PERIOD_HOURS,
            cidr_table: None,
            trust_forwarded_for: false,
            communities: vec![CommunityConfig {
                slug: umbrella_slug.into(),
                display_name: umbrella_slug.into(),
                kind: CommunityKind::Umbrella,
                managers: vec![],
            }],
            users: vec![],
            licenses: vec![],
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative paths resolve against the config file's directory.
        if let Some(dir) = path.parent() {
            if cfg.data_dir.is_relative() {
                cfg.data_dir = dir.join(&cfg.data_dir);
            }
            if let Some(t) = cfg.cidr_table.as_mut() {
                if t.is_relative() {
                    *t = dir.join(&*t);
                }
            }
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: DeploymentConfig =
            toml::from_str(text).map_err(|e| ArchiveError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        let umbrellas = self
            .communities
            .iter()
            .filter(|c| c.kind == CommunityKind::Umbrella)
            .count();
        if umbrellas != 1 {
            return Err(ArchiveError::Config(format!(
                "exactly one umbrella community required, found {umbrellas}"
            )));
        }
        let mut slugs = BTreeSet::new();
        for c in &self.communities {
            if c.slug.is_empty()
                || !c.slug.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
            {
                return Err(ArchiveError::Config(format!("invalid community slug {:?}", c.slug)));
            }
            if !slugs.insert(c.slug.as_str()) {
                return Err(ArchiveError::Config(format!("duplicate community slug {}", c.slug)));
            }
        }
        let mut ids = BTreeSet::new();
        for u in &self.users {
            if !ids.insert(u.user_id.as_str()) {
                return Err(ArchiveError::Config(format!("duplicate user {}", u.user_id)));
            }
            for m in &u.memberships {
                if !slugs.contains(m.as_str()) {
                    return Err(ArchiveError::Config(format!(
                        "user {} references unknown community {m}",
                        u.user_id
                    )));
                }
            }
        }
        if self.salt_period_hours == 0 {
            return Err(ArchiveError::Config("salt_period_hours must be positive".into()));
        }
        Ok(())
    }

    pub fn umbrella(&self) -> &CommunityConfig {
        self.communities
            .iter()
            .find(|c| c.kind == CommunityKind::Umbrella)
            .expect("checked at load")
    }

    pub fn community_list(&self) -> Vec<Community> {
        self.communities
            .iter()
            .map(|c| Community {
                slug: c.slug.clone(),
                display_name: c.display_name.clone(),
                kind: c.kind,
            })
            .collect()
    }

    pub fn is_manager(&self, slug: &str, user: &str) -> bool {
        self.communities
            .iter()
            .any(|c| c.slug == slug && c.managers.iter().any(|m| m == user))
    }

    /// Effective per-record storage limit.
    pub fn quota_for(&self, record_id: &str) -> u64 {
        self.quota_overrides
            .get(record_id)
            .copied()
            .unwrap_or(self.quota_bytes)
    }

    /// Seed accounts with the project => umbrella closure applied.
    pub fn seed_users(&self) -> Vec<UserAccount> {
        let umbrella = self.umbrella().slug.clone();
        self.users
            .iter()
            .map(|u| {
                let mut memberships: BTreeSet<String> = u.memberships.iter().cloned().collect();
                if !memberships.is_empty() {
                    memberships.insert(umbrella.clone());
                }
                UserAccount {
                    user_id: u.user_id.clone(),
                    email: u.email.clone(),
                    email_confirmed: u.email_confirmed,
                    memberships,
                }
            })
            .collect()
    }
}
