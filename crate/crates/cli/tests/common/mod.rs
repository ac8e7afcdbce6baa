#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::Arc;

use archive_core::archive::Archive;
use archive_core::config::{CommunityConfig, DeploymentConfig, UserConfig};
use archive_core::model::CommunityKind;
use archive_server::BackgroundServer;

pub const UMBRELLA: &str = "consortium";

/// One archive instance served over HTTP on a free local port.
pub struct Instance {
    pub server: BackgroundServer,
    pub archive: Arc<Archive>,
    /// Bearer secret per user id.
    pub tokens: BTreeMap<String, String>,
    pub dir: tempfile::TempDir,
}

impl Instance {
    pub fn start(projects: &[&str], users: &[(&str, &[&str])], quota: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = DeploymentConfig::new(dir.path(), UMBRELLA);
        cfg.display_name = "Test Archive".into();
        cfg.base_url = "http://archive.test".into();
        cfg.quota_bytes = quota;
        for p in projects {
            cfg.communities.push(CommunityConfig {
                slug: (*p).into(),
                display_name: p.to_uppercase(),
                kind: CommunityKind::Project,
                managers: vec![],
            });
        }
        for (id, memberships) in users {
            cfg.users.push(UserConfig {
                user_id: (*id).into(),
                email: format!("{id}@example.org"),
                email_confirmed: true,
                memberships: memberships.iter().map(|m| m.to_string()).collect(),
            });
        }
        let archive = Arc::new(Archive::open(cfg).unwrap());
        let tokens = users
            .iter()
            .map(|(u, _)| (u.to_string(), archive.mint_api_token(u, "cli-test").unwrap().secret))
            .collect();
        let server = BackgroundServer::start(archive.clone()).unwrap();
        Instance { server, archive, tokens, dir }
    }

    pub fn url(&self) -> String {
        self.server.url()
    }

    pub fn token(&self, user: &str) -> &str {
        &self.tokens[user]
    }

    /// Runs the client as `user` (anonymous when `None`) against this instance.
    pub fn cli(&self, user: Option<&str>, args: &[&str]) -> Outcome {
        let mut env = vec![("ARCHIVE_URL", self.url())];
        if let Some(u) = user {
            env.push(("ARCHIVE_TOKEN", self.token(u).to_string()));
        }
        run_cli(args, &env)
    }

    /// Overwrites a stored blob in place, keeping its length.
    pub fn corrupt_blob(&self, content_ref: &str) {
        let path = self.archive.files().blob_path(content_ref);
        let mut perms = std::fs::metadata(&path).unwrap().permissions();
        #[allow(clippy::permissions_set_readonly_false)]
        perms.set_readonly(false);
        std::fs::set_permissions(&path, perms).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        for b in bytes.iter_mut() {
            *b ^= 0x5a;
        }
        if bytes.is_empty() {
            bytes.push(0);
        }
        std::fs::write(&path, bytes).unwrap();
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Outcome {
    pub fn ok(&self) -> &str {
        assert_eq!(self.code, 0, "stderr: {}", self.stderr);
        self.stdout.trim()
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(self.ok()).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }
}

/// Runs the `archive` binary with a clean environment plus `env`.
pub fn run_cli(args: &[&str], env: &[(&str, String)]) -> Outcome {
    let home = tempfile::tempdir().unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_archive"));
    cmd.args(args)
        .env_remove("ARCHIVE_URL")
        .env_remove("ARCHIVE_TOKEN")
        .env_remove("ARCHIVE_COMMUNITY")
        .env_remove("ARCHIVE_CONFIG")
        .env("HOME", home.path())
        .env("XDG_CONFIG_HOME", home.path().join("config"))
        .stdin(Stdio::null());
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().unwrap();
    Outcome {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn write_metadata(dir: &Path, name: &str, value: &serde_json::Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

pub fn metadata(title: &str) -> serde_json::Value {
    serde_json::json!({
        "title": title,
        "description": "Impedance spectra of a coin cell",
        "keywords": ["impedance", "coin cell"],
        "authors": [{
            "name": "Josiah Carberry",
            "orcid": "0000-0002-1825-0097",
            "affiliations": [{"name": "Brown University", "ror": "05gq02987"}]
        }],
        "license": "CC-BY-4.0",
        "resource_type": "dataset",
        "publication_date": "2024-02-01",
        "annotations": [{"label": "cell", "document": "{\"@context\": \"https://schema.org\", \"@type\": \"Dataset\"}"}]
    })
}

pub fn sha256_file(path: &Path) -> String {
    use sha2::{Digest, Sha256};
    format!("sha-256:{}", hex::encode(Sha256::digest(std::fs::read(path).unwrap())))
}
