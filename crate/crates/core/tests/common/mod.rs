#![allow(dead_code)]

use std::sync::Arc;

use archive_core::archive::Archive;
use archive_core::config::{CommunityConfig, DeploymentConfig, UserConfig};
use archive_core::ids::ManualClock;
use archive_core::model::{CommunityKind, MetadataDocument};
use chrono::{NaiveDate, TimeZone, Utc};

pub const UMBRELLA: &str = "consortium";

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub clock: Arc<ManualClock>,
    pub archive: Archive,
}

/// Builds a deployment with the given project communities and users.
///
/// `users` pairs a user id with its project memberships; an entry of
/// `UMBRELLA` alone makes an umbrella-only member.
pub fn fixture(projects: &[&str], users: &[(&str, &[&str])], quota: u64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = DeploymentConfig::new(dir.path(), UMBRELLA);
    cfg.display_name = "Test Archive".into();
    cfg.base_url = "http://archive.test".into();
    cfg.quota_bytes = quota;
    cfg.communities[0].managers = vec!["admin".into()];
    for p in projects {
        cfg.communities.push(CommunityConfig {
            slug: (*p).into(),
            display_name: p.to_uppercase(),
            kind: CommunityKind::Project,
            managers: vec!["admin".into()],
        });
    }
    let mut all: Vec<(&str, &[&str])> = users.to_vec();
    if !users.iter().any(|(u, _)| *u == "admin") {
        all.push(("admin", &[]));
    }
    for (id, memberships) in all {
        cfg.users.push(UserConfig {
            user_id: id.into(),
            email: format!("{id}@example.org"),
            email_confirmed: true,
            memberships: memberships.iter().map(|m| m.to_string()).collect(),
        });
    }
    let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2024, 3, 1, 9, 0, 0).unwrap()));
    let archive = Archive::open_with_clock(cfg, clock.clone()).unwrap();
    Fixture { dir, clock, archive }
}

pub fn metadata(title: &str) -> MetadataDocument {
    MetadataDocument::new(title, "CC-BY-4.0", NaiveDate::from_ymd_opt(2024, 1, 1).unwrap())
}
