#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use archive_core::archive::Archive;
use archive_core::config::{CommunityConfig, DeploymentConfig, UserConfig};
use archive_core::model::CommunityKind;
use axum::body::{Body, Bytes};
use axum::http::{HeaderMap, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub const UMBRELLA: &str = "consortium";

pub fn config(dir: &Path, projects: &[&str], users: &[(&str, &[&str])], quota: u64) -> DeploymentConfig {
    let mut cfg = DeploymentConfig::new(dir, UMBRELLA);
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
    let mut all = users.to_vec();
    all.push(("admin", &[]));
    for (id, m) in all {
        cfg.users.push(UserConfig {
            user_id: id.into(),
            email: format!("{id}@example.org"),
            email_confirmed: true,
            memberships: m.iter().map(|s| s.to_string()).collect(),
        });
    }
    cfg
}

pub struct Harness {
    pub dir: tempfile::TempDir,
    pub archive: Arc<Archive>,
    pub router: Router,
    /// Bearer secret per user id.
    pub tokens: BTreeMap<String, String>,
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Bytes,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }
}

impl Harness {
    pub fn new(projects: &[&str], users: &[(&str, &[&str])], quota: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), projects, users, quota);
        let archive = Arc::new(Archive::open(cfg).unwrap());
        let mut tokens = BTreeMap::new();
        for (u, _) in users.iter().copied().chain([("admin", &[][..])]) {
            tokens.insert(u.to_string(), archive.mint_api_token(u, "test").unwrap().secret);
        }
        let router = archive_server::router(archive.clone());
        Harness { dir, archive, router, tokens }
    }

    pub async fn send(&self, req: Request<Body>) -> Reply {
        let res = self.router.clone().oneshot(req).await.unwrap();
        let status = res.status();
        let headers = res.headers().clone();
        let body = res.into_body().collect().await.unwrap().to_bytes();
        if !status.is_success() {
            // every error body is one ApiError
            let err: archive_server::error::ApiError = serde_json::from_slice(&body)
                .unwrap_or_else(|e| panic!("non-ApiError body for {status}: {e}: {}", String::from_utf8_lossy(&body)));
            assert_eq!(err.status, status.as_u16());
        }
        Reply { status, headers, body }
    }

    pub fn request(&self, method: Method, uri: &str, user: Option<&str>) -> axum::http::request::Builder {
        let mut b = Request::builder().method(method).uri(uri);
        if let Some(u) = user {
            b = b.header("authorization", format!("Bearer {}", self.tokens[u]));
        }
        b
    }

    pub async fn call(&self, method: Method, uri: &str, user: Option<&str>, body: Option<Value>) -> Reply {
        let b = self.request(method, uri, user);
        let req = match body {
            Some(v) => b.header("content-type", "application/json").body(Body::from(v.to_string())),
            None => b.body(Body::empty()),
        };
        self.send(req.unwrap()).await
    }

    pub async fn upload(&self, id: &str, name: &str, user: Option<&str>, query: &str, bytes: Vec<u8>) -> Reply {
        let req = self
            .request(Method::PUT, &format!("/api/records/{id}/draft/files/{name}{query}"), user)
            .header("content-length", bytes.len())
            .body(Body::from(bytes))
            .unwrap();
        self.send(req).await
    }

    pub async fn create(&self, user: &str, title: &str) -> String {
        let r = self.call(Method::POST, "/api/records", Some(user), Some(metadata(title))).await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.body));
        r.json()["record_id"].as_str().unwrap().to_string()
    }

    /// Waits for fire-and-forget stats writes to land.
    pub async fn settle_events(&self, expected: u64) -> u64 {
        for _ in 0..200 {
            let n = self.archive.stats().event_count().unwrap();
            if n >= expected {
                tokio::time::sleep(Duration::from_millis(50)).await;
                return self.archive.stats().event_count().unwrap();
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        self.archive.stats().event_count().unwrap()
    }
}

pub fn metadata(title: &str) -> Value {
    serde_json::json!({
        "title": title,
        "description": "d",
        "keywords": ["k"],
        "authors": [{"name": "A. Author", "orcid": "0000-0002-1825-0097", "affiliations": []}],
        "license": "CC-BY-4.0",
        "resource_type": "dataset",
        "publication_date": "2024-01-01",
    })
}
