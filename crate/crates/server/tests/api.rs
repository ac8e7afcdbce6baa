//! Endpoint behaviour through the full router.

mod common;

use std::sync::Arc;

use archive_core::archive::Archive;
use axum::http::{Method, StatusCode};
use common::{metadata, Harness};
use serde_json::{json, Value};

const MIB: u64 = 1 << 20;

fn harness() -> Harness {
    Harness::new(
        &["alpha", "beta"],
        &[("own", &["alpha"]), ("same", &["alpha"]), ("other", &["beta"])],
        10 * MIB,
    )
}

#[tokio::test]
async fn health_and_fallbacks_are_api_errors() {
    let h = harness();
    let r = h.call(Method::GET, "/api/healthz", None, None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["status"], "ok");
    let r = h.call(Method::GET, "/api/nope", None, None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = h.call(Method::PATCH, "/api/records", Some("own"), None).await;
    assert_eq!(r.status, StatusCode::METHOD_NOT_ALLOWED);
    let r = h.call(Method::POST, "/api/records", Some("own"), Some(json!({"title": 3}))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn authentication() {
    let h = harness();
    let r = h.call(Method::POST, "/api/records", None, Some(metadata("x"))).await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);
    let req = axum::http::Request::builder()
        .method(Method::GET)
        .uri("/api/user")
        .header("authorization", "Bearer not-a-token")
        .body(axum::body::Body::empty())
        .unwrap();
    assert_eq!(h.send(req).await.status, StatusCode::UNAUTHORIZED);
    let r = h.call(Method::GET, "/api/user", Some("own"), None).await;
    assert_eq!(r.json()["user_id"], "own");
    assert_eq!(r.json()["memberships"], json!(["alpha", "consortium"]));
}

#[tokio::test]
async fn validation_reports_field_errors() {
    let h = harness();
    let mut md = metadata("");
    md["authors"][0]["orcid"] = json!("0000-0002-1825-0098");
    let r = h.call(Method::POST, "/api/records", Some("own"), Some(md)).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let body = r.json();
    assert_eq!(body["code"], "validation-failed");
    let fields: Vec<&str> = body["field_errors"].as_array().unwrap().iter().map(|e| e["field"].as_str().unwrap()).collect();
    assert!(fields.contains(&"title"), "{fields:?}");
    assert!(fields.iter().any(|f| f.contains("orcid")), "{fields:?}");
}

#[tokio::test]
async fn record_lifecycle_over_http() {
    let h = harness();
    let id = h.create("own", "Cathode sweep").await;
    let r = h.upload(&id, "data.csv", Some("own"), "", b"a,b\n1,2\n".to_vec()).await;
    assert_eq!(r.status, StatusCode::CREATED);
    assert!(r.json()["checksum"].as_str().unwrap().starts_with("sha-256:"));
    let r = h.upload(&id, "data.csv", Some("own"), "", b"again".to_vec()).await;
    assert_eq!((r.status, r.json()["code"].as_str()), (StatusCode::CONFLICT, Some("duplicate-name")));

    let mut md = metadata("Cathode sweep v1");
    md["keywords"] = json!(["electrolyte"]);
    let r = h.call(Method::PUT, &format!("/api/records/{id}/draft"), Some("own"), Some(md)).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["metadata"]["title"], "Cathode sweep v1");

    // drafts are invisible to others, indistinguishable from absent ids
    let r = h.call(Method::GET, &format!("/api/records/{id}"), Some("same"), None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let absent = h.call(Method::GET, "/api/records/doesnotexist", Some("same"), None).await;
    assert_eq!(r.body, absent.body);

    let r = h
        .call(Method::POST, &format!("/api/records/{id}/actions/share"), Some("own"), Some(json!({"tier": "community", "community": "alpha"})))
        .await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["state"], "shared");
    let r = h.call(Method::GET, &format!("/api/records/{id}"), Some("same"), None).await;
    assert_eq!(r.status, StatusCode::OK);
    let r = h.call(Method::GET, &format!("/api/records/{id}"), Some("other"), None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    // files of a shared version are frozen
    let r = h.upload(&id, "more.csv", Some("own"), "", b"x".to_vec()).await;
    assert_eq!((r.status, r.json()["code"].as_str()), (StatusCode::FORBIDDEN, Some("immutable-files")));

    let r = h.call(Method::POST, &format!("/api/records/{id}/versions"), Some("own"), None).await;
    assert_eq!(r.status, StatusCode::CREATED);
    assert_eq!(r.json()["version_index"], 2);
    assert_eq!(r.json()["files"], json!([]));
    let r = h.call(Method::POST, &format!("/api/records/{id}/versions"), Some("own"), Some(json!({"import_files": true}))).await;
    assert_eq!((r.status, r.json()["code"].as_str()), (StatusCode::CONFLICT, Some("draft-exists")));
    let r = h.call(Method::GET, &format!("/api/records/{id}/versions"), Some("own"), None).await;
    assert_eq!(r.json().as_array().unwrap().len(), 2);
    let r = h.call(Method::GET, &format!("/api/records/{id}/versions"), Some("same"), None).await;
    assert_eq!(r.json().as_array().unwrap().len(), 1);
    let r = h.call(Method::GET, &format!("/api/records/{id}/versions/1"), Some("same"), None).await;
    assert_eq!(r.json()["version_index"], 1);
    let r = h.call(Method::GET, &format!("/api/records/{id}/versions/2"), Some("same"), None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = h.call(Method::DELETE, &format!("/api/records/{id}/draft"), Some("own"), None).await;
    assert_eq!(r.status, StatusCode::NO_CONTENT);
    let r = h.call(Method::GET, &format!("/api/records/{id}/versions"), Some("own"), None).await;
    assert_eq!(r.json().as_array().unwrap().len(), 1);

    // search sees the shared version once the index catches up
    h.archive.flush_index().unwrap();
    let r = h.call(Method::GET, "/api/search?q=electrolyte", Some("same"), None).await;
    assert_eq!(r.json()["total"], 1);
    let r = h.call(Method::GET, "/api/search?q=electrolyte", Some("other"), None).await;
    assert_eq!(r.json()["total"], 0);
    let r = h.call(Method::GET, "/api/search?q=electrolyte", None, None).await;
    assert_eq!(r.json()["total"], 0);
    let r = h.call(Method::GET, "/api/search?owner=me", None, None).await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);
    let r = h.call(Method::GET, "/api/search?owner=me&size=101", Some("own"), None).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn view_link_grants_anonymous_access_until_revoked() {
    let h = harness();
    let id = h.create("own", "community only").await;
    h.upload(&id, "f.bin", Some("own"), "", vec![7u8; 1000]).await;
    h.call(Method::POST, &format!("/api/records/{id}/actions/share"), Some("own"), Some(json!({"tier": "community", "community": "alpha"}))).await;
    let r = h.call(Method::GET, &format!("/api/records/{id}"), None, None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = h.call(Method::POST, &format!("/api/records/{id}/links"), Some("own"), Some(json!({"permission": "view"}))).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let token = r.json()["token"].as_str().unwrap().to_string();
    assert_eq!(r.json()["url"], format!("http://archive.test/records/{id}?token={token}"));

    let r = h.call(Method::GET, &format!("/api/records/{id}?token={token}"), None, None).await;
    assert_eq!(r.status, StatusCode::OK);
    let r = h.call(Method::GET, &format!("/api/records/{id}/files/f.bin?token={token}"), None, None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body.len(), 1000);
    assert_eq!(
        r.headers["x-checksum"].to_str().unwrap(),
        format!("sha-256:{}", archive_core::ids::sha256_hex(&[7u8; 1000]))
    );
    // a view link does not allow editing
    let r = h.call(Method::PUT, &format!("/api/records/{id}/draft?token={token}"), None, Some(metadata("x"))).await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);
    // a token for another record grants nothing here
    let other = h.create("own", "other").await;
    h.call(Method::POST, &format!("/api/records/{other}/actions/share"), Some("own"), Some(json!({"tier": "community", "community": "alpha"}))).await;
    let r = h.call(Method::GET, &format!("/api/records/{other}?token={token}"), None, None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    // link listings are owner-only
    let r = h.call(Method::GET, &format!("/api/records/{id}/links"), Some("own"), None).await;
    assert_eq!(r.json().as_array().unwrap().len(), 1);
    let r = h.call(Method::GET, &format!("/api/records/{id}/links?token={token}"), Some("same"), None).await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);

    let r = h.call(Method::DELETE, &format!("/api/links/{token}"), Some("same"), None).await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);
    let r = h.call(Method::DELETE, &format!("/api/links/{token}"), Some("own"), None).await;
    assert_eq!(r.status, StatusCode::NO_CONTENT);
    let r = h.call(Method::GET, &format!("/api/records/{id}?token={token}"), None, None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn edit_link_lets_a_user_work_on_the_draft() {
    let h = harness();
    let id = h.create("own", "shared work").await;
    let r = h.call(Method::POST, &format!("/api/records/{id}/links"), Some("own"), Some(json!({"permission": "edit"}))).await;
    let token = r.json()["token"].as_str().unwrap().to_string();
    let r = h.upload(&id, "x.csv", Some("same"), &format!("?token={token}"), b"1".to_vec()).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let r = h.call(Method::POST, &format!("/api/records/{id}/actions/share?token={token}"), Some("same"), Some(json!({"tier": "consortium"}))).await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);
    // edit links need a signed-in member of one of the owner's communities
    let r = h.upload(&id, "y.csv", Some("other"), &format!("?token={token}"), b"1".to_vec()).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn quota_is_enforced_with_413() {
    let h = harness();
    let id = h.create("own", "big").await;
    for (i, mib) in [4u64, 4].iter().enumerate() {
        let r = h.upload(&id, &format!("f{i}"), Some("own"), "", vec![0u8; (mib * MIB) as usize]).await;
        assert_eq!(r.status, StatusCode::CREATED);
    }
    let r = h.upload(&id, "f2", Some("own"), "", vec![0u8; (4 * MIB) as usize]).await;
    assert_eq!(r.status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(r.json()["code"], "quota-exceeded");
    let r = h.upload(&id, "f2", Some("own"), "", vec![0u8; (2 * MIB) as usize]).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let r = h.upload(&id, "f3", Some("own"), "", vec![0u8; 1]).await;
    assert_eq!(r.status, StatusCode::PAYLOAD_TOO_LARGE);

    // without Content-Length there is no pre-check
    let req = h
        .request(Method::PUT, &format!("/api/records/{id}/draft/files/nolen"), Some("own"))
        .body(axum::body::Body::from_stream(futures_stream(b"abc")))
        .unwrap();
    assert_eq!(h.send(req).await.status, StatusCode::LENGTH_REQUIRED);
}

fn futures_stream(bytes: &'static [u8]) -> impl futures_util::Stream<Item = Result<axum::body::Bytes, std::io::Error>> + Send {
    futures_util::stream::once(async move { Ok(axum::body::Bytes::from_static(bytes)) })
}

#[tokio::test]
async fn one_view_event_per_record_get() {
    let h = harness();
    let id = h.create("own", "counted").await;
    h.upload(&id, "a.csv", Some("own"), "", b"1,2".to_vec()).await;
    // drafts are not counted
    h.call(Method::GET, &format!("/api/records/{id}"), Some("own"), None).await;
    h.call(Method::POST, &format!("/api/records/{id}/actions/share"), Some("own"), Some(json!({"tier": "consortium"}))).await;
    assert_eq!(h.settle_events(0).await, 0);

    h.call(Method::GET, &format!("/api/records/{id}"), Some("same"), None).await;
    assert_eq!(h.settle_events(1).await, 1);
    // listing versions, exporting and stats are not views
    h.call(Method::GET, &format!("/api/records/{id}/versions"), Some("same"), None).await;
    h.call(Method::GET, &format!("/api/records/{id}/export/json"), Some("same"), None).await;
    h.call(Method::GET, &format!("/api/records/{id}/stats"), Some("same"), None).await;
    assert_eq!(h.settle_events(1).await, 1);
    h.call(Method::GET, &format!("/api/records/{id}/files/a.csv"), Some("other"), None).await;
    h.call(Method::GET, &format!("/api/records/{id}/files/a.csv"), Some("other"), None).await;
    assert_eq!(h.settle_events(3).await, 3);

    let r = h.call(Method::GET, &format!("/api/records/{id}/stats"), Some("own"), None).await;
    let stats = r.json();
    assert_eq!(stats["cumulative"]["unique_views"], 1);
    // two downloads by one visitor in one period count once
    assert_eq!(stats["cumulative"]["unique_downloads"], 1);
    assert_eq!(stats["versions"][0]["stats"]["downloads_by_file"]["a.csv"], 1);
    let r = h.call(Method::GET, &format!("/api/records/{id}/versions/1/stats"), Some("own"), None).await;
    assert_eq!(r.json()["unique_views"], 1);

    // nothing in the stats store identifies the visitors
    let dump = h.archive.stats().dump_text().unwrap();
    for needle in ["same", "other", "127.0.0.1"] {
        assert!(!dump.contains(needle), "{needle}");
    }
}

#[tokio::test]
async fn exports_in_every_format() {
    let h = harness();
    let id = h.create("own", "export me").await;
    for (format, media) in [
        ("json", "application/json"),
        ("json-ld", "application/ld+json"),
        ("datacite-xml", "application/xml"),
        ("dublincore-xml", "application/xml"),
    ] {
        let r = h.call(Method::GET, &format!("/api/records/{id}/export/{format}"), Some("own"), None).await;
        assert_eq!(r.status, StatusCode::OK, "{format}");
        assert_eq!(r.headers["content-type"], media);
        let again = h.call(Method::GET, &format!("/api/records/{id}/export/{format}?version=1"), Some("own"), None).await;
        assert_eq!(r.body, again.body);
    }
    let r = h.call(Method::GET, &format!("/api/records/{id}/export/bibtex"), Some("own"), None).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = h.call(Method::GET, &format!("/api/records/{id}/export/json"), Some("same"), None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn token_secrets_appear_only_in_the_mint_response() {
    let h = harness();
    let r = h.call(Method::POST, "/api/user/tokens", Some("own"), Some(json!({"label": "laptop"}))).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let secret = r.json()["secret"].as_str().unwrap().to_string();
    let token_id = r.json()["token_id"].as_str().unwrap().to_string();
    let list = h.call(Method::GET, "/api/user/tokens", Some("own"), None).await;
    let text = String::from_utf8(list.body.to_vec()).unwrap();
    assert!(text.contains("laptop"));
    assert!(!text.contains(&secret));
    assert!(!text.contains(&h.tokens["own"]));
    for t in list.json().as_array().unwrap() {
        assert!(t.get("secret").is_none() && t.get("token_hash").is_none());
    }
    // the new token works until revoked
    let req = |secret: &str| {
        axum::http::Request::builder()
            .uri("/api/user")
            .header("authorization", format!("Bearer {secret}"))
            .body(axum::body::Body::empty())
            .unwrap()
    };
    assert_eq!(h.send(req(&secret)).await.status, StatusCode::OK);
    let r = h.call(Method::DELETE, &format!("/api/user/tokens/{token_id}"), Some("same"), None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = h.call(Method::DELETE, &format!("/api/user/tokens/{token_id}"), Some("own"), None).await;
    assert_eq!(r.status, StatusCode::NO_CONTENT);
    assert_eq!(h.send(req(&secret)).await.status, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn community_membership_endpoints() {
    let h = harness();
    let r = h.call(Method::GET, "/api/communities", None, None).await;
    let slugs: Vec<String> = r.json().as_array().unwrap().iter().map(|c| c["slug"].as_str().unwrap().to_string()).collect();
    assert_eq!(slugs, vec!["alpha", "beta", "consortium"]);
    let r = h.call(Method::POST, "/api/communities/beta/members", Some("own"), Some(json!({"user": "same"}))).await;
    assert_eq!((r.status, r.json()["code"].as_str()), (StatusCode::FORBIDDEN, Some("not-manager")));
    let r = h.call(Method::POST, "/api/communities/beta/members", Some("admin"), Some(json!({"user": "same"}))).await;
    assert_eq!(r.json()["memberships"], json!(["alpha", "beta", "consortium"]));
    let r = h.call(Method::DELETE, "/api/communities/consortium/members/same", Some("admin"), None).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    h.call(Method::DELETE, "/api/communities/alpha/members/same", Some("admin"), None).await;
    let r = h.call(Method::DELETE, "/api/communities/beta/members/same", Some("admin"), None).await;
    assert_eq!(r.json()["memberships"], json!([]));
}

/// Builds the same state twice: once in a fresh server, once after a restart.
#[tokio::test]
async fn responses_survive_a_restart() {
    let h = harness();
    let id = h.create("own", "persistent cathode").await;
    h.upload(&id, "a.csv", Some("own"), "", b"1".to_vec()).await;
    h.call(Method::POST, &format!("/api/records/{id}/actions/share"), Some("own"), Some(json!({"tier": "community", "community": "alpha"}))).await;
    h.call(Method::POST, &format!("/api/records/{id}/versions"), Some("own"), Some(json!({"import_files": true}))).await;
    h.archive.flush_index().unwrap();
    let probes = [
        ("own", format!("/api/records/{id}/versions")),
        ("same", format!("/api/records/{id}/versions/1")),
        ("same", "/api/search?q=cathode".to_string()),
        ("own", "/api/search?owner=me".to_string()),
        ("other", format!("/api/records/{id}")),
        ("own", format!("/api/records/{id}/export/datacite-xml")),
    ];
    let mut before = Vec::new();
    for (u, uri) in &probes {
        let r = h.call(Method::GET, uri, Some(u), None).await;
        before.push((r.status, r.body));
    }

    let cfg = h.archive.config().clone();
    let tokens = h.tokens.clone();
    let dir = h.dir;
    drop(h.router);
    drop(h.archive);
    let archive = Arc::new(Archive::open(cfg).unwrap());
    let restarted = Harness {
        router: archive_server::router(archive.clone()),
        archive,
        dir,
        tokens,
    };
    for ((u, uri), (status, body)) in probes.iter().zip(before) {
        let r = restarted.call(Method::GET, uri, Some(u), None).await;
        assert_eq!(r.status, status, "{uri}");
        assert_eq!(r.body, body, "{uri}");
    }
}

#[tokio::test]
async fn record_reads_never_leak_link_tokens() {
    let h = harness();
    let id = h.create("own", "links").await;
    h.call(Method::POST, &format!("/api/records/{id}/actions/share"), Some("own"), Some(json!({"tier": "consortium"}))).await;
    let token = h
        .call(Method::POST, &format!("/api/records/{id}/links"), Some("own"), Some(json!({"permission": "view"})))
        .await
        .json()["token"]
        .as_str()
        .unwrap()
        .to_string();
    for uri in [
        format!("/api/records/{id}"),
        format!("/api/records/{id}/versions"),
        format!("/api/records/{id}/stats"),
        format!("/api/records/{id}/export/json"),
        format!("/api/records/{id}/export/json-ld"),
    ] {
        let r = h.call(Method::GET, &uri, Some("other"), None).await;
        assert_eq!(r.status, StatusCode::OK, "{uri}");
        assert!(!String::from_utf8_lossy(&r.body).contains(&token), "{uri}");
    }
    let _: Value = h.call(Method::GET, &format!("/api/records/{id}"), Some("other"), None).await.json();
}
