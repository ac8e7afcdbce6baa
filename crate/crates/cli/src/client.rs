//! Blocking HTTP client for the archive API.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Duration;

use archive_core::access::LinkPermission;
use archive_core::archive::{MintedLink, RecordStats};
use archive_core::index::SearchPage;
use archive_core::model::{Community, FileEntry, MetadataDocument, RecordVersion, Tier, UserAccount};
use chrono::{DateTime, Utc};
use reqwest::blocking::{Body, Client, RequestBuilder, Response};
use reqwest::Method;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use url::Url;

use crate::error::{CliError, CliResult, RemoteError};

pub const CHECKSUM_HEADER: &str = "x-checksum";

pub struct ApiClient {
    base: Url,
    token: Option<String>,
    http: Client,
}

/// Result of streaming a download to disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Downloaded {
    pub size: u64,
    /// `sha-256:<hex>` of the bytes written.
    pub checksum: String,
    /// The checksum the server announced, if any.
    pub announced: Option<String>,
}

pub fn checksum_of(bytes_hex: &str) -> String {
    format!("sha-256:{bytes_hex}")
}

/// Hashes a local file the same way the server does.
pub fn file_checksum(path: &Path) -> CliResult<(String, u64)> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut size = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        size += n as u64;
    }
    Ok((checksum_of(&hex::encode(hasher.finalize())), size))
}

impl ApiClient {
    pub fn new(server_url: &str, token: Option<&str>) -> CliResult<Self> {
        let mut base = Url::parse(server_url).map_err(|e| CliError::Usage(format!("invalid server URL {server_url:?}: {e}")))?;
        if base.cannot_be_a_base() {
            return Err(CliError::Usage(format!("invalid server URL {server_url:?}")));
        }
        base.set_query(None);
        base.set_fragment(None);
        let http = Client::builder()
            .connect_timeout(Duration::from_secs(10))
            .timeout(None)
            .user_agent(concat!("archive-cli/", env!("CARGO_PKG_VERSION")))
            .build()?;
        Ok(ApiClient {
            base,
            token: token.map(str::to_string),
            http,
        })
    }

    pub fn has_token(&self) -> bool {
        self.token.is_some()
    }

    /// `<base>/api/<segments...>`, each segment percent-encoded.
    pub fn url(&self, segments: &[&str]) -> Url {
        let mut url = self.base.clone();
        {
            let mut path = url.path_segments_mut().expect("checked in new");
            path.pop_if_empty().push("api").extend(segments);
        }
        url
    }

    fn request(&self, method: Method, segments: &[&str], link: Option<&str>) -> RequestBuilder {
        let mut req = self.http.request(method, self.url(segments));
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        if let Some(l) = link {
            req = req.query(&[("token", l)]);
        }
        req
    }

    fn send(&self, req: RequestBuilder) -> CliResult<Response> {
        let res = req.send().map_err(|e| CliError::Network(e.to_string()))?;
        if res.status().is_success() {
            return Ok(res);
        }
        let status = res.status().as_u16();
        let text = res.text().unwrap_or_default();
        let err = serde_json::from_str::<RemoteError>(&text).unwrap_or_else(|_| RemoteError {
            status,
            code: "unknown".into(),
            message: text.chars().take(200).collect(),
            field_errors: None,
        });
        Err(CliError::Remote(err))
    }

    fn json<T: DeserializeOwned>(&self, req: RequestBuilder) -> CliResult<T> {
        let res = self.send(req)?;
        res.json().map_err(|e| CliError::Network(format!("unexpected response: {e}")))
    }

    fn with_body<B: Serialize>(req: RequestBuilder, body: &B) -> RequestBuilder {
        req.json(body)
    }

    // ---- endpoints ---------------------------------------------------------------------

    pub fn current_user(&self) -> CliResult<UserAccount> {
        self.json(self.request(Method::GET, &["user"], None))
    }

    pub fn communities(&self) -> CliResult<Vec<Community>> {
        self.json(self.request(Method::GET, &["communities"], None))
    }

    pub fn create_record(&self, metadata: &MetadataDocument) -> CliResult<RecordVersion> {
        self.json(Self::with_body(self.request(Method::POST, &["records"], None), metadata))
    }

    pub fn read_record(&self, id: &str, version: Option<u32>, link: Option<&str>) -> CliResult<RecordVersion> {
        let req = match version {
            Some(v) => self.request(Method::GET, &["records", id, "versions", &v.to_string()], link),
            None => self.request(Method::GET, &["records", id], link),
        };
        self.json(req)
    }

    pub fn list_versions(&self, id: &str, link: Option<&str>) -> CliResult<Vec<RecordVersion>> {
        self.json(self.request(Method::GET, &["records", id, "versions"], link))
    }

    pub fn update_draft(&self, id: &str, metadata: &MetadataDocument, link: Option<&str>) -> CliResult<RecordVersion> {
        self.json(Self::with_body(self.request(Method::PUT, &["records", id, "draft"], link), metadata))
    }

    pub fn discard_draft(&self, id: &str) -> CliResult<()> {
        self.send(self.request(Method::DELETE, &["records", id, "draft"], None)).map(drop)
    }

    pub fn share(&self, id: &str, tier: Tier, community: Option<&str>) -> CliResult<RecordVersion> {
        let body = json!({ "tier": tier, "community": community });
        self.json(Self::with_body(self.request(Method::POST, &["records", id, "actions", "share"], None), &body))
    }

    pub fn new_version(&self, id: &str, import_files: bool, link: Option<&str>) -> CliResult<RecordVersion> {
        let body = json!({ "import_files": import_files });
        self.json(Self::with_body(self.request(Method::POST, &["records", id, "versions"], link), &body))
    }

    pub fn mint_link(&self, id: &str, permission: LinkPermission, expires_at: Option<DateTime<Utc>>) -> CliResult<MintedLink> {
        let body = json!({ "permission": permission, "expires_at": expires_at });
        self.json(Self::with_body(self.request(Method::POST, &["records", id, "links"], None), &body))
    }

    pub fn record_stats(&self, id: &str, link: Option<&str>) -> CliResult<RecordStats> {
        self.json(self.request(Method::GET, &["records", id, "stats"], link))
    }

    pub fn search(&self, params: &[(&str, String)]) -> CliResult<SearchPage> {
        self.json(self.request(Method::GET, &["search"], None).query(params))
    }

    pub fn export(&self, id: &str, format: &str, version: Option<u32>, link: Option<&str>) -> CliResult<Vec<u8>> {
        let mut req = self.request(Method::GET, &["records", id, "export", format], link);
        if let Some(v) = version {
            req = req.query(&[("version", v)]);
        }
        Ok(self.send(req)?.bytes()?.to_vec())
    }

    /// Streams a local file into the open draft.
    pub fn upload_file(&self, id: &str, name: &str, path: &Path, link: Option<&str>) -> CliResult<FileEntry> {
        let file = File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let len = file.metadata()?.len();
        self.upload_reader(id, name, file, len, link)
    }

    pub fn upload_reader(
        &self,
        id: &str,
        name: &str,
        reader: impl Read + Send + 'static,
        len: u64,
        link: Option<&str>,
    ) -> CliResult<FileEntry> {
        let req = self
            .request(Method::PUT, &["records", id, "draft", "files", name], link)
            .header(reqwest::header::CONTENT_TYPE, "application/octet-stream")
            .body(Body::sized(reader, len));
        self.json(req)
    }

    /// Streams a file of a version to `out`, hashing it on the way.
    pub fn download(
        &self,
        id: &str,
        name: &str,
        version: Option<u32>,
        link: Option<&str>,
        out: &mut impl Write,
    ) -> CliResult<Downloaded> {
        let mut req = self.request(Method::GET, &["records", id, "files", name], link);
        if let Some(v) = version {
            req = req.query(&[("version", v)]);
        }
        let mut res = self.send(req)?;
        let announced = res
            .headers()
            .get(CHECKSUM_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let mut hasher = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        let mut size = 0u64;
        loop {
            let n = res.read(&mut buf).map_err(|e| CliError::Network(e.to_string()))?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
            out.write_all(&buf[..n])?;
            size += n as u64;
        }
        out.flush()?;
        Ok(Downloaded {
            size,
            checksum: checksum_of(&hex::encode(hasher.finalize())),
            announced,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn urls_are_segment_encoded() {
        let c = ApiClient::new("http://h:1/prefix/", None).unwrap();
        assert_eq!(c.url(&["records", "a b", "files", "x/y.csv"]).as_str(), "http://h:1/prefix/api/records/a%20b/files/x%2Fy.csv");
        let c = ApiClient::new("http://h:1", None).unwrap();
        assert_eq!(c.url(&["healthz"]).as_str(), "http://h:1/api/healthz");
        assert!(ApiClient::new("not a url", None).is_err());
    }

    #[test]
    fn local_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f");
        std::fs::write(&p, b"abc").unwrap();
        let (sum, size) = file_checksum(&p).unwrap();
        assert_eq!(size, 3);
        assert_eq!(sum, "sha-256:ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
