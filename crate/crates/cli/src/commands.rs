//! Command implementations.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use archive_core::access::LinkPermission;
use archive_core::export::import_json;
use archive_core::index::{IndexDocument, MAX_PAGE_SIZE};
use archive_core::model::{CommunityKind, MetadataDocument, RecordVersion, Tier};
use chrono::Utc;
use serde_json::{json, Value};
use url::Url;

use crate::cli::Command;
use crate::client::{file_checksum, ApiClient};
use crate::config::ClientConfig;
use crate::error::{CliError, CliResult};

/// What a command prints on success.
#[derive(Debug)]
pub enum Output {
    /// Human-readable text, plus the value printed under `--json`.
    Text { text: String, json: Value },
    /// Bytes written verbatim in both modes.
    Raw(Vec<u8>),
}

impl Output {
    fn new(text: impl Into<String>, json: Value) -> Self {
        Output::Text { text: text.into(), json }
    }
}

/// A record argument: a bare id, or a share-link URL carrying its token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordRef {
    pub id: String,
    pub token: Option<String>,
    /// Scheme, host and port of a URL argument.
    pub origin: Option<String>,
}

pub fn parse_record_ref(arg: &str) -> CliResult<RecordRef> {
    if !(arg.starts_with("http://") || arg.starts_with("https://")) {
        if arg.is_empty() || arg.contains('/') {
            return Err(CliError::Usage(format!("invalid record id {arg:?}")));
        }
        return Ok(RecordRef {
            id: arg.to_string(),
            token: None,
            origin: None,
        });
    }
    let url = Url::parse(arg).map_err(|e| CliError::Usage(format!("invalid URL {arg:?}: {e}")))?;
    let segments: Vec<&str> = url.path_segments().map(|s| s.filter(|s| !s.is_empty()).collect()).unwrap_or_default();
    let id = segments
        .iter()
        .rposition(|s| *s == "records")
        .and_then(|i| segments.get(i + 1))
        .ok_or_else(|| CliError::Usage(format!("URL {arg:?} does not name a record")))?;
    let token = url.query_pairs().find(|(k, _)| k == "token").map(|(_, v)| v.into_owned());
    Ok(RecordRef {
        id: id.to_string(),
        token,
        origin: Some(url.origin().ascii_serialization()),
    })
}

fn read_metadata(path: &Path) -> CliResult<MetadataDocument> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: invalid metadata: {e}", path.display())))
}

fn file_name_of(path: &Path) -> CliResult<String> {
    path.file_name()
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .ok_or_else(|| CliError::Usage(format!("{}: no usable file name", path.display())))
}

/// Rejects names that would escape the destination directory.
fn safe_local_name(name: &str) -> CliResult<&str> {
    let bad = name.is_empty() || name == "." || name == ".." || name.contains(['/', '\\', '\0']);
    if bad {
        return Err(CliError::Refused(format!("server sent unsafe file name {name:?}")));
    }
    Ok(name)
}

fn parse_tier(s: &str) -> CliResult<Tier> {
    match Tier::parse(s) {
        Some(t @ (Tier::Community | Tier::Consortium)) => Ok(t),
        _ => Err(CliError::Usage(format!("tier must be community or consortium, got {s:?}"))),
    }
}

/// Maps a share target to a tier: `consortium` or the umbrella slug means
/// consortium-wide, any other slug means that project community.
fn share_target(client: &ApiClient, target: &str) -> CliResult<(Tier, Option<String>)> {
    if target == Tier::Consortium.as_str() {
        return Ok((Tier::Consortium, None));
    }
    let community = client
        .communities()?
        .into_iter()
        .find(|c| c.slug == target)
        .ok_or_else(|| CliError::Usage(format!("unknown community {target:?}")))?;
    Ok(match community.kind {
        CommunityKind::Umbrella => (Tier::Consortium, None),
        CommunityKind::Project => (Tier::Community, Some(community.slug)),
    })
}

fn record_url(server: &str, id: &str) -> String {
    format!("{server}/api/records/{id}")
}

fn version_json(v: &RecordVersion) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

pub struct Context<'a> {
    pub config: &'a ClientConfig,
}

impl Context<'_> {
    fn client(&self) -> CliResult<ApiClient> {
        ApiClient::new(self.config.require_url()?, self.config.token())
    }

    fn authed_client(&self) -> CliResult<ApiClient> {
        let token = self.config.require_token()?;
        ApiClient::new(self.config.require_url()?, Some(token))
    }

    /// Client for a record argument; a share URL supplies the server when none is configured.
    fn client_for(&self, r: &RecordRef) -> CliResult<ApiClient> {
        match (&self.config.server_url, &r.origin) {
            (Some(url), _) => ApiClient::new(url, self.config.token()),
            (None, Some(origin)) => ApiClient::new(origin, self.config.token()),
            (None, None) => self.client(),
        }
    }

    fn record_arg(&self, arg: &str, link_token: Option<String>) -> CliResult<RecordRef> {
        let mut r = parse_record_ref(arg)?;
        if link_token.is_some() {
            r.token = link_token;
        }
        Ok(r)
    }

    pub fn run(&self, command: Command) -> CliResult<Output> {
        match command {
            Command::Upload { metadata, files, share } => self.upload(&metadata, &files, share.as_deref()),
            Command::Get {
                record,
                version,
                format,
                link_token,
            } => self.get(&self.record_arg(&record, link_token)?, version, format.as_deref()),
            Command::Download {
                record,
                dest,
                version,
                link_token,
            } => self.download(&self.record_arg(&record, link_token)?, &dest, version),
            Command::Search {
                query,
                community,
                resource_type,
                keywords,
                mine,
                sort,
                page,
                size,
            } => {
                let mut params: Vec<(&str, String)> = vec![("q", query)];
                params.extend(community.map(|c| ("community", c)));
                params.extend(resource_type.map(|t| ("type", t)));
                if !keywords.is_empty() {
                    params.push(("keywords", keywords.join(",")));
                }
                if mine {
                    params.push(("owner", "me".into()));
                }
                params.extend(sort.map(|s| ("sort", s)));
                params.extend(page.map(|p| ("page", p.to_string())));
                params.extend(size.map(|s| ("size", s.to_string())));
                let client = if mine { self.authed_client()? } else { self.client()? };
                let page = client.search(&params)?;
                let text: Vec<String> = page
                    .hits
                    .iter()
                    .map(|h| format!("{}\tv{}\t{}\t{}", h.record_id, h.version_index, h.state.as_str(), h.title))
                    .collect();
                let text = format!("{} result(s), page {}\n{}", page.total, page.page, text.join("\n"));
                Ok(Output::new(text.trim_end(), serde_json::to_value(&page).unwrap_or(Value::Null)))
            }
            Command::Update {
                record,
                metadata,
                link_token,
            } => {
                let r = self.record_arg(&record, link_token)?;
                let md = read_metadata(&metadata)?;
                let v = self.client_for(&r)?.update_draft(&r.id, &md, r.token.as_deref())?;
                Ok(Output::new(format!("updated {}", v.version_id), version_json(&v)))
            }
            Command::Share { record, tier, community } => {
                let tier = parse_tier(&tier)?;
                let community = match tier {
                    Tier::Community => Some(community.or_else(|| self.config.default_community.clone()).ok_or_else(
                        || CliError::Usage("community tier needs --community or a default community".into()),
                    )?),
                    _ => None,
                };
                let v = self.authed_client()?.share(&record, tier, community.as_deref())?;
                let scope = v.shared_with.clone().unwrap_or_else(|| v.tier.as_str().to_string());
                Ok(Output::new(format!("shared {} with {scope}", v.version_id), version_json(&v)))
            }
            Command::NewVersion {
                record,
                import_files,
                link_token,
            } => {
                let r = self.record_arg(&record, link_token)?;
                let v = self.client_for(&r)?.new_version(&r.id, import_files, r.token.as_deref())?;
                Ok(Output::new(v.version_id.clone(), version_json(&v)))
            }
            Command::Link {
                record,
                permission,
                expires,
            } => {
                let permission = LinkPermission::parse(&permission)
                    .ok_or_else(|| CliError::Usage(format!("permission must be view or edit, got {permission:?}")))?;
                if expires.is_some_and(|e| e <= Utc::now()) {
                    return Err(CliError::Usage("expiry must be in the future".into()));
                }
                let link = self.authed_client()?.mint_link(&record, permission, expires)?;
                Ok(Output::new(link.url.clone(), serde_json::to_value(&link).unwrap_or(Value::Null)))
            }
            Command::Stats { record, link_token } => {
                let r = self.record_arg(&record, link_token)?;
                let stats = self.client_for(&r)?.record_stats(&r.id, r.token.as_deref())?;
                let mut lines = vec![format!(
                    "total\tviews {}\tdownloads {}",
                    stats.cumulative.unique_views, stats.cumulative.unique_downloads
                )];
                for v in &stats.versions {
                    lines.push(format!(
                        "v{}\tviews {}\tdownloads {}",
                        v.version_index, v.stats.unique_views, v.stats.unique_downloads
                    ));
                }
                Ok(Output::new(lines.join("\n"), serde_json::to_value(&stats).unwrap_or(Value::Null)))
            }
            Command::Backup {
                path,
                record_label,
                license,
            } => self.backup(&path, &record_label, &license),
            Command::Publish {
                record,
                target_url,
                target_token,
                version,
            } => self.publish(&record, &target_url, &target_token, version),
        }
    }

    fn upload(&self, metadata: &Path, files: &[PathBuf], share: Option<&str>) -> CliResult<Output> {
        let md = read_metadata(metadata)?;
        let mut names = Vec::with_capacity(files.len());
        for f in files {
            let name = file_name_of(f)?;
            if names.contains(&name) {
                return Err(CliError::Usage(format!("two files named {name:?}")));
            }
            File::open(f).map_err(|e| CliError::Usage(format!("{}: {e}", f.display())))?;
            names.push(name);
        }
        let client = self.authed_client()?;
        let target = share.map(|s| share_target(&client, s)).transpose()?;
        let draft = client.create_record(&md)?;
        let id = draft.record_id.clone();
        let finish = || -> CliResult<RecordVersion> {
            for (path, name) in files.iter().zip(&names) {
                let entry = client.upload_file(&id, name, path, None)?;
                let (local, _) = file_checksum(path)?;
                if entry.checksum != local {
                    return Err(CliError::Checksum(format!("{name}: server stored {} for {local}", entry.checksum)));
                }
            }
            match &target {
                Some((tier, community)) => client.share(&id, *tier, community.as_deref()),
                None => client.read_record(&id, None, None),
            }
        };
        let version = match finish() {
            Ok(v) => v,
            Err(e) => {
                // the record would otherwise linger as an empty draft
                let _ = client.discard_draft(&id);
                return Err(e);
            }
        };
        let url = record_url(self.config.require_url()?, &id);
        let json = json!({
            "record_id": id,
            "version_id": version.version_id,
            "url": url,
            "state": version.state,
            "tier": version.tier,
            "files": version.files,
        });
        Ok(Output::new(format!("{id}\n{url}"), json))
    }

    fn get(&self, r: &RecordRef, version: Option<u32>, format: Option<&str>) -> CliResult<Output> {
        let client = self.client_for(r)?;
        match format {
            Some(f) => Ok(Output::Raw(client.export(&r.id, f, version, r.token.as_deref())?)),
            None => {
                let v = client.read_record(&r.id, version, r.token.as_deref())?;
                let json = version_json(&v);
                Ok(Output::new(serde_json::to_string_pretty(&json).unwrap_or_default(), json))
            }
        }
    }

    fn download(&self, r: &RecordRef, dest: &Path, version: Option<u32>) -> CliResult<Output> {
        let client = self.client_for(r)?;
        let link = r.token.as_deref();
        let v = client.read_record(&r.id, version, link)?;
        fs::create_dir_all(dest).map_err(|e| CliError::Usage(format!("{}: {e}", dest.display())))?;
        let mut done = Vec::new();
        let mut lines = Vec::new();
        for entry in &v.files {
            let name = safe_local_name(&entry.name)?;
            let target = dest.join(name);
            let mut tmp = tempfile::NamedTempFile::new_in(dest)?;
            let got = client.download(&r.id, &entry.name, Some(v.version_index), link, tmp.as_file_mut())?;
            let announced_ok = got.announced.as_deref().is_none_or(|a| a == entry.checksum);
            if got.checksum != entry.checksum || !announced_ok || got.size != entry.size {
                // the temporary file is removed on drop
                return Err(CliError::Checksum(format!(
                    "{}: expected {}, received {}",
                    entry.name, entry.checksum, got.checksum
                )));
            }
            tmp.persist(&target).map_err(|e| CliError::Io(e.error))?;
            lines.push(format!("{}\t{}\tOK", entry.name, entry.checksum));
            done.push(json!({
                "name": entry.name,
                "path": target,
                "size": got.size,
                "checksum": got.checksum,
            }));
        }
        let json = json!({ "record_id": v.record_id, "version_id": v.version_id, "files": done });
        Ok(Output::new(lines.join("\n"), json))
    }

    /// Every version of the caller's records whose title is exactly `label`.
    fn find_labelled(&self, client: &ApiClient, label: &str) -> CliResult<Vec<IndexDocument>> {
        let mut hits = Vec::new();
        let mut page = 1;
        loop {
            let res = client.search(&[
                ("q", label.to_string()),
                ("owner", "me".into()),
                ("sort", "oldest".into()),
                ("page", page.to_string()),
                ("size", MAX_PAGE_SIZE.to_string()),
            ])?;
            let seen = (page - 1) * res.page_size + res.hits.len();
            hits.extend(res.hits.into_iter().filter(|h| h.title == label));
            if res.page_size == 0 || seen >= res.total {
                return Ok(hits);
            }
            page += 1;
        }
    }

    fn backup(&self, path: &Path, label: &str, license: &str) -> CliResult<Output> {
        let meta = fs::metadata(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if label.trim().is_empty() {
            return Err(CliError::Usage("record label must not be empty".into()));
        }
        let base = file_name_of(path)?;
        let (snapshot, name): (Box<dyn AsRef<Path>>, String) = if meta.is_dir() {
            let mut tmp = tempfile::NamedTempFile::new()?;
            {
                let mut builder = tar::Builder::new(tmp.as_file_mut());
                builder.follow_symlinks(false);
                builder
                    .append_dir_all(&base, path)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                builder.finish()?;
            }
            tmp.as_file_mut().seek(SeekFrom::Start(0))?;
            (Box::new(tmp.into_temp_path()), format!("{base}.tar"))
        } else {
            File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            (Box::new(path.to_path_buf()), base)
        };
        let snapshot = (*snapshot).as_ref();
        let community = self
            .config
            .default_community
            .clone()
            .ok_or_else(|| CliError::Usage("backup needs --default-community or a configured default community".into()))?;
        let client = self.authed_client()?;
        let (tier, shared_with) = share_target(&client, &community)?;

        let existing = self.find_labelled(&client, label)?;
        // the earliest record carrying the label wins
        let record_id = existing.iter().min_by_key(|h| (h.created_at, h.record_id.clone())).map(|h| h.record_id.clone());
        let draft = match &record_id {
            Some(id) => client.new_version(id, false, None)?,
            None => {
                let mut md = MetadataDocument::new(label, license, Utc::now().date_naive());
                md.description = format!("Snapshot of {name}");
                md.keywords = vec!["backup".into()];
                client.create_record(&md)?
            }
        };
        let id = draft.record_id.clone();
        let (local, _) = file_checksum(snapshot)?;
        let finish = || -> CliResult<RecordVersion> {
            let entry = client.upload_file(&id, &name, snapshot, None)?;
            if entry.checksum != local {
                return Err(CliError::Checksum(format!("{name}: server stored {} for {local}", entry.checksum)));
            }
            client.share(&id, tier, shared_with.as_deref())
        };
        let shared = finish().inspect_err(|_| {
            let _ = client.discard_draft(&id);
        })?;
        let json = json!({
            "record_id": id,
            "version_id": shared.version_id,
            "version_index": shared.version_index,
            "file": name,
            "checksum": local,
            "created_record": record_id.is_none(),
        });
        Ok(Output::new(shared.version_id.clone(), json))
    }

    fn publish(&self, record: &str, target_url: &str, target_token: &str, version: Option<u32>) -> CliResult<Output> {
        let r = parse_record_ref(record)?;
        let source = self.client_for(&r)?;
        let link = r.token.as_deref();
        let chosen = match version {
            Some(v) => source.read_record(&r.id, Some(v), link)?,
            None => source
                .list_versions(&r.id, link)?
                .into_iter()
                .filter(RecordVersion::is_shared)
                .max_by_key(|v| v.version_index)
                .ok_or_else(|| CliError::Refused(format!("record {} has no shared version", r.id)))?,
        };
        if !chosen.is_shared() {
            return Err(CliError::Refused(format!("{} is a draft; only shared versions can be published", chosen.version_id)));
        }
        let target = ApiClient::new(target_url, Some(target_token))?;
        target.current_user().map_err(|e| match e {
            CliError::Remote(r) if r.status == 401 => CliError::Auth(format!("target rejected the token: {}", r.message)),
            other => other,
        })?;
        let exported = source.export(&r.id, "json", Some(chosen.version_index), link)?;
        let metadata = import_json(&exported).map_err(|e| CliError::Refused(format!("source export unusable: {e}")))?;
        let draft = target.create_record(&metadata)?;
        let remote_id = draft.record_id.clone();
        let copy = || -> CliResult<RecordVersion> {
            for entry in &chosen.files {
                let mut tmp = tempfile::tempfile()?;
                let got = source.download(&r.id, &entry.name, Some(chosen.version_index), link, &mut tmp)?;
                let announced_ok = got.announced.as_deref().is_none_or(|a| a == entry.checksum);
                if got.checksum != entry.checksum || !announced_ok {
                    return Err(CliError::Checksum(format!(
                        "{}: source manifest says {}, received {}",
                        entry.name, entry.checksum, got.checksum
                    )));
                }
                tmp.seek(SeekFrom::Start(0))?;
                let stored = target.upload_reader(&remote_id, &entry.name, tmp, got.size, None)?;
                if stored.checksum != entry.checksum {
                    return Err(CliError::Checksum(format!(
                        "{}: target stored {}, expected {}",
                        entry.name, stored.checksum, entry.checksum
                    )));
                }
            }
            let copied = target.read_record(&remote_id, None, None)?;
            let want: BTreeMap<&str, &str> = chosen.files.iter().map(|f| (f.name.as_str(), f.checksum.as_str())).collect();
            let got: BTreeMap<&str, &str> = copied.files.iter().map(|f| (f.name.as_str(), f.checksum.as_str())).collect();
            if want != got {
                return Err(CliError::Checksum("target manifest differs from the source".into()));
            }
            Ok(copied)
        };
        let copied = copy().inspect_err(|_| {
            let _ = target.discard_draft(&remote_id);
        })?;
        let json = json!({
            "source_version_id": chosen.version_id,
            "remote_record_id": remote_id,
            "remote_version_id": copied.version_id,
            "files": copied.files,
        });
        Ok(Output::new(remote_id.clone(), json))
    }
}

/// Writes the successful output of a command.
pub fn render(out: &Output, as_json: bool, w: &mut dyn Write) -> std::io::Result<()> {
    match out {
        Output::Raw(bytes) => w.write_all(bytes),
        Output::Text { json, .. } if as_json => writeln!(w, "{}", serde_json::to_string_pretty(json).unwrap_or_default()),
        Output::Text { text, .. } if text.is_empty() => Ok(()),
        Output::Text { text, .. } => writeln!(w, "{text}"),
    }
}
