//! The archive service: every operation the REST API and tests call.
//!
//! [`Archive`] wires the primary store, the search index, the file store and
//! the stats store together and enforces permissions through
//! [`crate::access::evaluate`]. Versions the actor cannot read are reported as
//! [`ArchiveError::NotFound`] so private ids never leak.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Read;
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::thread::JoinHandle;
use std::time::Duration as StdDuration;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::access::{
    evaluate, redeem, Action, ApiToken, ApiTokenInfo, LinkPermission, Redemption, ShareLink, Subject,
};
use crate::config::DeploymentConfig;
use crate::error::{ArchiveError, ConflictKind, DenyReason, Result};
use crate::export::{self, ExportContext, ExportFormat, ExportedDocument};
use crate::files::{format_checksum, is_limit_exceeded, FileStore};
use crate::ids::{new_api_secret, new_link_token, new_record_id, new_token_id, sha256_hex, Clock, SystemClock};
use crate::index::{rank_and_page, ConsistencyReport, IndexDocument, SearchIndex, SearchPage, SearchQuery};
use crate::license::LicenseRegistry;
use crate::model::{
    version_id_for, Community, CommunityKind, FileEntry, MetadataDocument, Record, RecordVersion, Tier,
    UserAccount, UserId, VersionState,
};
use crate::stats::{CountryTable, EventType, RequesterContext, StatsStore, UsageAggregate};
use crate::store::{Mutation, Store};
use crate::validate::{check_file_name, validate_metadata};

/// Retries for check-and-set loops that lost a race.
const CAS_ATTEMPTS: usize = 32;
const INDEX_BATCH: usize = 256;

/// The caller of an operation, before any lookups.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Actor {
    pub user: Option<UserId>,
    /// Share-link token presented with the request.
    pub link_token: Option<String>,
}

impl Actor {
    pub fn anonymous() -> Self {
        Actor::default()
    }

    pub fn user(id: impl Into<UserId>) -> Self {
        Actor {
            user: Some(id.into()),
            link_token: None,
        }
    }

    pub fn link(token: impl Into<String>) -> Self {
        Actor {
            user: None,
            link_token: Some(token.into()),
        }
    }

    pub fn with_link(mut self, token: Option<String>) -> Self {
        self.link_token = token;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaDecision {
    pub allowed: bool,
    pub limit: u64,
    pub current: u64,
    pub incoming: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionStats {
    pub version_id: String,
    pub version_index: u32,
    pub stats: UsageAggregate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordStats {
    pub record_id: String,
    /// Element-wise sum over every version of the record.
    pub cumulative: UsageAggregate,
    /// The versions visible to the caller.
    pub versions: Vec<VersionStats>,
}

/// A freshly minted API token. `secret` is never stored or shown again.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MintedToken {
    #[serde(flatten)]
    pub info: ApiTokenInfo,
    pub secret: String,
}

/// A share link together with its resolved URL.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MintedLink {
    #[serde(flatten)]
    pub link: ShareLink,
    pub url: String,
}

#[derive(Default)]
struct IndexSignal {
    pending: Mutex<bool>,
    wake: Condvar,
}

pub struct Archive {
    config: DeploymentConfig,
    store: Store,
    index: SearchIndex,
    files: FileStore,
    stats: StatsStore,
    licenses: LicenseRegistry,
    countries: CountryTable,
    communities: BTreeMap<String, Community>,
    umbrella: String,
    clock: Arc<dyn Clock>,
    flush_lock: Mutex<()>,
    signal: IndexSignal,
}

impl Archive {
    /// Opens (or creates) a deployment under `config.data_dir`.
    pub fn open(config: DeploymentConfig) -> Result<Self> {
        Self::open_with_clock(config, Arc::new(SystemClock))
    }

    pub fn open_with_clock(config: DeploymentConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        config.check()?;
        std::fs::create_dir_all(&config.data_dir)?;
        let store = Store::open(&config.data_dir.join("archive.sqlite"))?;
        let files = FileStore::open(config.data_dir.join("files"))?;
        let stats = StatsStore::open(
            &config.data_dir.join("stats.sqlite"),
            Duration::hours(i64::from(config.salt_period_hours)),
        )?;
        let mut licenses = LicenseRegistry::seeded();
        for l in &config.licenses {
            licenses.insert(l.clone());
        }
        let countries = match &config.cidr_table {
            Some(path) => CountryTable::load(path)?,
            None => CountryTable::empty(),
        };
        let community_list = config.community_list();
        for c in &community_list {
            store.upsert_community(c)?;
        }
        for u in config.seed_users() {
            store.insert_user_if_absent(&u)?;
        }
        let archive = Archive {
            umbrella: config.umbrella().slug.clone(),
            communities: community_list.into_iter().map(|c| (c.slug.clone(), c)).collect(),
            config,
            store,
            index: SearchIndex::new(),
            files,
            stats,
            licenses,
            countries,
            clock,
            flush_lock: Mutex::new(()),
            signal: IndexSignal::default(),
        };
        archive.reindex_all()?;
        Ok(archive)
    }

    pub fn config(&self) -> &DeploymentConfig {
        &self.config
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn index(&self) -> &SearchIndex {
        &self.index
    }

    pub fn files(&self) -> &FileStore {
        &self.files
    }

    pub fn stats(&self) -> &StatsStore {
        &self.stats
    }

    pub fn licenses(&self) -> &LicenseRegistry {
        &self.licenses
    }

    pub fn communities(&self) -> Vec<Community> {
        self.communities.values().cloned().collect()
    }

    pub fn umbrella(&self) -> &str {
        &self.umbrella
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    fn export_context(&self) -> ExportContext<'_> {
        ExportContext {
            publisher: &self.config.display_name,
            licenses: &self.licenses,
        }
    }

    fn commit(&self, batch: Vec<Mutation>) -> Result<Vec<String>> {
        let touched = self.store.commit(batch)?;
        if !touched.is_empty() {
            self.notify_index();
        }
        Ok(touched)
    }

    // ---- identity -------------------------------------------------------

    fn account(&self, user_id: &str) -> Result<UserAccount> {
        match self.store.user(user_id)? {
            Some(u) if u.email_confirmed => Ok(u),
            _ => Err(ArchiveError::Unauthenticated),
        }
    }

    fn require_user(&self, actor: &Actor) -> Result<UserAccount> {
        match &actor.user {
            Some(id) => self.account(id),
            None => Err(ArchiveError::Unauthenticated),
        }
    }

    fn project_memberships(&self, user_id: &str) -> Result<BTreeSet<String>> {
        Ok(self
            .store
            .user(user_id)?
            .map(|u| {
                u.memberships
                    .into_iter()
                    .filter(|m| self.communities.get(m).is_some_and(|c| c.kind == CommunityKind::Project))
                    .collect()
            })
            .unwrap_or_default())
    }

    fn redeem_for(&self, token: &str, record: &Record, account: Option<&UserAccount>) -> Result<Redemption> {
        // a token minted for another record is treated as unknown here
        let link = self.store.share_link(token)?.filter(|l| l.record_id == record.record_id);
        let owner_projects = self.project_memberships(&record.owner)?;
        Ok(redeem(link.as_ref(), self.now(), account, &owner_projects))
    }

    /// Resolves a share-link token for `actor`, independent of any record.
    pub fn redeem_share_link(&self, token: &str, actor: &Actor) -> Result<Redemption> {
        let account = actor.user.as_deref().map(|id| self.account(id)).transpose()?;
        let link = self.store.share_link(token)?;
        let owner_projects = match &link {
            Some(l) => match self.store.record(&l.record_id)? {
                Some(r) => self.project_memberships(&r.owner)?,
                None => BTreeSet::new(),
            },
            None => BTreeSet::new(),
        };
        Ok(redeem(link.as_ref(), self.now(), account.as_ref(), &owner_projects))
    }

    /// Builds the permission subject of `actor` for one record.
    pub fn subject_for(&self, actor: &Actor, record: &Record) -> Result<Subject> {
        let account = actor.user.as_deref().map(|id| self.account(id)).transpose()?;
        let mut subject = account.as_ref().map_or_else(Subject::anonymous, Subject::user);
        if let Some(token) = &actor.link_token {
            subject = subject.with_link(self.redeem_for(token, record, account.as_ref())?);
        }
        Ok(subject)
    }

    fn load_record(&self, record_id: &str) -> Result<Record> {
        self.store.record(record_id)?.ok_or(ArchiveError::NotFound)
    }

    fn can_read(subject: &Subject, v: &RecordVersion) -> bool {
        evaluate(subject, Action::ReadMetadata, v).allowed
    }

    /// Loads a record the actor can see at least one version of.
    fn visible_record(&self, actor: &Actor, record_id: &str) -> Result<(Record, Subject)> {
        let record = self.load_record(record_id)?;
        let subject = self.subject_for(actor, &record)?;
        if !record.versions.iter().any(|v| Self::can_read(&subject, v)) {
            return Err(ArchiveError::NotFound);
        }
        Ok((record, subject))
    }

    fn authorize(subject: &Subject, action: Action, v: &RecordVersion) -> Result<()> {
        let decision = evaluate(subject, action, v);
        if decision.allowed {
            return Ok(());
        }
        match decision.reason {
            Some(DenyReason::AlreadyShared) => Err(ArchiveError::Conflict(ConflictKind::AlreadyShared)),
            Some(reason) => Err(ArchiveError::Denied(reason)),
            None => Err(ArchiveError::Denied(DenyReason::OwnerOnly)),
        }
    }

    fn pick_version<'r>(record: &'r Record, subject: &Subject, index: Option<u32>) -> Result<&'r RecordVersion> {
        match index {
            Some(i) => record
                .version(i)
                .filter(|v| Self::can_read(subject, v))
                .ok_or(ArchiveError::NotFound),
            None => record
                .versions
                .iter()
                .rev()
                .find(|v| Self::can_read(subject, v))
                .ok_or(ArchiveError::NotFound),
        }
    }

    // ---- records and versions --------------------------------------------

    pub fn create_draft(&self, actor: &Actor, metadata: MetadataDocument) -> Result<RecordVersion> {
        let owner = self.require_user(actor)?;
        validate_metadata(&metadata, &self.licenses).into_result()?;
        let now = self.now();
        for _ in 0..CAS_ATTEMPTS {
            let record_id = new_record_id();
            let version = RecordVersion {
                version_id: version_id_for(&record_id, 1),
                record_id: record_id.clone(),
                version_index: 1,
                state: VersionState::Draft,
                tier: Tier::None,
                shared_with: None,
                owner: owner.user_id.clone(),
                metadata: metadata.clone(),
                files: Vec::new(),
                created_at: now,
                shared_at: None,
                revision: 0,
            };
            let batch = vec![
                Mutation::CreateRecord {
                    record_id,
                    owner: owner.user_id.clone(),
                    created_at: now,
                },
                Mutation::InsertVersion(version.clone()),
            ];
            match self.commit(batch) {
                Ok(_) => return Ok(version),
                // id collision: draw again
                Err(ArchiveError::Conflict(ConflictKind::Concurrent)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(ArchiveError::Conflict(ConflictKind::Concurrent))
    }

    /// The given version, or the newest version the actor can read.
    pub fn read_version(&self, actor: &Actor, record_id: &str, index: Option<u32>) -> Result<RecordVersion> {
        let record = self.load_record(record_id)?;
        let subject = self.subject_for(actor, &record)?;
        Self::pick_version(&record, &subject, index).cloned()
    }

    /// All versions the actor can read, ordered by index.
    pub fn list_versions(&self, actor: &Actor, record_id: &str) -> Result<Vec<RecordVersion>> {
        let (record, subject) = self.visible_record(actor, record_id)?;
        Ok(record.versions.into_iter().filter(|v| Self::can_read(&subject, v)).collect())
    }

    /// The open draft if there is one, else the latest version.
    fn edit_target(record: &Record) -> Result<&RecordVersion> {
        record.open_draft().or_else(|| record.latest()).ok_or(ArchiveError::NotFound)
    }

    /// Replaces the metadata of a version (default: the open draft, else the latest).
    pub fn update_metadata(
        &self,
        actor: &Actor,
        record_id: &str,
        index: Option<u32>,
        metadata: MetadataDocument,
    ) -> Result<RecordVersion> {
        for _ in 0..CAS_ATTEMPTS {
            let (record, subject) = self.visible_record(actor, record_id)?;
            let target = match index {
                Some(i) => record.version(i).ok_or(ArchiveError::NotFound)?,
                None => Self::edit_target(&record)?,
            };
            Self::authorize(&subject, Action::EditMetadata, target)?;
            validate_metadata(&metadata, &self.licenses).into_result()?;
            let mut updated = target.clone();
            updated.metadata = metadata.clone();
            match self.commit(vec![Mutation::UpdateVersion {
                version: updated.clone(),
                expected_revision: target.revision,
            }]) {
                Ok(_) => {
                    updated.revision += 1;
                    return Ok(updated);
                }
                Err(ArchiveError::Conflict(ConflictKind::Concurrent)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(ArchiveError::Conflict(ConflictKind::Concurrent))
    }

    /// Opens a new draft after the latest shared version.
    pub fn new_version(&self, actor: &Actor, record_id: &str, import_files: bool) -> Result<RecordVersion> {
        let (record, subject) = self.visible_record(actor, record_id)?;
        if record.open_draft().is_some() {
            return Err(ArchiveError::Conflict(ConflictKind::DraftExists));
        }
        let latest = record.latest().ok_or(ArchiveError::NotFound)?;
        Self::authorize(&subject, Action::CreateVersion, latest)?;
        let index = latest.version_index + 1;
        let draft = RecordVersion {
            version_id: version_id_for(&record.record_id, index),
            record_id: record.record_id.clone(),
            version_index: index,
            state: VersionState::Draft,
            tier: Tier::None,
            shared_with: None,
            owner: record.owner.clone(),
            metadata: latest.metadata.clone(),
            files: if import_files { latest.files.clone() } else { Vec::new() },
            created_at: self.now(),
            shared_at: None,
            revision: 0,
        };
        match self.commit(vec![Mutation::InsertVersion(draft.clone())]) {
            Ok(_) => Ok(draft),
            // someone else opened version `index` first
            Err(ArchiveError::Conflict(_)) => Err(ArchiveError::Conflict(ConflictKind::DraftExists)),
            Err(e) => Err(e),
        }
    }

    /// Shares the open draft, or promotes a community-tier version to the consortium.
    pub fn share(&self, actor: &Actor, record_id: &str, tier: Tier, community: Option<&str>) -> Result<RecordVersion> {
        let (record, subject) = self.visible_record(actor, record_id)?;
        let target = Self::edit_target(&record)?;
        Self::authorize(&subject, Action::Share, target)?;
        let owner = self.account(&record.owner)?;
        let shared_with = match tier {
            Tier::None => return Err(ArchiveError::validation("tier", "must be community or consortium")),
            Tier::Community => {
                let slug = community.ok_or_else(|| ArchiveError::validation("community", "required"))?;
                match self.communities.get(slug) {
                    None => return Err(ArchiveError::validation("community", "unknown community")),
                    Some(c) if c.kind == CommunityKind::Umbrella => {
                        return Err(ArchiveError::validation("community", "use the consortium tier"))
                    }
                    Some(_) => {}
                }
                if !owner.memberships.contains(slug) {
                    return Err(ArchiveError::Denied(DenyReason::NotMember));
                }
                Some(slug.to_string())
            }
            Tier::Consortium => {
                if community.is_some_and(|c| c != self.umbrella) {
                    return Err(ArchiveError::validation("community", "consortium tier targets the umbrella community"));
                }
                if !owner.memberships.contains(&self.umbrella) {
                    return Err(ArchiveError::Denied(DenyReason::NotMember));
                }
                None
            }
        };
        if target.is_shared() && tier != Tier::Consortium {
            return Err(ArchiveError::Conflict(ConflictKind::AlreadyShared));
        }
        let mut updated = target.clone();
        updated.state = VersionState::Shared;
        updated.tier = tier;
        updated.shared_with = shared_with;
        updated.shared_at = Some(target.shared_at.unwrap_or_else(|| self.now()));
        self.commit(vec![Mutation::UpdateVersion {
            version: updated.clone(),
            expected_revision: target.revision,
        }])?;
        updated.revision += 1;
        Ok(updated)
    }

    /// Deletes the open draft; a record left without versions is removed too.
    pub fn discard_draft(&self, actor: &Actor, record_id: &str) -> Result<()> {
        let (record, subject) = self.visible_record(actor, record_id)?;
        if subject.user.as_deref() != Some(record.owner.as_str()) {
            return Err(ArchiveError::Denied(DenyReason::OwnerOnly));
        }
        let draft = record.open_draft().ok_or(ArchiveError::NotFound)?;
        let mut batch = vec![Mutation::DeleteDraft {
            version_id: draft.version_id.clone(),
            expected_revision: draft.revision,
        }];
        if record.versions.len() == 1 {
            batch.push(Mutation::DeleteRecord {
                record_id: record.record_id.clone(),
            });
        }
        self.commit(batch)?;
        Ok(())
    }

    // ---- files -------------------------------------------------------------

    pub fn enforce_quota(&self, version: &RecordVersion, incoming: u64) -> QuotaDecision {
        let limit = self.config.quota_for(&version.record_id);
        let current = version.total_size();
        QuotaDecision {
            allowed: current.checked_add(incoming).is_some_and(|t| t <= limit),
            limit,
            current,
            incoming,
        }
    }

    fn writable_draft(&self, actor: &Actor, record_id: &str) -> Result<RecordVersion> {
        let (record, subject) = self.visible_record(actor, record_id)?;
        let target = Self::edit_target(&record)?;
        Self::authorize(&subject, Action::ModifyDraftFiles, target)?;
        Ok(target.clone())
    }

    /// Streams `content` into the open draft under `name`.
    ///
    /// `declared_size` (the request's Content-Length) is checked against the
    /// quota before any byte is read; the stream itself is capped at the
    /// remaining allowance either way.
    pub fn attach_file(
        &self,
        actor: &Actor,
        record_id: &str,
        name: &str,
        declared_size: Option<u64>,
        content: impl Read,
    ) -> Result<FileEntry> {
        check_file_name(name).map_err(|reason| ArchiveError::validation("name", reason))?;
        let draft = self.writable_draft(actor, record_id)?;
        if draft.file(name).is_some() {
            return Err(ArchiveError::Conflict(ConflictKind::DuplicateName));
        }
        let decision = self.enforce_quota(&draft, declared_size.unwrap_or(0));
        if !decision.allowed {
            return Err(ArchiveError::QuotaExceeded {
                limit: decision.limit,
                requested: decision.current.saturating_add(decision.incoming),
            });
        }
        let remaining = decision.limit - decision.current;
        let staged = match self.files.stage(content, Some(remaining)) {
            Ok(s) => s,
            Err(e) if is_limit_exceeded(&e) => {
                return Err(ArchiveError::QuotaExceeded {
                    limit: decision.limit,
                    requested: decision.limit.saturating_add(1),
                })
            }
            Err(e) => return Err(e.into()),
        };
        if declared_size.is_some_and(|d| d != staged.size) {
            return Err(ArchiveError::BadRequest(format!(
                "body has {} bytes, {} declared",
                staged.size,
                declared_size.unwrap_or_default()
            )));
        }
        let size = staged.size;
        let digest = self.files.persist(staged)?;
        let entry = FileEntry {
            name: name.to_string(),
            size,
            checksum: format_checksum(&digest),
            content_ref: digest,
        };
        for _ in 0..CAS_ATTEMPTS {
            let current = self.writable_draft(actor, record_id)?;
            if current.version_id != draft.version_id {
                return Err(ArchiveError::Conflict(ConflictKind::Concurrent));
            }
            if current.file(name).is_some() {
                return Err(ArchiveError::Conflict(ConflictKind::DuplicateName));
            }
            let decision = self.enforce_quota(&current, size);
            if !decision.allowed {
                return Err(ArchiveError::QuotaExceeded {
                    limit: decision.limit,
                    requested: decision.current.saturating_add(size),
                });
            }
            let mut updated = current.clone();
            updated.files.push(entry.clone());
            match self.commit(vec![Mutation::UpdateVersion {
                version: updated,
                expected_revision: current.revision,
            }]) {
                Ok(_) => return Ok(entry),
                Err(ArchiveError::Conflict(ConflictKind::Concurrent)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(ArchiveError::Conflict(ConflictKind::Concurrent))
    }

    pub fn remove_file(&self, actor: &Actor, record_id: &str, name: &str) -> Result<()> {
        for _ in 0..CAS_ATTEMPTS {
            let current = self.writable_draft(actor, record_id)?;
            if current.file(name).is_none() {
                return Err(ArchiveError::NotFound);
            }
            let mut updated = current.clone();
            updated.files.retain(|f| f.name != name);
            match self.commit(vec![Mutation::UpdateVersion {
                version: updated,
                expected_revision: current.revision,
            }]) {
                Ok(_) => return Ok(()),
                Err(ArchiveError::Conflict(ConflictKind::Concurrent)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(ArchiveError::Conflict(ConflictKind::Concurrent))
    }

    /// Opens a file of the given (or newest readable) version for download.
    pub fn open_file(
        &self,
        actor: &Actor,
        record_id: &str,
        index: Option<u32>,
        name: &str,
    ) -> Result<(RecordVersion, FileEntry, File)> {
        let record = self.load_record(record_id)?;
        let subject = self.subject_for(actor, &record)?;
        let version = Self::pick_version(&record, &subject, index)?;
        Self::authorize(&subject, Action::DownloadFiles, version)?;
        let entry = version.file(name).ok_or(ArchiveError::NotFound)?.clone();
        let file = self.files.open_blob(&entry.content_ref)?;
        Ok((version.clone(), entry, file))
    }

    // ---- share links ---------------------------------------------------------

    pub fn mint_share_link(
        &self,
        actor: &Actor,
        record_id: &str,
        permission: LinkPermission,
        expires_at: Option<DateTime<Utc>>,
    ) -> Result<MintedLink> {
        let (record, subject) = self.visible_record(actor, record_id)?;
        let latest = record.latest().ok_or(ArchiveError::NotFound)?;
        Self::authorize(&subject, Action::MintLink, latest)?;
        let link = ShareLink {
            token: new_link_token(),
            record_id: record.record_id.clone(),
            permission,
            created_by: subject.user.clone().unwrap_or_default(),
            created_at: self.now(),
            expires_at,
            revoked: false,
        };
        self.commit(vec![Mutation::InsertShareLink(link.clone())])?;
        let url = link.url(&self.config.base_url);
        Ok(MintedLink { link, url })
    }

    /// Revokes a link. Allowed for its creator and the record owner; repeat calls succeed.
    pub fn revoke_share_link(&self, actor: &Actor, token: &str) -> Result<()> {
        let user = self.require_user(actor)?;
        let link = self.store.share_link(token)?.ok_or(ArchiveError::NotFound)?;
        let owner = self.store.record(&link.record_id)?.map(|r| r.owner);
        if link.created_by != user.user_id && owner.as_deref() != Some(user.user_id.as_str()) {
            return Err(ArchiveError::Denied(DenyReason::OwnerOnly));
        }
        if !link.revoked {
            self.commit(vec![Mutation::RevokeShareLink {
                token: token.to_string(),
            }])?;
        }
        Ok(())
    }

    /// Links of a record, for its owner.
    pub fn share_links(&self, actor: &Actor, record_id: &str) -> Result<Vec<MintedLink>> {
        let (record, subject) = self.visible_record(actor, record_id)?;
        if subject.user.as_deref() != Some(record.owner.as_str()) {
            return Err(ArchiveError::Denied(DenyReason::OwnerOnly));
        }
        Ok(self
            .store
            .share_links_for(record_id)?
            .into_iter()
            .map(|link| MintedLink {
                url: link.url(&self.config.base_url),
                link,
            })
            .collect())
    }

    // ---- API tokens and accounts ------------------------------------------------

    /// Mints a token for an existing, confirmed user.
    pub fn mint_api_token(&self, user_id: &str, label: &str) -> Result<MintedToken> {
        let user = self.account(user_id)?;
        let secret = new_api_secret();
        let token = ApiToken {
            token_id: new_token_id(),
            token_hash: sha256_hex(secret.as_bytes()),
            user_id: user.user_id,
            label: label.to_string(),
            created_at: self.now(),
            revoked: false,
        };
        self.commit(vec![Mutation::InsertApiToken(token.clone())])?;
        Ok(MintedToken {
            info: ApiTokenInfo::from(&token),
            secret,
        })
    }

    pub fn authenticate(&self, bearer: &str) -> Result<UserAccount> {
        let token = self
            .store
            .api_token_by_hash(&sha256_hex(bearer.as_bytes()))?
            .filter(|t| !t.revoked)
            .ok_or(ArchiveError::Unauthenticated)?;
        self.account(&token.user_id)
    }

    pub fn api_tokens(&self, user_id: &str) -> Result<Vec<ApiTokenInfo>> {
        Ok(self.store.api_tokens_for(user_id)?.iter().map(ApiTokenInfo::from).collect())
    }

    pub fn revoke_api_token(&self, user_id: &str, token_id: &str) -> Result<()> {
        if !self.store.api_tokens_for(user_id)?.iter().any(|t| t.token_id == token_id) {
            return Err(ArchiveError::NotFound);
        }
        self.commit(vec![Mutation::RevokeApiToken {
            user_id: user_id.to_string(),
            token_id: token_id.to_string(),
        }])?;
        Ok(())
    }

    pub fn user(&self, user_id: &str) -> Result<UserAccount> {
        self.store.user(user_id)?.ok_or(ArchiveError::NotFound)
    }

    fn membership_target(&self, admin: &Actor, slug: &str, user_id: &str) -> Result<(Community, UserAccount)> {
        let admin = self.require_user(admin)?;
        let community = self.communities.get(slug).cloned().ok_or(ArchiveError::NotFound)?;
        if !self.config.is_manager(slug, &admin.user_id) {
            return Err(ArchiveError::Denied(DenyReason::NotManager));
        }
        let user = self.store.user(user_id)?.ok_or(ArchiveError::NotFound)?;
        Ok((community, user))
    }

    /// Adds a membership; joining a project also joins the umbrella community.
    pub fn add_member(&self, admin: &Actor, slug: &str, user_id: &str) -> Result<UserAccount> {
        let (community, _) = self.membership_target(admin, slug, user_id)?;
        let mut batch = vec![Mutation::AddMembership {
            user_id: user_id.to_string(),
            slug: slug.to_string(),
        }];
        if community.kind == CommunityKind::Project {
            batch.push(Mutation::AddMembership {
                user_id: user_id.to_string(),
                slug: self.umbrella.clone(),
            });
        }
        self.commit(batch)?;
        self.user(user_id)
    }

    /// Removes a membership; leaving the last project also leaves the umbrella.
    pub fn remove_member(&self, admin: &Actor, slug: &str, user_id: &str) -> Result<UserAccount> {
        let (community, user) = self.membership_target(admin, slug, user_id)?;
        let other_projects = user
            .memberships
            .iter()
            .filter(|m| m.as_str() != slug)
            .any(|m| self.communities.get(m).is_some_and(|c| c.kind == CommunityKind::Project));
        let mut batch = vec![Mutation::RemoveMembership {
            user_id: user_id.to_string(),
            slug: slug.to_string(),
        }];
        match community.kind {
            CommunityKind::Umbrella if other_projects => {
                return Err(ArchiveError::BadRequest(
                    "user still belongs to project communities; remove those first".into(),
                ))
            }
            CommunityKind::Project if !other_projects => batch.push(Mutation::RemoveMembership {
                user_id: user_id.to_string(),
                slug: self.umbrella.clone(),
            }),
            _ => {}
        }
        self.commit(batch)?;
        self.user(user_id)
    }

    // ---- search and index ----------------------------------------------------------

    pub fn search(&self, actor: &Actor, query: &SearchQuery) -> Result<SearchPage> {
        query.check()?;
        let empty = || SearchPage {
            total: 0,
            page: query.page,
            page_size: query.page_size,
            hits: Vec::new(),
        };
        let account = match &actor.user {
            Some(id) => self.account(id)?,
            None if query.filters.owner_me => return Err(ArchiveError::Unauthenticated),
            // share links grant access to single records, never to listings
            None => return Ok(empty()),
        };
        let candidates = if query.filters.owner_me {
            // the workspace includes drafts, which are not indexed
            self.store
                .versions_owned_by(&account.user_id)?
                .iter()
                .map(|v| IndexDocument::project(v, &self.umbrella))
                .filter(|d| crate::index::matches_filters(d, &query.filters))
                .collect()
        } else {
            let subject = Subject::user(&account);
            self.index.collect(|d| {
                evaluate(&subject, Action::ReadMetadata, d).allowed && crate::index::matches_filters(d, &query.filters)
            })
        };
        Ok(rank_and_page(candidates, query))
    }

    fn project_from_store(&self, version_id: &str) -> Result<Option<IndexDocument>> {
        Ok(self
            .store
            .version(version_id)?
            .filter(RecordVersion::is_shared)
            .map(|v| IndexDocument::project(&v, &self.umbrella)))
    }

    /// Applies every queued index task. Returns how many were processed.
    pub fn flush_index(&self) -> Result<usize> {
        let _guard = self.flush_lock.lock().unwrap_or_else(|p| p.into_inner());
        let mut processed = 0;
        loop {
            let tasks = self.store.pending_index_tasks(INDEX_BATCH)?;
            let Some(&(last, _)) = tasks.last() else {
                return Ok(processed);
            };
            let ids: BTreeSet<&str> = tasks.iter().map(|(_, id)| id.as_str()).collect();
            for id in ids {
                match self.project_from_store(id)? {
                    Some(doc) => self.index.upsert(doc),
                    None => {
                        self.index.remove(id);
                    }
                }
            }
            self.store.ack_index_tasks(last)?;
            processed += tasks.len();
        }
    }

    fn expected_index(&self) -> Result<BTreeMap<String, IndexDocument>> {
        Ok(self
            .store
            .shared_versions()?
            .iter()
            .map(|v| (v.version_id.clone(), IndexDocument::project(v, &self.umbrella)))
            .collect())
    }

    pub fn verify_consistency(&self) -> Result<ConsistencyReport> {
        Ok(ConsistencyReport::compare(&self.expected_index()?, &self.index.snapshot()))
    }

    /// Rebuilds the index from the primary store and drops the queued tasks it covers.
    pub fn reindex_all(&self) -> Result<()> {
        let _guard = self.flush_lock.lock().unwrap_or_else(|p| p.into_inner());
        let upto = self.store.max_index_task_seq()?;
        self.index.replace_all(self.expected_index()?);
        self.store.ack_index_tasks(upto)?;
        Ok(())
    }

    fn notify_index(&self) {
        *self.signal.pending.lock().unwrap_or_else(|p| p.into_inner()) = true;
        self.signal.wake.notify_all();
    }

    /// Starts the background index consumer. It stops when the handle is dropped.
    pub fn start_index_worker(self: &Arc<Self>) -> IndexWorker {
        let stop = Arc::new(Mutex::new(false));
        let weak: Weak<Archive> = Arc::downgrade(self);
        let stop_flag = stop.clone();
        let handle = std::thread::Builder::new()
            .name("index-worker".into())
            .spawn(move || loop {
                let Some(archive) = weak.upgrade() else { return };
                if *stop_flag.lock().unwrap_or_else(|p| p.into_inner()) {
                    return;
                }
                if let Err(e) = archive.flush_index() {
                    tracing::warn!(error = %e, "index flush failed");
                }
                let pending = archive.signal.pending.lock().unwrap_or_else(|p| p.into_inner());
                let (mut pending, _) = archive
                    .signal
                    .wake
                    .wait_timeout_while(pending, StdDuration::from_millis(500), |p| !*p)
                    .unwrap_or_else(|p| p.into_inner());
                *pending = false;
            })
            .expect("spawn index worker");
        IndexWorker {
            archive: Arc::downgrade(self),
            stop,
            handle: Some(handle),
        }
    }

    // ---- usage statistics -------------------------------------------------------------

    pub fn ingest_view(&self, version_id: &str, ctx: RequesterContext) -> Result<()> {
        let v = self.store.version(version_id)?.ok_or(ArchiveError::NotFound)?;
        self.stats
            .ingest(self.now(), EventType::View, &v.version_id, &v.record_id, None, ctx, &self.countries)?;
        Ok(())
    }

    pub fn ingest_download(&self, version_id: &str, file_name: &str, ctx: RequesterContext) -> Result<()> {
        let v = self.store.version(version_id)?.ok_or(ArchiveError::NotFound)?;
        if v.file(file_name).is_none() {
            return Err(ArchiveError::NotFound);
        }
        self.stats.ingest(
            self.now(),
            EventType::Download,
            &v.version_id,
            &v.record_id,
            Some(file_name),
            ctx,
            &self.countries,
        )?;
        Ok(())
    }

    pub fn stats_for_version(&self, actor: &Actor, record_id: &str, index: u32) -> Result<UsageAggregate> {
        let record = self.load_record(record_id)?;
        let subject = self.subject_for(actor, &record)?;
        let v = Self::pick_version(&record, &subject, Some(index))?;
        Self::authorize(&subject, Action::ViewStats, v)?;
        Ok(self.stats.version_aggregate(&v.version_id)?.finish())
    }

    /// Per-version statistics for the caller's visible versions plus the record total.
    pub fn stats_for_record(&self, actor: &Actor, record_id: &str) -> Result<RecordStats> {
        let (record, subject) = self.visible_record(actor, record_id)?;
        let latest = Self::pick_version(&record, &subject, None)?;
        Self::authorize(&subject, Action::ViewStats, latest)?;
        let mut versions = Vec::new();
        for v in record.versions.iter().filter(|v| evaluate(&subject, Action::ViewStats, *v).allowed) {
            versions.push(VersionStats {
                version_id: v.version_id.clone(),
                version_index: v.version_index,
                stats: self.stats.version_aggregate(&v.version_id)?.finish(),
            });
        }
        let all: Vec<String> = record.versions.iter().map(|v| v.version_id.clone()).collect();
        Ok(RecordStats {
            record_id: record.record_id.clone(),
            cumulative: self.stats.cumulative(&all)?,
            versions,
        })
    }

    // ---- export --------------------------------------------------------------------------

    pub fn export(
        &self,
        actor: &Actor,
        record_id: &str,
        index: Option<u32>,
        format: ExportFormat,
    ) -> Result<(RecordVersion, ExportedDocument)> {
        let version = self.read_version(actor, record_id, index)?;
        let doc = export::export(&version, format, self.export_context())?;
        Ok((version, doc))
    }

    pub fn export_version(&self, version: &RecordVersion, format: ExportFormat) -> Result<ExportedDocument> {
        export::export(version, format, self.export_context())
    }
}

/// Handle to the background index consumer.
pub struct IndexWorker {
    archive: Weak<Archive>,
    stop: Arc<Mutex<bool>>,
    handle: Option<JoinHandle<()>>,
}

impl Drop for IndexWorker {
    fn drop(&mut self) {
        *self.stop.lock().unwrap_or_else(|p| p.into_inner()) = true;
        if let Some(a) = self.archive.upgrade() {
            a.notify_index();
        }
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
