//! Transactional primary store (SQLite), the source of truth for every entity.
//!
//! Writes go through [`Store::commit`], which applies a batch of [`Mutation`]s
//! in one immediate transaction. Every mutation touching a version also
//! appends a row to `index_tasks`, so the secondary index can catch up after
//! a crash or restart.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use rusqlite::{params, Connection, ErrorCode, OptionalExtension, Row, TransactionBehavior};

use crate::access::{ApiToken, LinkPermission, ShareLink};
use crate::error::{ArchiveError, ConflictKind, Result};
use crate::model::{
    Community, CommunityKind, FileEntry, MetadataDocument, Record, RecordVersion, Tier, UserAccount,
    VersionState,
};

const SCHEMA: &str = r#"
CREATE TABLE IF NOT EXISTS users (
    user_id         TEXT PRIMARY KEY,
    email           TEXT NOT NULL,
    email_confirmed INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS communities (
    slug         TEXT PRIMARY KEY,
    display_name TEXT NOT NULL,
    kind         TEXT NOT NULL CHECK (kind IN ('project', 'umbrella'))
);
CREATE TABLE IF NOT EXISTS memberships (
    user_id TEXT NOT NULL REFERENCES users(user_id),
    slug    TEXT NOT NULL REFERENCES communities(slug),
    PRIMARY KEY (user_id, slug)
);
CREATE TABLE IF NOT EXISTS records (
    record_id  TEXT PRIMARY KEY,
    owner      TEXT NOT NULL REFERENCES users(user_id),
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS versions (
    version_id    TEXT PRIMARY KEY,
    record_id     TEXT NOT NULL REFERENCES records(record_id),
    version_index INTEGER NOT NULL CHECK (version_index >= 1),
    state         TEXT NOT NULL,
    tier          TEXT NOT NULL,
    shared_with   TEXT REFERENCES communities(slug),
    owner         TEXT NOT NULL,
    metadata      TEXT NOT NULL,
    files         TEXT NOT NULL,
    created_at    INTEGER NOT NULL,
    shared_at     INTEGER,
    revision      INTEGER NOT NULL,
    UNIQUE (record_id, version_index)
);
CREATE INDEX IF NOT EXISTS versions_owner ON versions(owner);
CREATE TABLE IF NOT EXISTS share_links (
    token      TEXT PRIMARY KEY,
    record_id  TEXT NOT NULL REFERENCES records(record_id),
    permission TEXT NOT NULL,
    created_by TEXT NOT NULL,
    created_at INTEGER NOT NULL,
    expires_at INTEGER,
    revoked    INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS api_tokens (
    token_id   TEXT PRIMARY KEY,
    token_hash TEXT NOT NULL UNIQUE,
    user_id    TEXT NOT NULL REFERENCES users(user_id),
    label      TEXT NOT NULL,
    created_at INTEGER NOT NULL,
    revoked    INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS index_tasks (
    seq        INTEGER PRIMARY KEY AUTOINCREMENT,
    version_id TEXT NOT NULL
);
"#;

/// One write in a [`Store::commit`] batch.
#[derive(Clone, Debug)]
pub enum Mutation {
    CreateRecord {
        record_id: String,
        owner: String,
        created_at: DateTime<Utc>,
    },
    /// Fails with a conflict if the (record, index) slot is already taken.
    InsertVersion(RecordVersion),
    /// Check-and-set against `expected_revision`; bumps the stored revision.
    UpdateVersion {
        version: RecordVersion,
        expected_revision: u64,
    },
    /// Only drafts can be deleted.
    DeleteDraft {
        version_id: String,
        expected_revision: u64,
    },
    /// Removes a record that no longer has versions.
    DeleteRecord { record_id: String },
    InsertShareLink(ShareLink),
    RevokeShareLink { token: String },
    InsertApiToken(ApiToken),
    RevokeApiToken { user_id: String, token_id: String },
    AddMembership { user_id: String, slug: String },
    RemoveMembership { user_id: String, slug: String },
}

pub struct Store {
    conn: Mutex<Connection>,
}

fn micros(t: DateTime<Utc>) -> i64 {
    t.timestamp_micros()
}

fn from_micros(v: i64) -> DateTime<Utc> {
    DateTime::from_timestamp_micros(v).expect("timestamp in range")
}

fn map_write_err(e: rusqlite::Error) -> ArchiveError {
    match e.sqlite_error() {
        Some(err) if err.code == ErrorCode::ConstraintViolation => {
            let msg = e.to_string();
            if msg.contains("UNIQUE") || msg.contains("PRIMARY KEY") {
                ArchiveError::Conflict(ConflictKind::Concurrent)
            } else {
                ArchiveError::Constraint(msg)
            }
        }
        Some(err) if err.code == ErrorCode::DatabaseBusy || err.code == ErrorCode::DatabaseLocked => {
            ArchiveError::Conflict(ConflictKind::Concurrent)
        }
        _ => ArchiveError::Storage(e),
    }
}

fn version_from_row(row: &Row<'_>) -> rusqlite::Result<RecordVersion> {
    let parse_err = |i: usize, msg: String| {
        rusqlite::Error::FromSqlConversionFailure(i, rusqlite::types::Type::Text, msg.into())
    };
    let state: String = row.get(3)?;
    let tier: String = row.get(4)?;
    let metadata: String = row.get(7)?;
    let files: String = row.get(8)?;
    Ok(RecordVersion {
        version_id: row.get(0)?,
        record_id: row.get(1)?,
        version_index: row.get(2)?,
        state: VersionState::parse(&state).ok_or_else(|| parse_err(3, state.clone()))?,
        tier: Tier::parse(&tier).ok_or_else(|| parse_err(4, tier.clone()))?,
        shared_with: row.get(5)?,
        owner: row.get(6)?,
        metadata: serde_json::from_str::<MetadataDocument>(&metadata)
            .map_err(|e| parse_err(7, e.to_string()))?,
        files: serde_json::from_str::<Vec<FileEntry>>(&files).map_err(|e| parse_err(8, e.to_string()))?,
        created_at: from_micros(row.get(9)?),
        shared_at: row.get::<_, Option<i64>>(10)?.map(from_micros),
        revision: row.get::<_, i64>(11)? as u64,
    })
}

const VERSION_COLUMNS: &str = "version_id, record_id, version_index, state, tier, shared_with, owner, \
     metadata, files, created_at, shared_at, revision";

fn link_from_row(row: &Row<'_>) -> rusqlite::Result<ShareLink> {
    let perm: String = row.get(2)?;
    Ok(ShareLink {
        token: row.get(0)?,
        record_id: row.get(1)?,
        permission: LinkPermission::parse(&perm).unwrap_or(LinkPermission::View),
        created_by: row.get(3)?,
        created_at: from_micros(row.get(4)?),
        expires_at: row.get::<_, Option<i64>>(5)?.map(from_micros),
        revoked: row.get(6)?,
    })
}

fn token_from_row(row: &Row<'_>) -> rusqlite::Result<ApiToken> {
    Ok(ApiToken {
        token_id: row.get(0)?,
        token_hash: row.get(1)?,
        user_id: row.get(2)?,
        label: row.get(3)?,
        created_at: from_micros(row.get(4)?),
        revoked: row.get(5)?,
    })
}

impl Store {
    pub fn open(path: &Path) -> Result<Self> {
        Self::init(Connection::open(path)?)
    }

    pub fn open_in_memory() -> Result<Self> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self> {
        conn.pragma_update(None, "foreign_keys", true)?;
        conn.query_row("PRAGMA journal_mode = WAL", [], |_| Ok(()))?;
        conn.pragma_update(None, "synchronous", "NORMAL")?;
        conn.execute_batch(SCHEMA)?;
        Ok(Store {
            conn: Mutex::new(conn),
        })
    }

    fn conn(&self) -> std::sync::MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }

    // ---- seeding -------------------------------------------------------

    pub fn upsert_community(&self, c: &Community) -> Result<()> {
        self.conn().execute(
            "INSERT INTO communities (slug, display_name, kind) VALUES (?1, ?2, ?3)
             ON CONFLICT(slug) DO UPDATE SET display_name = excluded.display_name, kind = excluded.kind",
            params![c.slug, c.display_name, c.kind.as_str()],
        )?;
        Ok(())
    }

    /// Inserts a user with its memberships; existing users are left untouched.
    pub fn insert_user_if_absent(&self, u: &UserAccount) -> Result<bool> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        let inserted = tx.execute(
            "INSERT OR IGNORE INTO users (user_id, email, email_confirmed) VALUES (?1, ?2, ?3)",
            params![u.user_id, u.email, u.email_confirmed],
        )? == 1;
        if inserted {
            for m in &u.memberships {
                tx.execute(
                    "INSERT OR IGNORE INTO memberships (user_id, slug) VALUES (?1, ?2)",
                    params![u.user_id, m],
                )?;
            }
        }
        tx.commit()?;
        Ok(inserted)
    }

    pub fn set_email_confirmed(&self, user_id: &str, confirmed: bool) -> Result<()> {
        self.conn().execute(
            "UPDATE users SET email_confirmed = ?2 WHERE user_id = ?1",
            params![user_id, confirmed],
        )?;
        Ok(())
    }

    // ---- reads ---------------------------------------------------------

    pub fn user(&self, user_id: &str) -> Result<Option<UserAccount>> {
        let conn = self.conn();
        let base = conn
            .query_row(
                "SELECT user_id, email, email_confirmed FROM users WHERE user_id = ?1",
                params![user_id],
                |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?, r.get::<_, bool>(2)?)),
            )
            .optional()?;
        let Some((user_id, email, email_confirmed)) = base else {
            return Ok(None);
        };
        let mut stmt = conn.prepare_cached("SELECT slug FROM memberships WHERE user_id = ?1")?;
        let memberships = stmt
            .query_map(params![user_id], |r| r.get::<_, String>(0))?
            .collect::<rusqlite::Result<BTreeSet<_>>>()?;
        Ok(Some(UserAccount {
            user_id,
            email,
            email_confirmed,
            memberships,
        }))
    }

    pub fn users(&self) -> Result<Vec<UserAccount>> {
        let ids: Vec<String> = {
            let conn = self.conn();
            let mut stmt = conn.prepare("SELECT user_id FROM users ORDER BY user_id")?;
            let rows = stmt.query_map([], |r| r.get(0))?;
            rows.collect::<rusqlite::Result<_>>()?
        };
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            if let Some(u) = self.user(&id)? {
                out.push(u);
            }
        }
        Ok(out)
    }

    pub fn communities(&self) -> Result<Vec<Community>> {
        let conn = self.conn();
        let mut stmt = conn.prepare("SELECT slug, display_name, kind FROM communities ORDER BY slug")?;
        let rows = stmt.query_map([], |r| {
            let kind: String = r.get(2)?;
            Ok(Community {
                slug: r.get(0)?,
                display_name: r.get(1)?,
                kind: CommunityKind::parse(&kind).unwrap_or(CommunityKind::Project),
            })
        })?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    pub fn record(&self, record_id: &str) -> Result<Option<Record>> {
        let conn = self.conn();
        let head = conn
            .query_row(
                "SELECT owner, created_at FROM records WHERE record_id = ?1",
                params![record_id],
                |r| Ok((r.get::<_, String>(0)?, r.get::<_, i64>(1)?)),
            )
            .optional()?;
        let Some((owner, created_at)) = head else {
            return Ok(None);
        };
        let mut stmt = conn.prepare_cached(&format!(
            "SELECT {VERSION_COLUMNS} FROM versions WHERE record_id = ?1 ORDER BY version_index"
        ))?;
        let versions = stmt
            .query_map(params![record_id], version_from_row)?
            .collect::<rusqlite::Result<Vec<_>>>()?;
        Ok(Some(Record {
            record_id: record_id.to_string(),
            owner,
            created_at: from_micros(created_at),
            versions,
        }))
    }

    pub fn record_ids(&self) -> Result<Vec<String>> {
        let conn = self.conn();
        let mut stmt = conn.prepare("SELECT record_id FROM records ORDER BY record_id")?;
        let rows = stmt.query_map([], |r| r.get(0))?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    pub fn version(&self, version_id: &str) -> Result<Option<RecordVersion>> {
        let conn = self.conn();
        let v = conn
            .query_row(
                &format!("SELECT {VERSION_COLUMNS} FROM versions WHERE version_id = ?1"),
                params![version_id],
                version_from_row,
            )
            .optional()?;
        Ok(v)
    }

    fn versions_where(&self, clause: &str, args: &[&dyn rusqlite::ToSql]) -> Result<Vec<RecordVersion>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(&format!(
            "SELECT {VERSION_COLUMNS} FROM versions {clause} ORDER BY record_id, version_index"
        ))?;
        let rows = stmt.query_map(args, version_from_row)?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    pub fn versions_owned_by(&self, owner: &str) -> Result<Vec<RecordVersion>> {
        self.versions_where("WHERE owner = ?1", &[&owner])
    }

    pub fn shared_versions(&self) -> Result<Vec<RecordVersion>> {
        self.versions_where("WHERE state = 'shared'", &[])
    }

    pub fn all_versions(&self) -> Result<Vec<RecordVersion>> {
        self.versions_where("", &[])
    }

    pub fn share_link(&self, token: &str) -> Result<Option<ShareLink>> {
        let conn = self.conn();
        Ok(conn
            .query_row(
                "SELECT token, record_id, permission, created_by, created_at, expires_at, revoked
                 FROM share_links WHERE token = ?1",
                params![token],
                link_from_row,
            )
            .optional()?)
    }

    pub fn share_links_for(&self, record_id: &str) -> Result<Vec<ShareLink>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT token, record_id, permission, created_by, created_at, expires_at, revoked
             FROM share_links WHERE record_id = ?1 ORDER BY created_at, token",
        )?;
        let rows = stmt.query_map(params![record_id], link_from_row)?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    pub fn api_token_by_hash(&self, hash: &str) -> Result<Option<ApiToken>> {
        let conn = self.conn();
        Ok(conn
            .query_row(
                "SELECT token_id, token_hash, user_id, label, created_at, revoked
                 FROM api_tokens WHERE token_hash = ?1",
                params![hash],
                token_from_row,
            )
            .optional()?)
    }

    pub fn api_tokens_for(&self, user_id: &str) -> Result<Vec<ApiToken>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT token_id, token_hash, user_id, label, created_at, revoked
             FROM api_tokens WHERE user_id = ?1 ORDER BY created_at, token_id",
        )?;
        let rows = stmt.query_map(params![user_id], token_from_row)?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    // ---- index task queue ---------------------------------------------

    /// Pending tasks as `(seq, version_id)`, oldest first.
    pub fn pending_index_tasks(&self, limit: usize) -> Result<Vec<(i64, String)>> {
        let conn = self.conn();
        let mut stmt = conn.prepare_cached("SELECT seq, version_id FROM index_tasks ORDER BY seq LIMIT ?1")?;
        let rows = stmt.query_map(params![limit as i64], |r| Ok((r.get(0)?, r.get(1)?)))?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    pub fn index_task_count(&self) -> Result<usize> {
        let n: i64 = self.conn().query_row("SELECT COUNT(*) FROM index_tasks", [], |r| r.get(0))?;
        Ok(n as usize)
    }

    pub fn max_index_task_seq(&self) -> Result<i64> {
        Ok(self
            .conn()
            .query_row("SELECT COALESCE(MAX(seq), 0) FROM index_tasks", [], |r| r.get(0))?)
    }

    pub fn ack_index_tasks(&self, upto_seq: i64) -> Result<()> {
        self.conn()
            .execute("DELETE FROM index_tasks WHERE seq <= ?1", params![upto_seq])?;
        Ok(())
    }

    // ---- writes --------------------------------------------------------

    /// Applies a batch atomically. Returns the ids of versions it touched.
    pub fn commit(&self, batch: Vec<Mutation>) -> Result<Vec<String>> {
        let mut conn = self.conn();
        let tx = conn
            .transaction_with_behavior(TransactionBehavior::Immediate)
            .map_err(map_write_err)?;
        let mut touched = Vec::new();
        for m in batch {
            apply(&tx, m, &mut touched)?;
        }
        for id in &touched {
            tx.execute("INSERT INTO index_tasks (version_id) VALUES (?1)", params![id])
                .map_err(map_write_err)?;
        }
        tx.commit().map_err(map_write_err)?;
        Ok(touched)
    }
}

fn apply(tx: &rusqlite::Transaction<'_>, m: Mutation, touched: &mut Vec<String>) -> Result<()> {
    match m {
        Mutation::CreateRecord {
            record_id,
            owner,
            created_at,
        } => {
            tx.execute(
                "INSERT INTO records (record_id, owner, created_at) VALUES (?1, ?2, ?3)",
                params![record_id, owner, micros(created_at)],
            )
            .map_err(map_write_err)?;
        }
        Mutation::InsertVersion(v) => {
            v.check_invariants().map_err(ArchiveError::Constraint)?;
            tx.execute(
                &format!("INSERT INTO versions ({VERSION_COLUMNS}) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11, 0)"),
                params![
                    v.version_id,
                    v.record_id,
                    v.version_index,
                    v.state.as_str(),
                    v.tier.as_str(),
                    v.shared_with,
                    v.owner,
                    serde_json::to_string(&v.metadata)?,
                    serde_json::to_string(&v.files)?,
                    micros(v.created_at),
                    v.shared_at.map(micros),
                ],
            )
            .map_err(map_write_err)?;
            touched.push(v.version_id);
        }
        Mutation::UpdateVersion {
            version: v,
            expected_revision,
        } => {
            v.check_invariants().map_err(ArchiveError::Constraint)?;
            let current = tx
                .query_row(
                    &format!("SELECT {VERSION_COLUMNS} FROM versions WHERE version_id = ?1"),
                    params![v.version_id],
                    version_from_row,
                )
                .optional()?
                .ok_or_else(|| ArchiveError::Constraint(format!("unknown version {}", v.version_id)))?;
            if current.revision != expected_revision {
                return Err(ArchiveError::Conflict(ConflictKind::Concurrent));
            }
            if current.is_shared() && current.manifest_digest() != v.manifest_digest() {
                return Err(ArchiveError::Constraint(format!(
                    "file manifest of shared version {} is immutable",
                    v.version_id
                )));
            }
            if current.is_shared() && !v.is_shared() {
                return Err(ArchiveError::Constraint("shared versions cannot return to draft".into()));
            }
            if current.record_id != v.record_id
                || current.version_index != v.version_index
                || current.owner != v.owner
            {
                return Err(ArchiveError::Constraint("version identity is immutable".into()));
            }
            tx.execute(
                "UPDATE versions SET state = ?2, tier = ?3, shared_with = ?4, metadata = ?5, files = ?6,
                     shared_at = ?7, revision = revision + 1
                 WHERE version_id = ?1",
                params![
                    v.version_id,
                    v.state.as_str(),
                    v.tier.as_str(),
                    v.shared_with,
                    serde_json::to_string(&v.metadata)?,
                    serde_json::to_string(&v.files)?,
                    v.shared_at.map(micros),
                ],
            )
            .map_err(map_write_err)?;
            touched.push(v.version_id);
        }
        Mutation::DeleteDraft {
            version_id,
            expected_revision,
        } => {
            let n = tx
                .execute(
                    "DELETE FROM versions WHERE version_id = ?1 AND state = 'draft' AND revision = ?2",
                    params![version_id, expected_revision as i64],
                )
                .map_err(map_write_err)?;
            if n == 0 {
                return Err(ArchiveError::Conflict(ConflictKind::Concurrent));
            }
            touched.push(version_id);
        }
        Mutation::DeleteRecord { record_id } => {
            let remaining: i64 = tx.query_row(
                "SELECT COUNT(*) FROM versions WHERE record_id = ?1",
                params![record_id],
                |r| r.get(0),
            )?;
            if remaining > 0 {
                return Err(ArchiveError::Constraint(format!("record {record_id} still has versions")));
            }
            tx.execute("DELETE FROM share_links WHERE record_id = ?1", params![record_id])?;
            tx.execute("DELETE FROM records WHERE record_id = ?1", params![record_id])
                .map_err(map_write_err)?;
        }
        Mutation::InsertShareLink(l) => {
            tx.execute(
                "INSERT INTO share_links (token, record_id, permission, created_by, created_at, expires_at, revoked)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
                params![
                    l.token,
                    l.record_id,
                    l.permission.as_str(),
                    l.created_by,
                    micros(l.created_at),
                    l.expires_at.map(micros),
                    l.revoked
                ],
            )
            .map_err(map_write_err)?;
        }
        Mutation::RevokeShareLink { token } => {
            tx.execute("UPDATE share_links SET revoked = 1 WHERE token = ?1", params![token])?;
        }
        Mutation::InsertApiToken(t) => {
            tx.execute(
                "INSERT INTO api_tokens (token_id, token_hash, user_id, label, created_at, revoked)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
                params![t.token_id, t.token_hash, t.user_id, t.label, micros(t.created_at), t.revoked],
            )
            .map_err(map_write_err)?;
        }
        Mutation::RevokeApiToken { user_id, token_id } => {
            tx.execute(
                "UPDATE api_tokens SET revoked = 1 WHERE token_id = ?1 AND user_id = ?2",
                params![token_id, user_id],
            )?;
        }
        Mutation::AddMembership { user_id, slug } => {
            tx.execute(
                "INSERT OR IGNORE INTO memberships (user_id, slug) VALUES (?1, ?2)",
                params![user_id, slug],
            )
            .map_err(map_write_err)?;
        }
        Mutation::RemoveMembership { user_id, slug } => {
            tx.execute(
                "DELETE FROM memberships WHERE user_id = ?1 AND slug = ?2",
                params![user_id, slug],
            )?;
        }
    }
    Ok(())
}
