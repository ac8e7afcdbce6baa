//! Anonymized usage statistics.
//!
//! Requesters are reduced to `sha256(salt ∥ identifier)` before anything is
//! written. The salt rotates every period (24 hours by default) and the old
//! value is overwritten, so hashes from different periods cannot be linked.
//! Unique counts are distinct `(visitor_hash, period_id)` pairs.
//!
//! Events live in their own SQLite file, separate from the primary store, so
//! the stats store never holds a user id or an address.

pub mod geo;
pub mod referrer;

use std::collections::BTreeMap;
use std::net::IpAddr;
use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, Duration, DurationRound, Utc};
use rusqlite::{params, Connection, OptionalExtension, Transaction, TransactionBehavior};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::ids::{random_bytes, SALT_BYTES};

pub use geo::{CountryTable, UNKNOWN_COUNTRY};
pub use referrer::referrer_domain;

pub const TOP_REFERRERS: usize = 10;

#[derive(Clone, PartialEq, Eq)]
pub struct Salt {
    pub value: [u8; SALT_BYTES],
    pub period_id: u64,
    pub period_start: DateTime<Utc>,
    pub period_length: Duration,
}

impl std::fmt::Debug for Salt {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Salt")
            .field("period_id", &self.period_id)
            .field("period_start", &self.period_start)
            .finish_non_exhaustive()
    }
}

impl Salt {
    pub fn generate(period_id: u64, period_start: DateTime<Utc>, period_length: Duration) -> Self {
        Salt {
            value: random_bytes::<SALT_BYTES>(),
            period_id,
            period_start,
            period_length,
        }
    }

    pub fn expired_at(&self, now: DateTime<Utc>) -> bool {
        now >= self.period_start + self.period_length
    }
}

/// Hex SHA-256 of the salt value followed by the identifier bytes.
pub fn anonymize(identifier: &str, salt: &Salt) -> String {
    let mut h = Sha256::new();
    h.update(salt.value);
    h.update(identifier.as_bytes());
    hex::encode(h.finalize())
}

/// Raw request attributes. Consumed by ingestion and never stored.
#[derive(Clone, Debug)]
pub struct RequesterContext {
    pub personal_identifier: String,
    pub remote_address: IpAddr,
    pub referrer: Option<String>,
}

impl RequesterContext {
    /// Authenticated users are identified by user id, everyone else by address.
    pub fn new(user: Option<&str>, remote_address: IpAddr, referrer: Option<String>) -> Self {
        RequesterContext {
            personal_identifier: user.map_or_else(|| remote_address.to_string(), str::to_string),
            remote_address,
            referrer,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventType {
    View,
    Download,
}

impl EventType {
    pub fn as_str(self) -> &'static str {
        match self {
            EventType::View => "view",
            EventType::Download => "download",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageEvent {
    pub event_type: EventType,
    pub version_id: String,
    pub record_id: String,
    pub file_name: Option<String>,
    pub visitor_hash: String,
    pub country: String,
    pub referrer_domain: String,
    pub period_id: u64,
    /// Truncated to the hour.
    pub occurred_at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferrerCount {
    pub domain: String,
    pub count: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageAggregate {
    pub unique_views: u64,
    pub unique_downloads: u64,
    pub views_by_country: BTreeMap<String, u64>,
    pub downloads_by_country: BTreeMap<String, u64>,
    /// Unique downloaders per file; a visitor fetching several files counts
    /// once in `unique_downloads` and once per file here.
    pub downloads_by_file: BTreeMap<String, u64>,
    pub top_referrer_domains: Vec<ReferrerCount>,
}

fn add_maps(into: &mut BTreeMap<String, u64>, from: &BTreeMap<String, u64>) {
    for (k, v) in from {
        *into.entry(k.clone()).or_default() += v;
    }
}

impl UsageAggregate {
    /// Element-wise sum. Referrer lists are merged by domain, untruncated.
    pub fn merge(&mut self, other: &UsageAggregate) {
        self.unique_views += other.unique_views;
        self.unique_downloads += other.unique_downloads;
        add_maps(&mut self.views_by_country, &other.views_by_country);
        add_maps(&mut self.downloads_by_country, &other.downloads_by_country);
        add_maps(&mut self.downloads_by_file, &other.downloads_by_file);
        let mut refs: BTreeMap<String, u64> = self
            .top_referrer_domains
            .drain(..)
            .map(|r| (r.domain, r.count))
            .collect();
        for r in &other.top_referrer_domains {
            *refs.entry(r.domain.clone()).or_default() += r.count;
        }
        self.top_referrer_domains = refs
            .into_iter()
            .map(|(domain, count)| ReferrerCount { domain, count })
            .collect();
    }

    /// Sorts referrers by count (then name) and keeps the top entries.
    pub fn finish(mut self) -> Self {
        self.top_referrer_domains
            .sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.domain.cmp(&b.domain)));
        self.top_referrer_domains.truncate(TOP_REFERRERS);
        self
    }
}

const SCHEMA: &str = r#"
CREATE TABLE IF NOT EXISTS salt (
    id           INTEGER PRIMARY KEY CHECK (id = 1),
    value        BLOB NOT NULL,
    period_id    INTEGER NOT NULL,
    period_start INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS events (
    id              INTEGER PRIMARY KEY AUTOINCREMENT,
    event_type      TEXT NOT NULL,
    version_id      TEXT NOT NULL,
    record_id       TEXT NOT NULL,
    file_name       TEXT,
    visitor_hash    TEXT NOT NULL,
    country         TEXT NOT NULL,
    referrer_domain TEXT NOT NULL,
    period_id       INTEGER NOT NULL,
    occurred_at     INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS events_version ON events(version_id, event_type);
"#;

pub struct StatsStore {
    conn: Mutex<Connection>,
    period_length: Duration,
}

impl StatsStore {
    pub fn open(path: &Path, period_length: Duration) -> Result<Self> {
        Self::init(Connection::open(path)?, period_length)
    }

    pub fn open_in_memory(period_length: Duration) -> Result<Self> {
        Self::init(Connection::open_in_memory()?, period_length)
    }

    fn init(conn: Connection, period_length: Duration) -> Result<Self> {
        // Overwritten salts must not linger in free pages.
        conn.pragma_update(None, "secure_delete", true)?;
        conn.query_row("PRAGMA journal_mode = WAL", [], |_| Ok(()))?;
        conn.pragma_update(None, "synchronous", "NORMAL")?;
        conn.execute_batch(SCHEMA)?;
        Ok(StatsStore {
            conn: Mutex::new(conn),
            period_length,
        })
    }

    fn conn(&self) -> std::sync::MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn period_length(&self) -> Duration {
        self.period_length
    }

    /// Periods tile the time line in multiples of the period length since the
    /// Unix epoch, so a 24-hour period is a UTC day.
    pub fn period_start_for(&self, now: DateTime<Utc>) -> DateTime<Utc> {
        let len = self.period_length.num_seconds().max(1);
        let secs = now.timestamp();
        DateTime::from_timestamp(secs - secs.rem_euclid(len), 0).expect("timestamp in range")
    }

    pub fn active_salt(&self) -> Result<Option<Salt>> {
        let conn = self.conn();
        let row = conn
            .query_row("SELECT value, period_id, period_start FROM salt WHERE id = 1", [], |r| {
                Ok((r.get::<_, Vec<u8>>(0)?, r.get::<_, i64>(1)?, r.get::<_, i64>(2)?))
            })
            .optional()?;
        Ok(row.map(|(value, period_id, start)| self.salt_from_row(value, period_id, start)))
    }

    fn salt_from_row(&self, value: Vec<u8>, period_id: i64, start: i64) -> Salt {
        let mut v = [0u8; SALT_BYTES];
        v.copy_from_slice(&value);
        Salt {
            value: v,
            period_id: period_id as u64,
            period_start: DateTime::from_timestamp_micros(start).expect("timestamp in range"),
            period_length: self.period_length,
        }
    }

    /// Returns the salt active at `now`, replacing it first if its period is over.
    /// The replacement covers the period containing `now`.
    ///
    /// The check and the swap run in one transaction, so concurrent callers
    /// past the threshold produce exactly one new salt.
    pub fn rotate_salt(&self, now: DateTime<Utc>) -> Result<Salt> {
        let mut conn = self.conn();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let salt = self.rotate_in(&tx, now)?;
        tx.commit()?;
        Ok(salt)
    }

    fn rotate_in(&self, tx: &Transaction<'_>, now: DateTime<Utc>) -> Result<Salt> {
        let current = tx
            .query_row("SELECT value, period_id, period_start FROM salt WHERE id = 1", [], |r| {
                Ok((r.get::<_, Vec<u8>>(0)?, r.get::<_, i64>(1)?, r.get::<_, i64>(2)?))
            })
            .optional()?
            .map(|(value, id, start)| self.salt_from_row(value, id, start));
        Ok(match current {
            Some(s) if !s.expired_at(now) => s,
            previous => {
                let next_id = previous.map_or(1, |p| p.period_id + 1);
                let salt = Salt::generate(next_id, self.period_start_for(now), self.period_length);
                tx.execute(
                    "INSERT INTO salt (id, value, period_id, period_start) VALUES (1, ?1, ?2, ?3)
                     ON CONFLICT(id) DO UPDATE SET value = excluded.value,
                         period_id = excluded.period_id, period_start = excluded.period_start",
                    params![salt.value.to_vec(), salt.period_id as i64, salt.period_start.timestamp_micros()],
                )?;
                salt
            }
        })
    }

    /// Anonymizes and records one event; the context is dropped afterwards.
    #[allow(clippy::too_many_arguments)]
    pub fn ingest(
        &self,
        now: DateTime<Utc>,
        event_type: EventType,
        version_id: &str,
        record_id: &str,
        file_name: Option<&str>,
        ctx: RequesterContext,
        countries: &CountryTable,
    ) -> Result<UsageEvent> {
        let mut conn = self.conn();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let salt = self.rotate_in(&tx, now)?;
        let event = UsageEvent {
            event_type,
            version_id: version_id.to_string(),
            record_id: record_id.to_string(),
            file_name: file_name.map(str::to_string),
            visitor_hash: anonymize(&ctx.personal_identifier, &salt),
            country: countries.country_of(ctx.remote_address).to_string(),
            referrer_domain: ctx.referrer.as_deref().map(referrer_domain).unwrap_or_default(),
            period_id: salt.period_id,
            occurred_at: now.duration_trunc(Duration::hours(1)).unwrap_or(now),
        };
        drop(ctx);
        Self::insert(&tx, &event)?;
        tx.commit()?;
        Ok(event)
    }

    pub fn append(&self, e: &UsageEvent) -> Result<()> {
        Self::insert(&self.conn(), e)
    }

    fn insert(conn: &Connection, e: &UsageEvent) -> Result<()> {
        conn.execute(
            "INSERT INTO events (event_type, version_id, record_id, file_name, visitor_hash, country,
                 referrer_domain, period_id, occurred_at)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9)",
            params![
                e.event_type.as_str(),
                e.version_id,
                e.record_id,
                e.file_name,
                e.visitor_hash,
                e.country,
                e.referrer_domain,
                e.period_id as i64,
                e.occurred_at.timestamp(),
            ],
        )?;
        Ok(())
    }

    pub fn events(&self) -> Result<Vec<UsageEvent>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT event_type, version_id, record_id, file_name, visitor_hash, country, referrer_domain,
                    period_id, occurred_at
             FROM events ORDER BY id",
        )?;
        let rows = stmt.query_map([], |r| {
            let kind: String = r.get(0)?;
            Ok(UsageEvent {
                event_type: if kind == "view" { EventType::View } else { EventType::Download },
                version_id: r.get(1)?,
                record_id: r.get(2)?,
                file_name: r.get(3)?,
                visitor_hash: r.get(4)?,
                country: r.get(5)?,
                referrer_domain: r.get(6)?,
                period_id: r.get::<_, i64>(7)? as u64,
                occurred_at: DateTime::from_timestamp(r.get(8)?, 0).expect("timestamp in range"),
            })
        })?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    pub fn event_count(&self) -> Result<u64> {
        let n: i64 = self.conn().query_row("SELECT COUNT(*) FROM events", [], |r| r.get(0))?;
        Ok(n as u64)
    }

    /// Every text value in the store, for anonymity audits.
    pub fn dump_text(&self) -> Result<String> {
        let mut out = String::new();
        for e in self.events()? {
            out.push_str(&serde_json::to_string(&e)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Unique counts for one version, referrers untruncated.
    pub fn version_aggregate(&self, version_id: &str) -> Result<UsageAggregate> {
        let conn = self.conn();
        let count = |kind: &str| -> rusqlite::Result<u64> {
            conn.query_row(
                "SELECT COUNT(*) FROM (SELECT DISTINCT visitor_hash, period_id FROM events
                 WHERE version_id = ?1 AND event_type = ?2)",
                params![version_id, kind],
                |r| r.get::<_, i64>(0),
            )
            .map(|n| n as u64)
        };
        let grouped = |sql: &str, kind: Option<&str>| -> rusqlite::Result<BTreeMap<String, u64>> {
            let mut stmt = conn.prepare_cached(sql)?;
            let rows = match kind {
                Some(k) => stmt
                    .query_map(params![version_id, k], |r| Ok((r.get::<_, String>(0)?, r.get::<_, i64>(1)? as u64)))?
                    .collect::<rusqlite::Result<Vec<_>>>()?,
                None => stmt
                    .query_map(params![version_id], |r| Ok((r.get::<_, String>(0)?, r.get::<_, i64>(1)? as u64)))?
                    .collect::<rusqlite::Result<Vec<_>>>()?,
            };
            Ok(rows.into_iter().collect())
        };
        let by_country = "SELECT country, COUNT(*) FROM (SELECT DISTINCT visitor_hash, period_id, country FROM events
             WHERE version_id = ?1 AND event_type = ?2) GROUP BY country";
        let by_file = "SELECT file_name, COUNT(*) FROM (SELECT DISTINCT visitor_hash, period_id, file_name FROM events
             WHERE version_id = ?1 AND event_type = 'download' AND file_name IS NOT NULL) GROUP BY file_name";
        let referrers = "SELECT referrer_domain, COUNT(*) FROM (SELECT DISTINCT visitor_hash, period_id, referrer_domain
             FROM events WHERE version_id = ?1 AND referrer_domain != '') GROUP BY referrer_domain";
        Ok(UsageAggregate {
            unique_views: count("view")?,
            unique_downloads: count("download")?,
            views_by_country: grouped(by_country, Some("view"))?,
            downloads_by_country: grouped(by_country, Some("download"))?,
            downloads_by_file: grouped(by_file, None)?,
            top_referrer_domains: grouped(referrers, None)?
                .into_iter()
                .map(|(domain, count)| ReferrerCount { domain, count })
                .collect(),
        })
    }

    /// Element-wise sum of the given versions' aggregates.
    pub fn cumulative(&self, version_ids: &[String]) -> Result<UsageAggregate> {
        let mut total = UsageAggregate::default();
        for id in version_ids {
            total.merge(&self.version_aggregate(id)?);
        }
        Ok(total.finish())
    }
}
