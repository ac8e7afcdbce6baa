//! Secondary search index: an in-process projection of shared versions.
//!
//! The primary store stays authoritative. The index receives idempotent
//! upserts keyed by `version_id` from the task queue, so replaying a task any
//! number of times converges to the same state.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::RwLock;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::access::AccessTarget;
use crate::error::{ArchiveError, Result};
use crate::model::{RecordVersion, ResourceType, Tier, VersionState};

pub const DEFAULT_PAGE_SIZE: usize = 20;
pub const MAX_PAGE_SIZE: usize = 100;

/// Searchable projection of one version. Holds no file bytes and no tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexDocument {
    pub version_id: String,
    pub record_id: String,
    pub version_index: u32,
    pub title: String,
    pub keywords: Vec<String>,
    pub authors: Vec<String>,
    pub resource_type: ResourceType,
    pub community: Option<String>,
    pub tier: Tier,
    pub state: VersionState,
    pub created_at: DateTime<Utc>,
    pub shared_at: Option<DateTime<Utc>>,
    pub owner: String,
}

impl IndexDocument {
    /// Pure projection. Consortium-tier versions are filed under the umbrella slug.
    pub fn project(v: &RecordVersion, umbrella: &str) -> Self {
        let community = match v.tier {
            Tier::Community => v.shared_with.clone(),
            Tier::Consortium => Some(umbrella.to_string()),
            Tier::None => None,
        };
        IndexDocument {
            version_id: v.version_id.clone(),
            record_id: v.record_id.clone(),
            version_index: v.version_index,
            title: v.metadata.title.clone(),
            keywords: v.metadata.keywords.clone(),
            authors: v.metadata.authors.iter().map(|a| a.name.clone()).collect(),
            resource_type: v.metadata.resource_type,
            community,
            tier: v.tier,
            state: v.state,
            created_at: v.created_at,
            shared_at: v.shared_at,
            owner: v.owner.clone(),
        }
    }

    fn sort_time(&self) -> DateTime<Utc> {
        self.shared_at.unwrap_or(self.created_at)
    }
}

impl AccessTarget for IndexDocument {
    fn owner(&self) -> &str {
        &self.owner
    }
    fn state(&self) -> VersionState {
        self.state
    }
    fn tier(&self) -> Tier {
        self.tier
    }
    fn shared_with(&self) -> Option<&str> {
        match self.tier {
            Tier::Community => self.community.as_deref(),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SortOrder {
    #[default]
    Newest,
    Oldest,
    BestMatch,
}

impl SortOrder {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "newest" => Some(SortOrder::Newest),
            "oldest" => Some(SortOrder::Oldest),
            "best-match" | "bestmatch" => Some(SortOrder::BestMatch),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SearchFilters {
    pub community: Option<String>,
    /// Every listed keyword must be present (case-insensitive).
    pub keywords: Vec<String>,
    pub resource_type: Option<ResourceType>,
    /// Personal workspace: only the caller's own versions, drafts included.
    pub owner_me: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchQuery {
    pub text: String,
    pub filters: SearchFilters,
    pub sort: SortOrder,
    /// 1-based.
    pub page: usize,
    pub page_size: usize,
}

impl Default for SearchQuery {
    fn default() -> Self {
        SearchQuery {
            text: String::new(),
            filters: SearchFilters::default(),
            sort: SortOrder::Newest,
            page: 1,
            page_size: DEFAULT_PAGE_SIZE,
        }
    }
}

impl SearchQuery {
    pub fn text(q: impl Into<String>) -> Self {
        SearchQuery {
            text: q.into(),
            ..Default::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.page == 0 {
            return Err(ArchiveError::BadRequest("page must be >= 1".into()));
        }
        if self.page_size == 0 || self.page_size > MAX_PAGE_SIZE {
            return Err(ArchiveError::BadRequest(format!("page size must be within 1..={MAX_PAGE_SIZE}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchPage {
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub hits: Vec<IndexDocument>,
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Match score: each distinct query token counts 2 when it appears in the
/// title and 1 when it appears in a keyword.
pub fn score(doc: &IndexDocument, query_tokens: &BTreeSet<String>) -> u32 {
    let title: BTreeSet<String> = tokenize(&doc.title).into_iter().collect();
    let keywords: BTreeSet<String> = doc.keywords.iter().flat_map(|k| tokenize(k)).collect();
    query_tokens
        .iter()
        .map(|t| 2 * u32::from(title.contains(t)) + u32::from(keywords.contains(t)))
        .sum()
}

pub fn matches_filters(doc: &IndexDocument, filters: &SearchFilters) -> bool {
    if let Some(c) = &filters.community {
        if doc.community.as_deref() != Some(c.as_str()) {
            return false;
        }
    }
    if let Some(t) = filters.resource_type {
        if doc.resource_type != t {
            return false;
        }
    }
    filters.keywords.iter().all(|want| {
        let want = want.to_lowercase();
        doc.keywords.iter().any(|k| k.to_lowercase() == want)
    })
}

/// Scores, sorts and paginates candidate documents that already passed
/// permission and filter checks.
pub fn rank_and_page(candidates: Vec<IndexDocument>, query: &SearchQuery) -> SearchPage {
    let tokens: BTreeSet<String> = tokenize(&query.text).into_iter().collect();
    let mut scored: Vec<(u32, IndexDocument)> = candidates
        .into_iter()
        .map(|d| (score(&d, &tokens), d))
        .filter(|(s, _)| tokens.is_empty() || *s > 0)
        .collect();
    scored.sort_by(|(sa, a), (sb, b)| {
        let by_time = match query.sort {
            SortOrder::Oldest => a.sort_time().cmp(&b.sort_time()),
            _ => b.sort_time().cmp(&a.sort_time()),
        };
        let primary = match query.sort {
            SortOrder::BestMatch => sb.cmp(sa),
            _ => std::cmp::Ordering::Equal,
        };
        primary.then(by_time).then_with(|| a.version_id.cmp(&b.version_id))
    });
    let total = scored.len();
    let hits = scored
        .into_iter()
        .skip((query.page - 1) * query.page_size)
        .take(query.page_size)
        .map(|(_, d)| d)
        .collect();
    SearchPage {
        total,
        page: query.page,
        page_size: query.page_size,
        hits,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub missing_in_index: Vec<String>,
    pub stale_in_index: Vec<String>,
    pub orphaned_in_index: Vec<String>,
}

impl ConsistencyReport {
    pub fn is_empty(&self) -> bool {
        self.missing_in_index.is_empty() && self.stale_in_index.is_empty() && self.orphaned_in_index.is_empty()
    }

    /// Compares the expected projection against the index contents.
    pub fn compare(expected: &BTreeMap<String, IndexDocument>, actual: &BTreeMap<String, IndexDocument>) -> Self {
        let mut report = ConsistencyReport::default();
        for (id, doc) in expected {
            match actual.get(id) {
                None => report.missing_in_index.push(id.clone()),
                Some(d) if d != doc => report.stale_in_index.push(id.clone()),
                Some(_) => {}
            }
        }
        for id in actual.keys() {
            if !expected.contains_key(id) {
                report.orphaned_in_index.push(id.clone());
            }
        }
        report
    }
}

#[derive(Debug, Default)]
pub struct SearchIndex {
    docs: RwLock<BTreeMap<String, IndexDocument>>,
}

impl SearchIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn upsert(&self, doc: IndexDocument) {
        self.docs.write().unwrap().insert(doc.version_id.clone(), doc);
    }

    pub fn remove(&self, version_id: &str) -> Option<IndexDocument> {
        self.docs.write().unwrap().remove(version_id)
    }

    pub fn get(&self, version_id: &str) -> Option<IndexDocument> {
        self.docs.read().unwrap().get(version_id).cloned()
    }

    pub fn len(&self) -> usize {
        self.docs.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> BTreeMap<String, IndexDocument> {
        self.docs.read().unwrap().clone()
    }

    pub fn replace_all(&self, docs: BTreeMap<String, IndexDocument>) {
        *self.docs.write().unwrap() = docs;
    }

    /// Documents passing `keep`, cloned out under one read lock.
    pub fn collect(&self, mut keep: impl FnMut(&IndexDocument) -> bool) -> Vec<IndexDocument> {
        self.docs
            .read()
            .unwrap()
            .values()
            .filter(|d| keep(d))
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn doc(id: &str, title: &str, keywords: &[&str], t: i64) -> IndexDocument {
        IndexDocument {
            version_id: id.into(),
            record_id: id.into(),
            version_index: 1,
            title: title.into(),
            keywords: keywords.iter().map(|s| s.to_string()).collect(),
            authors: vec![],
            resource_type: ResourceType::Dataset,
            community: Some("c".into()),
            tier: Tier::Community,
            state: VersionState::Shared,
            created_at: Utc.timestamp_opt(t, 0).unwrap(),
            shared_at: Some(Utc.timestamp_opt(t, 0).unwrap()),
            owner: "o".into(),
        }
    }

    #[test]
    fn best_match_weights_title_twice() {
        let docs = vec![
            doc("a", "Other", &["electrolyte"], 3),
            doc("b", "Electrolyte sweep", &[], 1),
            doc("c", "Electrolyte", &["electrolyte"], 2),
            doc("d", "Unrelated", &[], 4),
        ];
        let q = SearchQuery {
            text: "electrolyte".into(),
            sort: SortOrder::BestMatch,
            ..Default::default()
        };
        let page = rank_and_page(docs, &q);
        let ids: Vec<_> = page.hits.iter().map(|d| d.version_id.as_str()).collect();
        assert_eq!(ids, ["c", "b", "a"]);
        assert_eq!(page.total, 3);
    }

    #[test]
    fn newest_and_pagination() {
        let docs: Vec<_> = (0..25).map(|i| doc(&format!("d{i:02}"), "x", &[], i)).collect();
        let q = SearchQuery {
            page: 2,
            ..Default::default()
        };
        let page = rank_and_page(docs.clone(), &q);
        assert_eq!(page.total, 25);
        assert_eq!(page.hits.len(), 5);
        assert_eq!(page.hits[0].version_id, "d04");
        let q = SearchQuery {
            sort: SortOrder::Oldest,
            page_size: 3,
            ..Default::default()
        };
        let ids: Vec<_> = rank_and_page(docs, &q).hits.into_iter().map(|d| d.version_id).collect();
        assert_eq!(ids, ["d00", "d01", "d02"]);
    }

    #[test]
    fn page_bounds() {
        assert!(SearchQuery { page_size: 101, ..Default::default() }.check().is_err());
        assert!(SearchQuery { page: 0, ..Default::default() }.check().is_err());
        assert!(SearchQuery { page_size: 100, ..Default::default() }.check().is_ok());
    }

    #[test]
    fn keyword_filter_is_case_insensitive() {
        let d = doc("a", "t", &["Anode", "LFP"], 0);
        let f = SearchFilters {
            keywords: vec!["anode".into(), "lfp".into()],
            ..Default::default()
        };
        assert!(matches_filters(&d, &f));
        let f = SearchFilters {
            keywords: vec!["cathode".into()],
            ..Default::default()
        };
        assert!(!matches_filters(&d, &f));
    }

    #[test]
    fn consistency_compare() {
        let a = doc("a", "t", &[], 0);
        let b = doc("b", "t", &[], 0);
        let mut b_stale = b.clone();
        b_stale.title = "old".into();
        let expected: BTreeMap<_, _> = [("a".to_string(), a), ("b".to_string(), b)].into();
        let actual: BTreeMap<_, _> =
            [("b".to_string(), b_stale), ("z".to_string(), doc("z", "t", &[], 0))].into();
        let r = ConsistencyReport::compare(&expected, &actual);
        assert_eq!(r.missing_in_index, ["a"]);
        assert_eq!(r.stale_in_index, ["b"]);
        assert_eq!(r.orphaned_in_index, ["z"]);
    }
}
