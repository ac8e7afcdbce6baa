//! Records, versions, metadata, files, communities and accounts.

use std::collections::BTreeSet;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub type UserId = String;

/// Media type carried by every semantic-annotation attachment.
pub const JSON_LD_MEDIA_TYPE: &str = "application/ld+json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceType {
    Dataset,
    Software,
    Publication,
    Other,
}

impl ResourceType {
    pub const ALL: [ResourceType; 4] = [
        ResourceType::Dataset,
        ResourceType::Software,
        ResourceType::Publication,
        ResourceType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceType::Dataset => "dataset",
            ResourceType::Software => "software",
            ResourceType::Publication => "publication",
            ResourceType::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

/// Descriptive metadata of one record version.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataDocument {
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub authors: Vec<Author>,
    pub license: String,
    #[serde(default = "default_resource_type")]
    pub resource_type: ResourceType,
    pub publication_date: NaiveDate,
    #[serde(default)]
    pub annotations: Vec<AnnotationAttachment>,
}

fn default_resource_type() -> ResourceType {
    ResourceType::Dataset
}

impl MetadataDocument {
    /// Minimal metadata: a title, a license and a publication date.
    pub fn new(title: impl Into<String>, license: impl Into<String>, date: NaiveDate) -> Self {
        MetadataDocument {
            title: title.into(),
            description: String::new(),
            keywords: Vec::new(),
            authors: Vec::new(),
            license: license.into(),
            resource_type: ResourceType::Dataset,
            publication_date: date,
            annotations: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Author {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orcid: Option<String>,
    #[serde(default)]
    pub affiliations: Vec<Affiliation>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Affiliation {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ror: Option<String>,
}

/// A JSON-LD document attached to a record, kept as the exact uploaded text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationAttachment {
    pub label: String,
    pub document: String,
    #[serde(default = "default_annotation_media_type")]
    pub media_type: String,
}

fn default_annotation_media_type() -> String {
    JSON_LD_MEDIA_TYPE.to_string()
}

impl AnnotationAttachment {
    pub fn new(label: impl Into<String>, document: impl Into<String>) -> Self {
        AnnotationAttachment {
            label: label.into(),
            document: document.into(),
            media_type: default_annotation_media_type(),
        }
    }
}

/// One entry in a version's file manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub size: u64,
    /// `sha-256:<lowercase hex>`
    pub checksum: String,
    /// Handle into the content-addressed file store.
    pub content_ref: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VersionState {
    Draft,
    Shared,
}

impl VersionState {
    pub fn as_str(self) -> &'static str {
        match self {
            VersionState::Draft => "draft",
            VersionState::Shared => "shared",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "draft" => Some(VersionState::Draft),
            "shared" => Some(VersionState::Shared),
            _ => None,
        }
    }
}

/// Sharing scope of a version.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    None,
    Community,
    Consortium,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::None => "none",
            Tier::Community => "community",
            Tier::Consortium => "consortium",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Tier::None),
            "community" => Some(Tier::Community),
            "consortium" => Some(Tier::Consortium),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordVersion {
    pub version_id: String,
    pub record_id: String,
    pub version_index: u32,
    pub state: VersionState,
    pub tier: Tier,
    pub shared_with: Option<String>,
    pub owner: UserId,
    pub metadata: MetadataDocument,
    pub files: Vec<FileEntry>,
    pub created_at: DateTime<Utc>,
    pub shared_at: Option<DateTime<Utc>>,
    /// Bumped on every committed update; used for check-and-set.
    #[serde(default)]
    pub revision: u64,
}

pub fn version_id_for(record_id: &str, index: u32) -> String {
    format!("{record_id}-v{index}")
}

impl RecordVersion {
    pub fn total_size(&self) -> u64 {
        self.files.iter().map(|f| f.size).sum()
    }

    pub fn file(&self, name: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.name == name)
    }

    pub fn is_shared(&self) -> bool {
        self.state == VersionState::Shared
    }

    /// Digest over the manifest's names, sizes and checksums.
    pub fn manifest_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for f in &self.files {
            hasher.update(f.name.as_bytes());
            hasher.update([0]);
            hasher.update(f.size.to_be_bytes());
            hasher.update(f.checksum.as_bytes());
            hasher.update([0]);
        }
        hex::encode(hasher.finalize())
    }

    /// Checks the state/tier/timestamp coupling rules of a version.
    pub fn check_invariants(&self) -> Result<(), String> {
        match self.state {
            VersionState::Draft => {
                if self.tier != Tier::None {
                    return Err(format!("{}: draft with tier {}", self.version_id, self.tier.as_str()));
                }
                if self.shared_at.is_some() {
                    return Err(format!("{}: draft with shared_at", self.version_id));
                }
            }
            VersionState::Shared => {
                if self.tier == Tier::None {
                    return Err(format!("{}: shared without tier", self.version_id));
                }
                if self.shared_at.is_none() {
                    return Err(format!("{}: shared without shared_at", self.version_id));
                }
            }
        }
        if (self.tier == Tier::Community) != self.shared_with.is_some() {
            return Err(format!("{}: shared_with must be set iff tier=community", self.version_id));
        }
        let mut names = BTreeSet::new();
        for f in &self.files {
            if !names.insert(f.name.as_str()) {
                return Err(format!("{}: duplicate file {}", self.version_id, f.name));
            }
        }
        if self.version_id != version_id_for(&self.record_id, self.version_index) {
            return Err(format!("{}: id does not match index", self.version_id));
        }
        Ok(())
    }
}

/// A record is the ordered chain of its versions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub record_id: String,
    pub owner: UserId,
    pub created_at: DateTime<Utc>,
    pub versions: Vec<RecordVersion>,
}

impl Record {
    pub fn latest(&self) -> Option<&RecordVersion> {
        self.versions.last()
    }

    pub fn latest_shared(&self) -> Option<&RecordVersion> {
        self.versions.iter().rev().find(|v| v.is_shared())
    }

    pub fn open_draft(&self) -> Option<&RecordVersion> {
        self.versions.iter().find(|v| v.state == VersionState::Draft)
    }

    pub fn version(&self, index: u32) -> Option<&RecordVersion> {
        self.versions.iter().find(|v| v.version_index == index)
    }

    pub fn version_by_id(&self, version_id: &str) -> Option<&RecordVersion> {
        self.versions.iter().find(|v| v.version_id == version_id)
    }

    /// Version indices must run 1..=N without gaps.
    pub fn indices_are_contiguous(&self) -> bool {
        self.versions
            .iter()
            .enumerate()
            .all(|(i, v)| v.version_index as usize == i + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommunityKind {
    Project,
    Umbrella,
}

impl CommunityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommunityKind::Project => "project",
            CommunityKind::Umbrella => "umbrella",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "project" => Some(CommunityKind::Project),
            "umbrella" => Some(CommunityKind::Umbrella),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Community {
    pub slug: String,
    pub display_name: String,
    pub kind: CommunityKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAccount {
    pub user_id: UserId,
    pub email: String,
    pub email_confirmed: bool,
    pub memberships: BTreeSet<String>,
}
