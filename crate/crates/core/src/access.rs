//! Permission decisions: community tiers, owner rights, share links and API tokens.
//!
//! [`evaluate`] is a pure function of a [`Subject`] (who is asking, with their
//! memberships and any redeemed share link) and an [`AccessTarget`] (a version
//! or its index projection). Everything that needs storage lookups lives in
//! [`crate::archive::Archive`] and funnels into these functions.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::DenyReason;
use crate::model::{Tier, UserAccount, UserId, VersionState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    ReadMetadata,
    DownloadFiles,
    EditMetadata,
    ModifyDraftFiles,
    CreateVersion,
    Share,
    MintLink,
    ViewStats,
}

impl Action {
    pub const ALL: [Action; 8] = [
        Action::ReadMetadata,
        Action::DownloadFiles,
        Action::EditMetadata,
        Action::ModifyDraftFiles,
        Action::CreateVersion,
        Action::Share,
        Action::MintLink,
        Action::ViewStats,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkPermission {
    View,
    Edit,
}

impl LinkPermission {
    pub fn as_str(self) -> &'static str {
        match self {
            LinkPermission::View => "view",
            LinkPermission::Edit => "edit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "view" => Some(LinkPermission::View),
            "edit" => Some(LinkPermission::Edit),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareLink {
    pub token: String,
    pub record_id: String,
    pub permission: LinkPermission,
    pub created_by: UserId,
    pub created_at: DateTime<Utc>,
    pub expires_at: Option<DateTime<Utc>>,
    pub revoked: bool,
}

impl ShareLink {
    pub fn url(&self, base_url: &str) -> String {
        share_link_url(base_url, &self.record_id, &self.token)
    }
}

pub fn share_link_url(base_url: &str, record_id: &str, token: &str) -> String {
    format!("{}/records/{record_id}?token={token}", base_url.trim_end_matches('/'))
}

/// A stored API token. Only the digest of the secret is kept.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ApiToken {
    pub token_id: String,
    pub token_hash: String,
    pub user_id: UserId,
    pub label: String,
    pub created_at: DateTime<Utc>,
    pub revoked: bool,
}

/// What token listings expose: never the secret, never the digest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiTokenInfo {
    pub token_id: String,
    pub label: String,
    pub created_at: DateTime<Utc>,
    pub revoked: bool,
}

impl From<&ApiToken> for ApiTokenInfo {
    fn from(t: &ApiToken) -> Self {
        ApiTokenInfo {
            token_id: t.token_id.clone(),
            label: t.label.clone(),
            created_at: t.created_at,
            revoked: t.revoked,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermissionDecision {
    pub allowed: bool,
    pub reason: Option<DenyReason>,
}

impl PermissionDecision {
    pub fn allow() -> Self {
        PermissionDecision {
            allowed: true,
            reason: None,
        }
    }

    pub fn deny(reason: DenyReason) -> Self {
        PermissionDecision {
            allowed: false,
            reason: Some(reason),
        }
    }
}

/// Effective capability obtained by presenting a share-link token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "capability", content = "reason")]
pub enum Redemption {
    Read,
    Edit,
    Denied(DenyReason),
}

/// Resolves a share link for a bearer.
///
/// `owner_projects` are the owner's project-community memberships; an edit link
/// is honored only for an authenticated actor sharing one of them.
pub fn redeem(
    link: Option<&ShareLink>,
    now: DateTime<Utc>,
    actor: Option<&UserAccount>,
    owner_projects: &BTreeSet<String>,
) -> Redemption {
    let Some(link) = link else {
        return Redemption::Denied(DenyReason::UnknownToken);
    };
    if link.revoked {
        return Redemption::Denied(DenyReason::LinkRevoked);
    }
    if link.expires_at.is_some_and(|t| now >= t) {
        return Redemption::Denied(DenyReason::LinkExpired);
    }
    match link.permission {
        LinkPermission::View => Redemption::Read,
        LinkPermission::Edit => {
            let shares_project = actor.is_some_and(|a| {
                a.email_confirmed && a.memberships.iter().any(|m| owner_projects.contains(m))
            });
            if shares_project {
                Redemption::Edit
            } else {
                Redemption::Denied(DenyReason::NotMember)
            }
        }
    }
}

/// Who is asking, resolved against one record.
#[derive(Clone, Debug, Default)]
pub struct Subject {
    pub user: Option<UserId>,
    pub memberships: BTreeSet<String>,
    /// Outcome of redeeming the presented share link for this record, if any.
    pub link: Option<Redemption>,
}

impl Subject {
    pub fn anonymous() -> Self {
        Subject::default()
    }

    pub fn user(account: &UserAccount) -> Self {
        Subject {
            user: Some(account.user_id.clone()),
            memberships: account.memberships.clone(),
            link: None,
        }
    }

    pub fn with_link(mut self, redemption: Redemption) -> Self {
        self.link = Some(redemption);
        self
    }
}

/// The access-relevant view of a version.
pub trait AccessTarget {
    fn owner(&self) -> &str;
    fn state(&self) -> VersionState;
    fn tier(&self) -> Tier;
    fn shared_with(&self) -> Option<&str>;
}

impl AccessTarget for crate::model::RecordVersion {
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
        self.shared_with.as_deref()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Level {
    None,
    Read,
    Edit,
    Owner,
}

fn level(subject: &Subject, target: &impl AccessTarget) -> Level {
    if subject.user.as_deref() == Some(target.owner()) {
        return Level::Owner;
    }
    let from_link = match subject.link {
        Some(Redemption::Edit) => Level::Edit,
        Some(Redemption::Read) => Level::Read,
        _ => Level::None,
    };
    let from_membership = match (target.state(), target.tier()) {
        (VersionState::Shared, Tier::Community) => {
            if subject.user.is_some()
                && target.shared_with().is_some_and(|c| subject.memberships.contains(c))
            {
                Level::Read
            } else {
                Level::None
            }
        }
        (VersionState::Shared, Tier::Consortium) => {
            if subject.user.is_some() && !subject.memberships.is_empty() {
                Level::Read
            } else {
                Level::None
            }
        }
        _ => Level::None,
    };
    from_link.max(from_membership)
}

fn permits(state: VersionState, tier: Tier, level: Level, action: Action) -> bool {
    use Action::*;
    let reader = matches!(action, ReadMetadata | DownloadFiles | ViewStats);
    match (state, level) {
        (_, Level::None) => false,
        (VersionState::Draft, Level::Owner) => true,
        (VersionState::Draft, Level::Edit) => !matches!(action, Share | MintLink),
        (VersionState::Draft, Level::Read) => false,
        (VersionState::Shared, Level::Owner) => match action {
            ModifyDraftFiles => false,
            Share => tier == Tier::Community,
            _ => true,
        },
        (VersionState::Shared, Level::Edit) => reader || matches!(action, EditMetadata | CreateVersion),
        (VersionState::Shared, Level::Read) => reader,
    }
}

/// Decides whether `subject` may perform `action` on `target`.
pub fn evaluate(subject: &Subject, action: Action, target: &impl AccessTarget) -> PermissionDecision {
    let state = target.state();
    let lvl = level(subject, target);
    if permits(state, target.tier(), lvl, action) {
        return PermissionDecision::allow();
    }
    let reason = match lvl {
        Level::Owner | Level::Edit if action == Action::ModifyDraftFiles => DenyReason::ImmutableFiles,
        Level::Owner if action == Action::Share => DenyReason::AlreadyShared,
        Level::Owner | Level::Edit => DenyReason::OwnerOnly,
        Level::Read if state == VersionState::Draft => DenyReason::DraftPrivate,
        Level::Read => DenyReason::OwnerOnly,
        Level::None => match subject.link {
            Some(Redemption::Denied(r)) => r,
            _ if state == VersionState::Draft => DenyReason::DraftPrivate,
            _ if subject.user.is_none() => DenyReason::Unauthenticated,
            _ => DenyReason::NotMember,
        },
    };
    PermissionDecision::deny(reason)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MetadataDocument, RecordVersion};
    use chrono::{Duration, NaiveDate};

    fn target(state: VersionState, tier: Tier, shared_with: Option<&str>) -> RecordVersion {
        RecordVersion {
            version_id: "r-v1".into(),
            record_id: "r".into(),
            version_index: 1,
            state,
            tier,
            shared_with: shared_with.map(Into::into),
            owner: "owner".into(),
            metadata: MetadataDocument::new("t", "MIT", NaiveDate::from_ymd_opt(2024, 1, 1).unwrap()),
            files: vec![],
            created_at: Utc::now(),
            shared_at: None,
            revision: 0,
        }
    }

    fn member(id: &str, of: &[&str]) -> Subject {
        Subject {
            user: Some(id.into()),
            memberships: of.iter().map(|s| s.to_string()).collect(),
            link: None,
        }
    }

    fn account(id: &str, of: &[&str]) -> UserAccount {
        UserAccount {
            user_id: id.into(),
            email: format!("{id}@example.org"),
            email_confirmed: true,
            memberships: of.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn link(permission: LinkPermission) -> ShareLink {
        ShareLink {
            token: "tok".into(),
            record_id: "r".into(),
            permission,
            created_by: "owner".into(),
            created_at: Utc::now(),
            expires_at: None,
            revoked: false,
        }
    }

    #[test]
    fn community_tier_examples() {
        let v = target(VersionState::Shared, Tier::Community, Some("c"));
        assert!(evaluate(&member("m", &["c", "all"]), Action::ReadMetadata, &v).allowed);
        assert_eq!(
            evaluate(&member("d", &["d", "all"]), Action::ReadMetadata, &v),
            PermissionDecision::deny(DenyReason::NotMember)
        );
        assert_eq!(
            evaluate(&member("m", &["c", "all"]), Action::EditMetadata, &v),
            PermissionDecision::deny(DenyReason::OwnerOnly)
        );
    }

    #[test]
    fn consortium_tier_reads_for_any_member() {
        let v = target(VersionState::Shared, Tier::Consortium, None);
        assert!(evaluate(&member("d", &["d", "all"]), Action::ReadMetadata, &v).allowed);
        assert!(!evaluate(&member("nobody", &[]), Action::ReadMetadata, &v).allowed);
    }

    #[test]
    fn owner_cannot_touch_shared_files() {
        let v = target(VersionState::Shared, Tier::Community, Some("c"));
        assert_eq!(
            evaluate(&member("owner", &["c"]), Action::ModifyDraftFiles, &v),
            PermissionDecision::deny(DenyReason::ImmutableFiles)
        );
    }

    #[test]
    fn drafts_are_private() {
        let v = target(VersionState::Draft, Tier::None, None);
        assert_eq!(
            evaluate(&Subject::anonymous(), Action::ReadMetadata, &v),
            PermissionDecision::deny(DenyReason::DraftPrivate)
        );
        for a in Action::ALL {
            assert!(evaluate(&member("owner", &[]), a, &v).allowed);
        }
    }

    #[test]
    fn redeem_rules() {
        let projects: BTreeSet<String> = ["c".to_string()].into();
        let now = Utc::now();
        assert_eq!(redeem(Some(&link(LinkPermission::View)), now, None, &projects), Redemption::Read);
        assert_eq!(
            redeem(Some(&link(LinkPermission::Edit)), now, Some(&account("x", &["d", "all"])), &projects),
            Redemption::Denied(DenyReason::NotMember)
        );
        assert_eq!(
            redeem(Some(&link(LinkPermission::Edit)), now, Some(&account("y", &["c", "all"])), &projects),
            Redemption::Edit
        );
        assert_eq!(
            redeem(Some(&link(LinkPermission::Edit)), now, None, &projects),
            Redemption::Denied(DenyReason::NotMember)
        );
        assert_eq!(redeem(None, now, None, &projects), Redemption::Denied(DenyReason::UnknownToken));
        let mut expired = link(LinkPermission::Edit);
        expired.expires_at = Some(now - Duration::hours(1));
        assert_eq!(
            redeem(Some(&expired), now, Some(&account("y", &["c"])), &projects),
            Redemption::Denied(DenyReason::LinkExpired)
        );
        let mut revoked = link(LinkPermission::View);
        revoked.revoked = true;
        assert_eq!(redeem(Some(&revoked), now, None, &projects), Redemption::Denied(DenyReason::LinkRevoked));
    }

    #[test]
    fn view_link_never_edits() {
        for state in [VersionState::Draft, VersionState::Shared] {
            let v = target(state, if state == VersionState::Draft { Tier::None } else { Tier::Community }, if state == VersionState::Draft { None } else { Some("c") });
            let s = Subject::anonymous().with_link(Redemption::Read);
            for a in [Action::EditMetadata, Action::ModifyDraftFiles, Action::CreateVersion, Action::Share, Action::MintLink] {
                assert!(!evaluate(&s, a, &v).allowed);
            }
        }
    }

    #[test]
    fn url_shape() {
        assert_eq!(
            share_link_url("https://archive.example.org/", "abc123defg", "TOK"),
            "https://archive.example.org/records/abc123defg?token=TOK"
        );
    }
}
