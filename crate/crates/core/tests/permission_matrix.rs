//! Every (actor class, version state, action) cell against a hand-written table.

mod common;

use archive_core::access::{evaluate, Action, LinkPermission};
use archive_core::archive::Actor;
use archive_core::model::Tier;
use common::{fixture, metadata};

const ACTOR_CLASSES: [&str; 8] = [
    "owner",
    "member-same",
    "member-other",
    "umbrella-only",
    "anonymous",
    "view-link",
    "edit-link-same",
    "edit-link-other",
];

const STATES: [&str; 3] = ["draft", "shared-community", "shared-consortium"];

/// Allowed actions per cell, written out from the sharing rules:
/// drafts are private to the owner (edit-link holders may work on them but
/// not share or mint), community members read community versions, any
/// consortium member reads consortium versions, only the owner edits,
/// and files of shared versions are frozen.
fn oracle(actor: &str, state: &str) -> &'static [&'static str] {
    const READ: &[&str] = &["read_metadata", "download_files", "view_stats"];
    const EDIT_LINK: &[&str] = &["read_metadata", "download_files", "view_stats", "edit_metadata", "create_version"];
    match (actor, state) {
        ("owner", "draft") => &[
            "read_metadata",
            "download_files",
            "edit_metadata",
            "modify_draft_files",
            "create_version",
            "share",
            "mint_link",
            "view_stats",
        ],
        ("edit-link-same", "draft") => &[
            "read_metadata",
            "download_files",
            "edit_metadata",
            "modify_draft_files",
            "create_version",
            "view_stats",
        ],
        (_, "draft") => &[],
        // a community-tier version can still be promoted to the consortium
        ("owner", "shared-community") => &[
            "read_metadata",
            "download_files",
            "edit_metadata",
            "create_version",
            "share",
            "mint_link",
            "view_stats",
        ],
        ("owner", "shared-consortium") => &[
            "read_metadata",
            "download_files",
            "edit_metadata",
            "create_version",
            "mint_link",
            "view_stats",
        ],
        ("member-same", _) => READ,
        ("view-link", _) => READ,
        ("edit-link-same", _) => EDIT_LINK,
        ("member-other" | "umbrella-only" | "edit-link-other", "shared-consortium") => READ,
        _ => &[],
    }
}

fn action_name(a: Action) -> &'static str {
    match a {
        Action::ReadMetadata => "read_metadata",
        Action::DownloadFiles => "download_files",
        Action::EditMetadata => "edit_metadata",
        Action::ModifyDraftFiles => "modify_draft_files",
        Action::CreateVersion => "create_version",
        Action::Share => "share",
        Action::MintLink => "mint_link",
        Action::ViewStats => "view_stats",
    }
}

#[test]
fn permission_matrix_matches_table() {
    let f = fixture(
        &["alpha", "beta"],
        &[
            ("own", &["alpha"]),
            ("same", &["alpha"]),
            ("same2", &["alpha"]),
            ("other", &["beta"]),
            ("umb", &[common::UMBRELLA]),
        ],
        1 << 30,
    );
    let a = &f.archive;
    let owner = Actor::user("own");
    let mut cells = 0;
    for state in STATES {
        let d = a.create_draft(&owner, metadata(state)).unwrap();
        match state {
            "shared-community" => {
                a.share(&owner, &d.record_id, Tier::Community, Some("alpha")).unwrap();
            }
            "shared-consortium" => {
                a.share(&owner, &d.record_id, Tier::Consortium, None).unwrap();
            }
            _ => {}
        }
        let view = a.mint_share_link(&owner, &d.record_id, LinkPermission::View, None).unwrap().link.token;
        let edit = a.mint_share_link(&owner, &d.record_id, LinkPermission::Edit, None).unwrap().link.token;
        let record = a.store().record(&d.record_id).unwrap().unwrap();
        let version = record.latest().unwrap();
        for class in ACTOR_CLASSES {
            let actor = match class {
                "owner" => Actor::user("own"),
                "member-same" => Actor::user("same"),
                "member-other" => Actor::user("other"),
                "umbrella-only" => Actor::user("umb"),
                "anonymous" => Actor::anonymous(),
                "view-link" => Actor::link(view.clone()),
                "edit-link-same" => Actor::user("same2").with_link(Some(edit.clone())),
                "edit-link-other" => Actor::user("other").with_link(Some(edit.clone())),
                _ => unreachable!(),
            };
            let subject = a.subject_for(&actor, &record).unwrap();
            let expected = oracle(class, state);
            for action in Action::ALL {
                let decision = evaluate(&subject, action, version);
                let want = expected.contains(&action_name(action));
                assert_eq!(
                    decision.allowed, want,
                    "{class} / {state} / {}: got {decision:?}",
                    action_name(action)
                );
                // a reason is present exactly when the decision is a denial
                assert_eq!(decision.reason.is_some(), !decision.allowed);
                cells += 1;
            }
        }
    }
    assert_eq!(cells, 8 * 3 * 8);
}

#[test]
fn deny_reasons() {
    use archive_core::error::DenyReason;
    let f = fixture(&["alpha", "beta"], &[("own", &["alpha"]), ("other", &["beta"])], 1 << 30);
    let a = &f.archive;
    let owner = Actor::user("own");
    let d = a.create_draft(&owner, metadata("r")).unwrap();
    let draft = a.store().record(&d.record_id).unwrap().unwrap();
    let anon = a.subject_for(&Actor::anonymous(), &draft).unwrap();
    assert_eq!(
        evaluate(&anon, Action::ReadMetadata, draft.latest().unwrap()).reason,
        Some(DenyReason::DraftPrivate)
    );
    a.share(&owner, &d.record_id, Tier::Community, Some("alpha")).unwrap();
    let shared = a.store().record(&d.record_id).unwrap().unwrap();
    let v = shared.latest().unwrap();
    let own = a.subject_for(&owner, &shared).unwrap();
    assert_eq!(evaluate(&own, Action::ModifyDraftFiles, v).reason, Some(DenyReason::ImmutableFiles));
    let other = a.subject_for(&Actor::user("other"), &shared).unwrap();
    assert_eq!(evaluate(&other, Action::ReadMetadata, v).reason, Some(DenyReason::NotMember));
}
