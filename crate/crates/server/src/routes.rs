//! Route table and handlers.

use std::io;

use archive_core::access::{ApiTokenInfo, LinkPermission};
use archive_core::archive::{MintedLink, MintedToken, RecordStats};
use archive_core::error::ArchiveError;
use archive_core::export::ExportFormat;
use archive_core::index::{SearchPage, SearchQuery, SortOrder, DEFAULT_PAGE_SIZE};
use archive_core::model::{Community, FileEntry, MetadataDocument, RecordVersion, ResourceType, Tier, UserAccount};
use archive_core::stats::UsageAggregate;
use axum::body::{Body, Bytes};
use axum::extract::State;
use axum::http::header::{CONTENT_DISPOSITION, CONTENT_LENGTH, CONTENT_TYPE};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use futures_util::TryStreamExt;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tokio_util::io::{ReaderStream, StreamReader, SyncIoBridge};

use crate::error::{ApiError, ApiResult};
use crate::extract::{ApiJson, ApiPath, ApiQuery, Caller};
use crate::AppState;

/// Response header carrying the manifest checksum of a downloaded file.
pub const CHECKSUM_HEADER: &str = "x-checksum";

/// Rejected uploads up to this size are read to the end before the error is sent.
pub const DRAIN_LIMIT: u64 = 64 << 20;

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/user", get(current_user))
        .route("/user/tokens", get(list_tokens).post(mint_token))
        .route("/user/tokens/{token_id}", delete(revoke_token))
        .route("/records", post(create_record))
        .route("/records/{id}", get(read_record))
        .route("/records/{id}/draft", put(update_draft).delete(discard_draft))
        .route("/records/{id}/draft/files/{name}", put(upload_file).delete(remove_file))
        .route("/records/{id}/files/{name}", get(download_file))
        .route("/records/{id}/actions/share", post(share_record))
        .route("/records/{id}/versions", get(list_versions).post(new_version))
        .route("/records/{id}/versions/{v}", get(read_version))
        .route("/records/{id}/versions/{v}/stats", get(version_stats))
        .route("/records/{id}/stats", get(record_stats))
        .route("/records/{id}/links", get(list_links).post(mint_link))
        .route("/links/{token}", delete(revoke_link))
        .route("/records/{id}/export/{format}", get(export_record))
        .route("/search", get(search))
        .route("/communities", get(communities))
        .route("/communities/{slug}/members", post(add_member))
        .route("/communities/{slug}/members/{user}", delete(remove_member));
    Router::new()
        .nest("/api", api)
        .fallback(|| async { ApiError::not_found() })
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method-not-allowed", "method not allowed")
        })
        .with_state(state)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

fn require_user(caller: &Caller) -> ApiResult<String> {
    caller.actor.user.clone().ok_or_else(|| ArchiveError::Unauthenticated.into())
}

/// Parses a JSON body, or returns the default for an empty one.
fn json_or_default<T: DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

#[derive(Default, Deserialize)]
struct VersionParam {
    version: Option<u32>,
}

// ---- account -----------------------------------------------------------------------

async fn current_user(State(state): State<AppState>, caller: Caller) -> ApiResult<Json<UserAccount>> {
    let user = require_user(&caller)?;
    Ok(Json(state.run(move |a| a.user(&user)).await?))
}

#[derive(Deserialize)]
struct TokenRequest {
    label: String,
}

async fn mint_token(
    State(state): State<AppState>,
    caller: Caller,
    ApiJson(req): ApiJson<TokenRequest>,
) -> ApiResult<(StatusCode, Json<MintedToken>)> {
    let user = require_user(&caller)?;
    let token = state.run(move |a| a.mint_api_token(&user, &req.label)).await?;
    Ok((StatusCode::CREATED, Json(token)))
}

async fn list_tokens(State(state): State<AppState>, caller: Caller) -> ApiResult<Json<Vec<ApiTokenInfo>>> {
    let user = require_user(&caller)?;
    Ok(Json(state.run(move |a| a.api_tokens(&user)).await?))
}

async fn revoke_token(
    State(state): State<AppState>,
    caller: Caller,
    ApiPath(token_id): ApiPath<String>,
) -> ApiResult<StatusCode> {
    let user = require_user(&caller)?;
    state.run(move |a| a.revoke_api_token(&user, &token_id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

// ---- records and versions -------------------------------------------------------------

async fn create_record(
    State(state): State<AppState>,
    caller: Caller,
    ApiJson(metadata): ApiJson<MetadataDocument>,
) -> ApiResult<(StatusCode, Json<RecordVersion>)> {
    let v = state.run(move |a| a.create_draft(&caller.actor, metadata)).await?;
    Ok((StatusCode::CREATED, Json(v)))
}

/// Reads a version and records one view event for shared versions.
async fn read_and_count(state: &AppState, caller: Caller, id: String, index: Option<u32>) -> ApiResult<Json<RecordVersion>> {
    let actor = caller.actor.clone();
    let v = state.run(move |a| a.read_version(&actor, &id, index)).await?;
    if v.is_shared() {
        let version_id = v.version_id.clone();
        let ctx = caller.requester();
        state.record(move |a| a.ingest_view(&version_id, ctx));
    }
    Ok(Json(v))
}

async fn read_record(
    State(state): State<AppState>,
    caller: Caller,
    ApiPath(id): ApiPath<String>,
) -> ApiResult<Json<RecordVersion>> {
    read_and_count(&state, caller, id, None).await
}

async fn read_version(
    State(state): State<AppState>,
    caller: Caller,
    ApiPath((id, v)): ApiPath<(String, u32)>,
) -> ApiResult<Json<RecordVersion>> {
    read_and_count(&state, caller, id, Some(v)).await
}

async fn list_versions(
    State(state): State<AppState>,
    caller: Caller,
    ApiPath(id): ApiPath<String>,
) -> ApiResult<Json<Vec<RecordVersion>>> {
    Ok(Json(state.run(move |a| a.list_versions(&caller.actor, &id)).await?))
}

async fn update_draft(
    State(state): State<AppState>,
    caller: Caller,
    ApiPath(id): ApiPath<String>,
    ApiJson(metadata): ApiJson<MetadataDocument>,
) -> ApiResult<Json<RecordVersion>> {
    Ok(Json(state.run(move |a| a.update_metadata(&caller.actor, &id, None, metadata)).await?))
}

async fn discard_draft(
    State(state): State<AppState>,
    caller: Caller,
    ApiPath(id): ApiPath<String>,
) -> ApiResult<StatusCode> {
    state.run(move |a| a.discard_draft(&caller.actor, &id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct ShareRequest {
    tier: Tier,
    community: Option<String>,
}

async fn share_record(
    State(state): State<AppState>,
    caller: Caller,
    ApiPath(id): ApiPath<String>,
    ApiJson(req): ApiJson<ShareRequest>,
) -> ApiResult<Json<RecordVersion>> {
    Ok(Json(
        state
            .run(move |a| a.share(&caller.actor, &id, req.tier, req.community.as_deref()))
            .await?,
    ))
}

#[derive(Default, Deserialize)]
struct NewVersionRequest {
    #[serde(default)]
    import_files: bool,
}

async fn new_version(
    State(state): State<AppState>,
    caller: Caller,
    ApiPath(id): ApiPath<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<RecordVersion>)> {
    let req: NewVersionRequest = json_or_default(&body)?;
    let v = state.run(move |a| a.new_version(&caller.actor, &id, req.import_files)).await?;
    Ok((StatusCode::CREATED, Json(v)))
}

// ---- files ----------------------------------------------------------------------------

async fn upload_file(
    State(state): State<AppState>,
    caller: Caller,
    ApiPath((id, name)): ApiPath<(String, String)>,
    headers: HeaderMap,
    body: Body,
) -> ApiResult<(StatusCode, Json<FileEntry>)> {
    let declared = headers
        .get(CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok())
        .ok_or_else(|| ApiError::new(StatusCode::LENGTH_REQUIRED, "length-required", "Content-Length is required"))?;
    let reader = StreamReader::new(body.into_data_stream().map_err(io::Error::other));
    let bridge = SyncIoBridge::new(reader);
    let entry = state
        .run(move |a| {
            let mut bridge = bridge;
            let result = a.attach_file(&caller.actor, &id, &name, Some(declared), &mut bridge);
            if result.is_err() && declared <= DRAIN_LIMIT {
                // read the rest so the client sees the error instead of a reset connection
                let _ = io::copy(&mut bridge, &mut io::sink());
            }
            result
        })
        .await?;
    Ok((StatusCode::CREATED, Json(entry)))
}

async fn remove_file(
    State(state): State<AppState>,
    caller: Caller,
    ApiPath((id, name)): ApiPath<(String, String)>,
) -> ApiResult<StatusCode> {
    state.run(move |a| a.remove_file(&caller.actor, &id, &name)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn download_file(
    State(state): State<AppState>,
    caller: Caller,
    ApiPath((id, name)): ApiPath<(String, String)>,
    ApiQuery(q): ApiQuery<VersionParam>,
) -> ApiResult<Response> {
    let actor = caller.actor.clone();
    let (version, entry, file) = state.run(move |a| a.open_file(&actor, &id, q.version, &name)).await?;
    if version.is_shared() {
        let (version_id, file_name, ctx) = (version.version_id.clone(), entry.name.clone(), caller.requester());
        state.record(move |a| a.ingest_download(&version_id, &file_name, ctx));
    }
    let body = Body::from_stream(ReaderStream::new(tokio::fs::File::from_std(file)));
    let disposition = format!("attachment; filename=\"{}\"", entry.name.replace(['"', '\\'], "_"));
    Response::builder()
        .header(CONTENT_TYPE, "application/octet-stream")
        .header(CONTENT_LENGTH, entry.size)
        .header(CONTENT_DISPOSITION, disposition)
        .header(CHECKSUM_HEADER, entry.checksum)
        .body(body)
        .map_err(|_| ApiError::internal())
}

// ---- share links ----------------------------------------------------------------------

#[derive(Deserialize)]
struct LinkRequest {
    permission: LinkPermission,
    expires_at: Option<DateTime<Utc>>,
}

async fn mint_link(
    State(state): State<AppState>,
    caller: Caller,
    ApiPath(id): ApiPath<String>,
    ApiJson(req): ApiJson<LinkRequest>,
) -> ApiResult<(StatusCode, Json<MintedLink>)> {
    let link = state
        .run(move |a| a.mint_share_link(&caller.actor, &id, req.permission, req.expires_at))
        .await?;
    Ok((StatusCode::CREATED, Json(link)))
}

async fn list_links(
    State(state): State<AppState>,
    caller: Caller,
    ApiPath(id): ApiPath<String>,
) -> ApiResult<Json<Vec<MintedLink>>> {
    Ok(Json(state.run(move |a| a.share_links(&caller.actor, &id)).await?))
}

async fn revoke_link(
    State(state): State<AppState>,
    caller: Caller,
    ApiPath(token): ApiPath<String>,
) -> ApiResult<StatusCode> {
    state.run(move |a| a.revoke_share_link(&caller.actor, &token)).await?;
    Ok(StatusCode::NO_CONTENT)
}

// ---- export and stats -------------------------------------------------------------------

async fn export_record(
    State(state): State<AppState>,
    caller: Caller,
    ApiPath((id, format)): ApiPath<(String, String)>,
    ApiQuery(q): ApiQuery<VersionParam>,
) -> ApiResult<Response> {
    let format = ExportFormat::parse(&format).map_err(ApiError::from)?;
    let (version, doc) = state.run(move |a| a.export(&caller.actor, &id, q.version, format)).await?;
    let filename = format!("{}.{}", version.version_id, format.file_extension());
    Ok((
        [
            (CONTENT_TYPE, doc.media_type.to_string()),
            (CONTENT_DISPOSITION, format!("inline; filename=\"{filename}\"")),
        ],
        doc.bytes,
    )
        .into_response())
}

async fn record_stats(
    State(state): State<AppState>,
    caller: Caller,
    ApiPath(id): ApiPath<String>,
) -> ApiResult<Json<RecordStats>> {
    Ok(Json(state.run(move |a| a.stats_for_record(&caller.actor, &id)).await?))
}

async fn version_stats(
    State(state): State<AppState>,
    caller: Caller,
    ApiPath((id, v)): ApiPath<(String, u32)>,
) -> ApiResult<Json<UsageAggregate>> {
    Ok(Json(state.run(move |a| a.stats_for_version(&caller.actor, &id, v)).await?))
}

// ---- search and communities ---------------------------------------------------------------

#[derive(Default, Deserialize)]
struct SearchParams {
    q: Option<String>,
    community: Option<String>,
    #[serde(rename = "type")]
    resource_type: Option<String>,
    /// Comma-separated; every keyword must match.
    keywords: Option<String>,
    owner: Option<String>,
    sort: Option<String>,
    page: Option<usize>,
    size: Option<usize>,
}

impl SearchParams {
    fn into_query(self) -> ApiResult<SearchQuery> {
        let mut q = SearchQuery::text(self.q.unwrap_or_default());
        q.filters.community = self.community.filter(|c| !c.is_empty());
        if let Some(t) = self.resource_type.filter(|t| !t.is_empty()) {
            q.filters.resource_type =
                Some(ResourceType::parse(&t).ok_or_else(|| ApiError::bad_request(format!("unknown type {t:?}")))?);
        }
        q.filters.keywords = self
            .keywords
            .unwrap_or_default()
            .split(',')
            .map(str::trim)
            .filter(|k| !k.is_empty())
            .map(str::to_string)
            .collect();
        q.filters.owner_me = match self.owner.as_deref() {
            None | Some("") => false,
            Some("me") => true,
            Some(other) => return Err(ApiError::bad_request(format!("owner must be \"me\", got {other:?}"))),
        };
        if let Some(s) = self.sort.filter(|s| !s.is_empty()) {
            q.sort = SortOrder::parse(&s).ok_or_else(|| ApiError::bad_request(format!("unknown sort {s:?}")))?;
        }
        q.page = self.page.unwrap_or(1);
        q.page_size = self.size.unwrap_or(DEFAULT_PAGE_SIZE);
        Ok(q)
    }
}

async fn search(
    State(state): State<AppState>,
    caller: Caller,
    ApiQuery(params): ApiQuery<SearchParams>,
) -> ApiResult<Json<SearchPage>> {
    let query = params.into_query()?;
    Ok(Json(state.run(move |a| a.search(&caller.actor, &query)).await?))
}

async fn communities(State(state): State<AppState>) -> Json<Vec<Community>> {
    Json(state.archive.communities())
}

#[derive(Deserialize)]
struct MemberRequest {
    user: String,
}

async fn add_member(
    State(state): State<AppState>,
    caller: Caller,
    ApiPath(slug): ApiPath<String>,
    ApiJson(req): ApiJson<MemberRequest>,
) -> ApiResult<Json<UserAccount>> {
    Ok(Json(state.run(move |a| a.add_member(&caller.actor, &slug, &req.user)).await?))
}

async fn remove_member(
    State(state): State<AppState>,
    caller: Caller,
    ApiPath((slug, user)): ApiPath<(String, String)>,
) -> ApiResult<Json<UserAccount>> {
    Ok(Json(state.run(move |a| a.remove_member(&caller.actor, &slug, &user)).await?))
}
