//! Request extractors: the calling actor, request metadata for stats, and
//! JSON/query/path wrappers whose rejections render as [`ApiError`].

use std::net::{IpAddr, Ipv4Addr, SocketAddr};

use archive_core::archive::Actor;
use archive_core::stats::RequesterContext;
use axum::extract::{ConnectInfo, FromRequest, FromRequestParts, Path, Query, Request};
use axum::http::header::{AUTHORIZATION, REFERER};
use axum::http::request::Parts;
use axum::http::HeaderMap;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::ApiError;
use crate::AppState;

/// Who is calling, resolved from the bearer token and the `token` query parameter.
#[derive(Clone, Debug)]
pub struct Caller {
    pub actor: Actor,
    pub meta: RequestMeta,
}

/// Request details used only for usage statistics.
#[derive(Clone, Debug)]
pub struct RequestMeta {
    pub remote_address: IpAddr,
    pub referrer: Option<String>,
}

impl Caller {
    pub fn requester(&self) -> RequesterContext {
        RequesterContext::new(
            self.actor.user.as_deref(),
            self.meta.remote_address,
            self.meta.referrer.clone(),
        )
    }

    pub fn is_anonymous(&self) -> bool {
        self.actor.user.is_none()
    }
}

#[derive(Deserialize)]
struct LinkParam {
    token: Option<String>,
}

/// `Some(secret)` for `Authorization: Bearer <secret>`, `None` without the header.
fn bearer(headers: &HeaderMap) -> Result<Option<&str>, ApiError> {
    let Some(value) = headers.get(AUTHORIZATION) else {
        return Ok(None);
    };
    let unauthenticated = || ApiError::from(archive_core::error::ArchiveError::Unauthenticated);
    let value = value.to_str().map_err(|_| unauthenticated())?;
    match value.split_once(' ') {
        Some((scheme, secret)) if scheme.eq_ignore_ascii_case("bearer") && !secret.trim().is_empty() => {
            Ok(Some(secret.trim()))
        }
        _ => Err(unauthenticated()),
    }
}

fn remote_address(parts: &Parts, trust_forwarded_for: bool) -> IpAddr {
    if trust_forwarded_for {
        let forwarded = parts
            .headers
            .get("x-forwarded-for")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.split(',').next())
            .and_then(|v| v.trim().parse().ok());
        if let Some(ip) = forwarded {
            return ip;
        }
    }
    parts
        .extensions
        .get::<ConnectInfo<SocketAddr>>()
        .map_or(IpAddr::V4(Ipv4Addr::LOCALHOST), |c| c.0.ip())
}

impl FromRequestParts<AppState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let link_token = Query::<LinkParam>::try_from_uri(&parts.uri)
            .map_err(ApiError::from)?
            .0
            .token
            .filter(|t| !t.is_empty());
        let user = match bearer(&parts.headers)? {
            Some(secret) => {
                let secret = secret.to_string();
                let account = state.run(move |a| a.authenticate(&secret)).await?;
                Some(account.user_id)
            }
            None => None,
        };
        let meta = RequestMeta {
            remote_address: remote_address(parts, state.archive.config().trust_forwarded_for),
            referrer: parts.headers.get(REFERER).and_then(|v| v.to_str().ok()).map(str::to_string),
        };
        Ok(Caller {
            actor: Actor { user, link_token },
            meta,
        })
    }
}

pub struct ApiJson<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let axum::Json(value) = axum::Json::<T>::from_request(req, state).await?;
        Ok(ApiJson(value))
    }
}

pub struct ApiQuery<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequestParts<S> for ApiQuery<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _state: &S) -> Result<Self, ApiError> {
        Ok(ApiQuery(Query::<T>::try_from_uri(&parts.uri)?.0))
    }
}

pub struct ApiPath<T>(pub T);

impl<T: DeserializeOwned + Send, S: Send + Sync> FromRequestParts<S> for ApiPath<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        Ok(ApiPath(Path::<T>::from_request_parts(parts, state).await?.0))
    }
}
