//! Request extractors. Every rejection is turned into an [`ApiError`].

use std::net::{IpAddr, SocketAddr};

use axum::body::Bytes;
use axum::extract::{ConnectInfo, FromRequest, FromRequestParts, Path, Request};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap};
use dlms_core::{Scope, UserContext};
use serde::de::DeserializeOwned;

use crate::catalog::Locale;
use crate::error::{ApiError, ErrorCode};
use crate::AppState;

pub const SESSION_COOKIE: &str = "dlms_session";

/// Address the request came from.
#[derive(Debug, Clone, Copy)]
pub struct ClientIp(pub IpAddr);

impl FromRequestParts<AppState> for ClientIp {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        if state.config.trust_forwarded_for {
            let forwarded = parts
                .headers
                .get_all("x-forwarded-for")
                .iter()
                .filter_map(|v| v.to_str().ok())
                .flat_map(|v| v.split(','))
                .last()
                .and_then(|s| s.trim().parse().ok());
            if let Some(ip) = forwarded {
                return Ok(ClientIp(ip));
            }
        }
        parts
            .extensions
            .get::<ConnectInfo<SocketAddr>>()
            .map(|ConnectInfo(addr)| ClientIp(addr.ip()))
            .ok_or_else(|| ApiError::new(ErrorCode::Internal))
    }
}

/// Session token from `Authorization: Bearer` or the session cookie.
pub fn session_token(headers: &HeaderMap) -> Option<String> {
    if let Some(auth) = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()) {
        if let Some(token) = auth.strip_prefix("Bearer ") {
            return Some(token.trim().to_owned());
        }
    }
    headers
        .get_all(header::COOKIE)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(';'))
        .find_map(|pair| {
            let (name, value) = pair.trim().split_once('=')?;
            (name == SESSION_COOKIE).then(|| value.to_owned())
        })
}

async fn authorize(parts: &mut Parts, state: &AppState, scope: Scope) -> Result<(UserContext, String), ApiError> {
    let ClientIp(ip) = ClientIp::from_request_parts(parts, state).await?;
    let token = session_token(&parts.headers).ok_or_else(|| ApiError::new(ErrorCode::InvalidSession))?;
    let ctx = state.registry.authorize(&token, scope, ip)?;
    Ok((ctx, token))
}

/// Any authenticated user, re-checked against the bound address.
pub struct Auth {
    pub user: UserContext,
    pub token: String,
}

impl FromRequestParts<AppState> for Auth {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let (user, token) = authorize(parts, state, Scope::Authenticated).await?;
        Ok(Auth { user, token })
    }
}

/// An authenticated admin.
pub struct AdminAuth(pub UserContext);

impl FromRequestParts<AppState> for AdminAuth {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let (user, _) = authorize(parts, state, Scope::Admin).await?;
        Ok(AdminAuth(user))
    }
}

/// Locale requested through `?lang=` or `Accept-Language`.
pub fn request_locale(uri_query: Option<&str>, headers: &HeaderMap, fallback: Locale) -> Locale {
    let from_query = uri_query.and_then(|q| {
        serde_urlencoded::from_str::<Vec<(String, String)>>(q)
            .ok()?
            .into_iter()
            .find(|(k, _)| k == "lang")
            .and_then(|(_, v)| v.parse().ok())
    });
    from_query
        .or_else(|| {
            headers
                .get(header::ACCEPT_LANGUAGE)
                .and_then(|v| v.to_str().ok())
                .and_then(Locale::from_accept_language)
        })
        .unwrap_or(fallback)
}

/// JSON body.
pub struct ApiJson<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        serde_json::from_slice(&bytes)
            .map(ApiJson)
            .map_err(ApiError::bad_request)
    }
}

/// Query string, ignoring the `lang` selector.
pub struct ApiQuery<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequestParts<S> for ApiQuery<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, ApiError> {
        let pairs: Vec<(String, String)> =
            serde_urlencoded::from_str(parts.uri.query().unwrap_or("")).map_err(ApiError::bad_request)?;
        let kept: Vec<_> = pairs.into_iter().filter(|(k, _)| k != "lang").collect();
        let text = serde_urlencoded::to_string(&kept).map_err(ApiError::bad_request)?;
        serde_urlencoded::from_str(&text)
            .map(ApiQuery)
            .map_err(|e| ApiError::with_detail(ErrorCode::InvalidQuery, e.to_string()))
    }
}

/// Path parameters.
pub struct ApiPath<T>(pub T);

impl<T: DeserializeOwned + Send, S: Send + Sync> FromRequestParts<S> for ApiPath<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        Path::<T>::from_request_parts(parts, state)
            .await
            .map(|Path(v)| ApiPath(v))
            .map_err(|_| ApiError::new(ErrorCode::NotFound))
    }
}

/// Raw request body, with size-limit failures reported as `TOO_LARGE`.
pub struct RawBody(pub Bytes);

impl<S: Send + Sync> FromRequest<S> for RawBody {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        Bytes::from_request(req, state).await.map(RawBody).map_err(|e| {
            if e.status() == axum::http::StatusCode::PAYLOAD_TOO_LARGE {
                ApiError::with_detail(ErrorCode::TooLarge, e.body_text())
            } else {
                ApiError::bad_request(e.body_text())
            }
        })
    }
}
