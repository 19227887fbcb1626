//! REST API for applications.
//!
//! Every route needs `Authorization: Bearer <token>`. Roles Admin and
//! Application are allowed, role User gets 403.

use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{FromRequestParts, Path as UrlPath, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::StreamExt;
use lm2m_core::auth::TokenKey;
use lm2m_core::contracts::records::Role;
use lm2m_core::ledger::now_ms;
use lm2m_core::wire::{Path, ResourceValue};
use serde::Serialize;
use serde_json::json;

use crate::{DeviceError, DmCore, Metrics, RegistrationEntry};

#[derive(Clone)]
pub struct ApiState {
    pub core: Arc<DmCore>,
    pub tokens: TokenKey,
}

pub fn router(state: ApiState) -> Router {
    let resource = "/api/clients/{ep}/{obj}/{inst}/{res}";
    Router::new()
        .route("/api/clients", get(list_clients))
        .route("/api/metrics", get(metrics))
        .route(resource, get(read).put(write))
        .route(&format!("{resource}/exec"), post(execute))
        .route(
            &format!("{resource}/observe"),
            post(observe).get(observe_stream).delete(cancel_observe),
        )
        .with_state(state)
}

#[derive(Debug)]
pub enum ApiError {
    Unauthenticated,
    Forbidden,
    NotFound(&'static str),
    Device(DeviceError),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match &self {
            ApiError::Unauthenticated => (StatusCode::UNAUTHORIZED, "missing or invalid token".to_owned()),
            ApiError::Forbidden => (StatusCode::FORBIDDEN, "role not permitted".to_owned()),
            ApiError::NotFound(what) => (StatusCode::NOT_FOUND, (*what).to_owned()),
            ApiError::Device(e) => (
                StatusCode::from_u16(e.http_status()).unwrap_or(StatusCode::BAD_GATEWAY),
                e.to_string(),
            ),
        };
        (status, Json(json!({ "error": msg }))).into_response()
    }
}

impl From<DeviceError> for ApiError {
    fn from(e: DeviceError) -> Self {
        ApiError::Device(e)
    }
}

/// An authenticated caller allowed to use the device API.
pub struct Caller {
    pub sub: String,
    pub role: Role,
    /// Identifies one API session; observations are keyed by it.
    pub session: String,
}

impl<S: Send + Sync> FromRequestParts<S> for Caller
where
    ApiState: axum::extract::FromRef<S>,
{
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        let state = <ApiState as axum::extract::FromRef<S>>::from_ref(state);
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or(ApiError::Unauthenticated)?;
        let claims = state.tokens.verify(token.trim()).map_err(|_| ApiError::Unauthenticated)?;
        if claims.role == Role::User {
            return Err(ApiError::Forbidden);
        }
        Ok(Caller {
            session: format!("{}@{}", claims.sub, claims.iat),
            sub: claims.sub,
            role: claims.role,
        })
    }
}

type ResourceParams = UrlPath<(String, u16, u16, u16)>;

fn split(UrlPath((ep, obj, inst, res)): ResourceParams) -> (String, Path) {
    (ep, Path::resource(obj, inst, res))
}

#[derive(Serialize)]
struct ReadBody {
    endpoint: String,
    path: Path,
    timestamp_ms: u64,
    value: ResourceValue,
}

async fn list_clients(_: Caller, State(s): State<ApiState>) -> Json<Vec<RegistrationEntry>> {
    Json(s.core.clients())
}

async fn metrics(_: Caller, State(s): State<ApiState>) -> Json<Metrics> {
    Json(s.core.metrics())
}

async fn read(_: Caller, State(s): State<ApiState>, p: ResourceParams) -> Result<Json<ReadBody>, ApiError> {
    let (endpoint, path) = split(p);
    let value = s.core.read(&endpoint, path).await?;
    Ok(Json(ReadBody {
        endpoint,
        path,
        timestamp_ms: now_ms(),
        value,
    }))
}

async fn write(
    _: Caller,
    State(s): State<ApiState>,
    p: ResourceParams,
    Json(value): Json<ResourceValue>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let (endpoint, path) = split(p);
    s.core.write(&endpoint, path, &value).await?;
    Ok(Json(json!({ "endpoint": endpoint, "path": path, "written": true })))
}

async fn execute(_: Caller, State(s): State<ApiState>, p: ResourceParams) -> Result<Json<serde_json::Value>, ApiError> {
    let (endpoint, path) = split(p);
    s.core.execute(&endpoint, path).await?;
    Ok(Json(json!({ "endpoint": endpoint, "path": path, "executed": true })))
}

async fn observe(c: Caller, State(s): State<ApiState>, p: ResourceParams) -> Result<Json<serde_json::Value>, ApiError> {
    let (endpoint, path) = split(p);
    let created = s.core.observe(&endpoint, path, &c.session).await?;
    Ok(Json(json!({ "endpoint": endpoint, "path": path, "created": created })))
}

/// Server-sent events, one `"<timestamp_ms> <value>"` line per notification.
async fn observe_stream(c: Caller, State(s): State<ApiState>, p: ResourceParams) -> Result<Response, ApiError> {
    let (endpoint, path) = split(p);
    let stream = s
        .core
        .observe_stream(&endpoint, path, &c.session)
        .ok_or(ApiError::NotFound("no such observation"))?;
    let events = stream.map(|n| Ok::<_, Infallible>(Event::default().data(format!("{} {}", n.timestamp_ms, n.value))));
    Ok(Sse::new(events).keep_alive(KeepAlive::default()).into_response())
}

async fn cancel_observe(c: Caller, State(s): State<ApiState>, p: ResourceParams) -> Result<Json<serde_json::Value>, ApiError> {
    let (endpoint, path) = split(p);
    if !s.core.cancel_observe(&endpoint, path, &c.session).await {
        return Err(ApiError::NotFound("no such observation"));
    }
    Ok(Json(json!({ "endpoint": endpoint, "path": path, "cancelled": true })))
}
